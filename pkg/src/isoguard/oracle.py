"""Brute-force reference checkers.

Every axiom is evaluated straight from the timestamp-derived VIS/AR
relations by scanning the whole history, with no incremental state. The
point is to be obviously right, not fast: O(N^2 * M).
"""

from __future__ import annotations

from typing import Optional

from .history import INITIAL_VALUE, History, Transaction, ar_less, require_valid, vis
from .violations import (
    Report,
    Violation,
    ext_violation,
    int_violation,
    noconflict_violation,
    session_violation,
    tsorder_violation,
)


def _session_predecessor(h: History, t: Transaction) -> Optional[Transaction]:
    if t.sno == 0:
        return None
    for s in h:
        if s.sid == t.sid and s.sno == t.sno - 1:
            return s
    return None


def _last_write(t: Transaction, key: str):
    for op in reversed(t.ops):
        if op.is_write and op.key == key:
            return op.value
    raise KeyError(key)


def _snapshot_value(h: History, t: Transaction, key: str):
    """Value of ``key`` written by the AR-last transaction visible to ``t``."""
    best = None
    for s in h:
        if s is t or key not in s.wkey or not vis(s, t):
            continue
        if best is None or ar_less(best, s):
            best = s
    return INITIAL_VALUE if best is None else _last_write(best, key)


def _int_and_ext(t: Transaction, external, out: list[Violation]) -> None:
    last: dict = {}
    for i, op in enumerate(t.ops):
        if op.is_read:
            if op.key in last:
                if op.value != last[op.key]:
                    out.append(int_violation(t.tid, t.commit_ts, op.key, i, op.value, last[op.key]))
            else:
                expected = external(op.key)
                if op.value != expected:
                    out.append(ext_violation(t.tid, t.commit_ts, op.key, i, op.value, expected))
        last[op.key] = op.value


def _overlap(a: Transaction, b: Transaction) -> bool:
    return max(a.start_ts, b.start_ts) <= min(a.commit_ts, b.commit_ts)


def oracle_check_si(h: History) -> Report:
    require_valid(h)
    out: list[Violation] = []
    for t in h:
        if t.start_ts > t.commit_ts:
            out.append(tsorder_violation(t.tid, t.start_ts, t.commit_ts))
        pred = _session_predecessor(h, t)
        if pred is not None and not vis(pred, t):
            out.append(session_violation(t.tid, t.commit_ts, t.sid, t.sno, pred.commit_ts, t.start_ts))
        _int_and_ext(t, lambda key: _snapshot_value(h, t, key), out)
        for key in sorted(t.wkey):
            peers = [s.tid for s in h
                     if s is not t and key in s.wkey and _overlap(s, t) and ar_less(t, s)]
            if peers:
                out.append(noconflict_violation(t.tid, t.commit_ts, key, peers))
    return Report.of(out, "si")


def oracle_check_ser(h: History) -> Report:
    """Replay whole transactions in commit order against one map."""
    require_valid(h)
    out: list[Violation] = []
    state: dict = {}
    for t in sorted(h, key=lambda t: t.commit_ts):
        pred = _session_predecessor(h, t)
        if pred is not None and not ar_less(pred, t):
            out.append(session_violation(t.tid, t.commit_ts, t.sid, t.sno, pred.commit_ts, t.commit_ts))
        _int_and_ext(t, lambda key: state.get(key, INITIAL_VALUE), out)
        for op in t.ops:
            if op.is_write:
                state[op.key] = op.value
    return Report.of(out, "ser")
