"""Offline checker: one ascending sweep over start/commit events."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .history import (
    INITIAL_VALUE,
    EventKind,
    History,
    Transaction,
    event_sequence,
    require_valid,
)
from .violations import (
    Report,
    Violation,
    ext_violation,
    int_violation,
    noconflict_violation,
    session_violation,
    tsorder_violation,
)


@dataclass(frozen=True)
class GcPolicy:
    """``every=None`` never collects; ``every=n`` collects after every n commits."""

    every: Optional[int] = None

    def __post_init__(self):
        if self.every is not None and self.every < 1:
            raise ValueError("GC interval must be >= 1")

    @classmethod
    def never(cls) -> "GcPolicy":
        return cls(None)

    @classmethod
    def every_n(cls, n: int) -> "GcPolicy":
        return cls(n)

    @classmethod
    def parse(cls, text: str) -> "GcPolicy":
        if text == "never":
            return cls.never()
        m = re.fullmatch(r"every:(\d+)", text)
        if not m:
            raise ValueError(f"bad GC policy {text!r} (expected 'never' or 'every:N')")
        return cls(int(m.group(1)))

    def __str__(self) -> str:
        return "never" if self.every is None else f"every:{self.every}"


@dataclass
class CheckerState:
    txns: dict[int, Transaction]
    frontier: dict[str, object] = field(default_factory=dict)
    ongoing: dict[str, set[int]] = field(default_factory=dict)
    int_val: dict[int, dict[str, object]] = field(default_factory=dict)
    ext_val: dict[int, dict[str, object]] = field(default_factory=dict)
    # committed txns whose ext_val and record await the next GC point
    pending_gc: list[int] = field(default_factory=list)
    gc_runs: int = 0


def gc_step(state: CheckerState, committed: Transaction) -> None:
    """Drop ``int_val`` now; queue ``ext_val`` and the record for the next GC point."""
    state.int_val.pop(committed.tid, None)
    state.pending_gc.append(committed.tid)


def _collect(state: CheckerState) -> None:
    for tid in state.pending_gc:
        state.ext_val.pop(tid, None)
        state.txns.pop(tid, None)
    state.pending_gc.clear()
    state.gc_runs += 1


def _check_reads(t: Transaction, int_val: dict, lookup, out: list[Violation]) -> None:
    """Int/Ext for ``t``'s reads; ``lookup(key)`` gives the snapshot value."""
    for i, op in enumerate(t.ops):
        key, v = op.key, op.value
        if op.is_read:
            if key not in int_val:
                expected = lookup(key)
                if v != expected:
                    out.append(ext_violation(t.tid, t.commit_ts, key, i, v, expected))
            elif int_val[key] != v:
                out.append(int_violation(t.tid, t.commit_ts, key, i, v, int_val[key]))
        int_val[key] = v


def check_si(h: History, gc: GcPolicy = GcPolicy()) -> Report:
    require_valid(h)
    st = CheckerState(txns={t.tid: t for t in h})
    out: list[Violation] = []
    frontier, ongoing = st.frontier, st.ongoing
    committed = 0
    for ts, kind, tid in event_sequence(h):
        t = st.txns[tid]
        if kind is EventKind.START:
            pred = h.predecessor(t)
            if pred is not None and pred.commit_ts > t.start_ts:
                out.append(session_violation(tid, t.commit_ts, t.sid, t.sno, pred.commit_ts, t.start_ts))
            iv = st.int_val.setdefault(tid, {})
            _check_reads(t, iv, lambda k: frontier.get(k, INITIAL_VALUE), out)
            if t.wkey:
                st.ext_val[tid] = dict(t.ext_val)
                for key in t.wkey:
                    ongoing.setdefault(key, set()).add(tid)
        else:
            if t.start_ts > t.commit_ts:
                out.append(tsorder_violation(tid, t.start_ts, t.commit_ts))
            ev = st.ext_val.get(tid, {})
            for key in t.wkey:
                others = ongoing[key]
                others.discard(tid)
                if others:
                    out.append(noconflict_violation(tid, t.commit_ts, key, others))
                frontier[key] = ev[key]
            gc_step(st, t)
            committed += 1
            if gc.every is not None and committed % gc.every == 0:
                _collect(st)
    return Report.of(out, "si")


def check_ser(h: History, gc: GcPolicy = GcPolicy()) -> Report:
    """Commit-order replay: Int/Ext against the frontier, starts ignored."""
    require_valid(h)
    st = CheckerState(txns={t.tid: t for t in h})
    out: list[Violation] = []
    frontier = st.frontier
    committed = 0
    for t in sorted(h, key=lambda t: t.commit_ts):
        pred = h.predecessor(t)
        if pred is not None and pred.commit_ts > t.commit_ts:
            out.append(session_violation(t.tid, t.commit_ts, t.sid, t.sno, pred.commit_ts, t.commit_ts))
        iv = st.int_val.setdefault(t.tid, {})
        _check_reads(t, iv, lambda k: frontier.get(k, INITIAL_VALUE), out)
        st.ext_val[t.tid] = ev = dict(t.ext_val)
        frontier.update(ev)
        gc_step(st, t)
        committed += 1
        if gc.every is not None and committed % gc.every == 0:
            _collect(st)
    return Report.of(out, "ser")
