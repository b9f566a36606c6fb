"""Online checker: incremental SI/SER checking of out-of-order arrivals.

Transactions arrive one at a time in any order that preserves each
session's order. On each arrival the checker

1. checks Session and Int for the newcomer and evaluates its external
   reads against the versioned frontier (interim, not yet reported);
2. (SI only) re-sweeps the events inside the newcomer's lifetime to rebuild
   the versioned ongoing-writer sets and re-report write conflicts;
3. re-evaluates external reads of transactions positioned after the
   newcomer's commit on keys it wrote, until every such key is overwritten.

An external-read verdict is reported only when the owner's timer expires.
Timers, arrivals and GC all run on one logical consumer.
"""

from __future__ import annotations

import enum
import heapq
import logging
import re
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional

from sortedcontainers import SortedList

from .history import (
    INITIAL_VALUE,
    EventKind,
    Transaction,
    dumps_transaction,
    events_of,
    parse_transaction,
)
from .versioned import SpillError, TidSetCodec, ValueCodec, VersionedMap
from .violations import (
    Report,
    Violation,
    ext_violation,
    int_violation,
    noconflict_violation,
    session_violation,
    tsorder_violation,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 5000.0


class DuplicateTransaction(ValueError):
    pass


class EventType(str, enum.Enum):
    INTERIM_EXT = "InterimExtVerdict"
    FINAL_EXT = "FinalExtViolation"
    INT = "IntViolation"
    SESSION = "SessionViolation"
    NOCONFLICT = "NoConflictViolation"
    TSORDER = "TsOrderError"
    FLIPFLOP = "FlipFlop"


@dataclass(frozen=True)
class CheckerEvent:
    kind: EventType
    tid: int
    at: float
    key: Optional[str] = None
    op_index: Optional[int] = None
    flag: Optional[bool] = None  # interim verdict, or the new state of a flip
    previous: Optional[bool] = None  # flips only
    violation: Optional[Violation] = None

    def to_dict(self) -> dict:
        d = {"event": self.kind.value, "tid": self.tid, "at": self.at}
        if self.key is not None:
            d["key"] = self.key
        if self.op_index is not None:
            d["op_index"] = self.op_index
        if self.flag is not None:
            d["flag"] = self.flag
        if self.previous is not None:
            d["from"] = self.previous
        if self.violation is not None:
            d["violation"] = self.violation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CheckerEvent":
        viol = d.get("violation")
        return cls(EventType(d["event"]), d["tid"], d["at"], d.get("key"), d.get("op_index"),
                   d.get("flag"), d.get("from"),
                   Violation.from_dict(viol) if viol is not None else None)


@dataclass(frozen=True)
class OnlineGc:
    """When to spill: ``never``, ``threshold:N`` or ``cap:N`` resident transactions.

    ``threshold`` spills the older half once N transactions are resident;
    ``cap`` spills just enough to get back under the cap, so it fires often.
    """

    mode: str = "never"
    limit: int = 0

    def __post_init__(self):
        if self.mode not in ("never", "threshold", "cap"):
            raise ValueError(f"unknown GC mode {self.mode!r}")
        if self.mode != "never" and self.limit < 2:
            raise ValueError("GC limit must be >= 2")

    @classmethod
    def parse(cls, text: str) -> "OnlineGc":
        if text == "never":
            return cls()
        m = re.fullmatch(r"(threshold|cap):(\d+)", text)
        if not m:
            raise ValueError(f"bad GC setting {text!r} (expected never, threshold:N or cap:N)")
        return cls(m.group(1), int(m.group(2)))

    def spill_count(self, resident: int) -> int:
        if self.mode == "never" or resident < self.limit:
            return 0
        if self.mode == "threshold":
            return resident - self.limit // 2
        return max(1, resident - (self.limit * 9) // 10)

    def __str__(self) -> str:
        return "never" if self.mode == "never" else f"{self.mode}:{self.limit}"


@dataclass
class _Verdict:
    """Interim external-read verdicts of a transaction whose timer is pending."""

    start_ts: int
    commit_ts: int
    reads: dict[int, list]  # op_index -> [key, observed, ok]

    @property
    def ok(self) -> bool:
        return all(r[2] for r in self.reads.values())


@dataclass
class _TxnSegment:
    seq: int
    path: Path
    low: int
    high: int


class _TxnSpill:
    """Spilled transaction records, kept as canonical JSON lines."""

    def __init__(self, directory: Path, cache_size: int = 8):
        self.directory = directory
        self.segments: list[_TxnSegment] = []
        self._cache: dict[int, list[tuple]] = {}
        self._cache_order: list[int] = []
        self._cache_size = cache_size
        self.reloads = 0

    def spill(self, txns: list[Transaction]) -> None:
        if not txns:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        low = min(t.start_ts for t in txns)
        high = max(t.commit_ts for t in txns)
        seq = len(self.segments)
        path = self.directory / f"spill-{low}-{high}.seg"
        if path.exists():
            path = self.directory / f"spill-{low}-{high}.{seq}.seg"
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.writelines(dumps_transaction(t) + "\n" for t in txns)
        except OSError as exc:
            raise SpillError(f"cannot write spill segment {path}: {exc}") from exc
        self.segments.append(_TxnSegment(seq, path, low, high))

    def _load(self, seg: _TxnSegment) -> list[tuple]:
        events = self._cache.get(seg.seq)
        if events is not None:
            return events
        self.reloads += 1
        events = []
        try:
            with open(seg.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    t = parse_transaction(line, lineno)
                    for ev in events_of(t):
                        events.append((ev.ts, ev.kind, ev.tid, t))
        except (OSError, ValueError) as exc:
            raise SpillError(f"corrupt spill segment {seg.path}: {exc}") from exc
        events.sort(key=lambda e: e[:3])
        self._cache[seg.seq] = events
        self._cache_order.append(seg.seq)
        if len(self._cache_order) > self._cache_size:
            self._cache.pop(self._cache_order.pop(0), None)
        return events

    def events_between(self, lo: int, hi: Optional[int]) -> list[tuple]:
        """Spilled events with ``lo <= ts <= hi`` (``hi=None`` is unbounded)."""
        out = []
        for seg in self.segments:
            if seg.high < lo or (hi is not None and seg.low > hi):
                continue
            out.extend(e for e in self._load(seg) if e[0] >= lo and (hi is None or e[0] <= hi))
        out.sort(key=lambda e: e[:3])
        return out


def _wall_ms() -> float:
    return time.monotonic() * 1000.0


class Aion:
    """Online SI (``mode="si"``) or SER (``mode="ser"``) checker.

    ``clock`` returns the current time in milliseconds; pass a virtual clock
    in tests. Events are returned from each entry point and also handed to
    ``sink`` when one is given.
    """

    def __init__(self, mode: str = "si", timeout_ms: float = DEFAULT_TIMEOUT_MS,
                 clock: Optional[Callable[[], float]] = None,
                 sink: Optional[Callable[[CheckerEvent], None]] = None,
                 gc: OnlineGc = OnlineGc(), spill_dir=None):
        if mode not in ("si", "ser"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.timeout_ms = timeout_ms
        self.clock = clock or _wall_ms
        self.sink = sink
        self.gc = gc
        self._spill_root = Path(spill_dir) if spill_dir is not None else None

        self._txns: dict[int, Transaction] = {}
        self._index: SortedList = SortedList()
        self._frontier: VersionedMap = VersionedMap(INITIAL_VALUE, ValueCodec())
        self._ongoing: VersionedMap = VersionedMap(frozenset(), TidSetCodec())
        self._txn_spill: Optional[_TxnSpill] = None
        self._last: dict[int, tuple[int, int]] = {}  # sid -> (sno, commit_ts)
        self._known: set[int] = set()
        self._pending: dict[int, _Verdict] = {}
        self._finalized: set[int] = set()
        self._timers: list[tuple[float, int, int]] = []
        self._timer_seq = 0
        self._final: list[Violation] = []
        self._noconflict: dict[tuple[int, str], Violation] = {}
        self.gc_runs = 0
        self.received = 0

    # -- public entry points ----------------------------------------------------

    def on_transaction(self, t: Transaction) -> list[CheckerEvent]:
        if t.tid in self._known:
            raise DuplicateTransaction(f"transaction {t.tid} already received")
        self._known.add(t.tid)
        self.received += 1
        now = self.clock()
        out: list[CheckerEvent] = []
        self._arm_timer(t.tid, now)
        self._step_own_checks(t, now, out)
        self._txns[t.tid] = t
        for ev in events_of(t):
            self._index.add(ev)
        if self.mode == "si":
            self._recheck_conflicts(t, now, out)
        self._recheck_ext(t, now, out)
        self._maybe_gc()
        return self._emit(out)

    on_transaction_si = on_transaction

    def on_transaction_ser(self, t: Transaction) -> list[CheckerEvent]:
        if self.mode != "ser":
            raise RuntimeError("checker was not created in SER mode")
        return self.on_transaction(t)

    def on_timeout(self, tid: int) -> list[CheckerEvent]:
        verdict = self._pending.pop(tid, None)
        if verdict is None:
            if tid not in self._finalized:
                log.warning("timeout for unknown transaction %s ignored", tid)
            return []
        self._finalized.add(tid)
        now = self.clock()
        out = []
        pos = verdict.start_ts if self.mode == "si" else verdict.commit_ts
        for op_index, (key, observed, ok) in sorted(verdict.reads.items()):
            if ok:
                continue
            expected = self._frontier.floor_lookup(key, pos)
            v = ext_violation(tid, verdict.commit_ts, key, op_index, observed, expected)
            self._final.append(v)
            out.append(CheckerEvent(EventType.FINAL_EXT, tid, now, key, op_index, violation=v))
        return self._emit(out)

    def next_deadline(self) -> Optional[float]:
        return self._timers[0][0] if self._timers else None

    def advance(self, now: float) -> list[CheckerEvent]:
        """Fire every timer due at or before ``now``, earliest first."""
        out = []
        while self._timers and self._timers[0][0] <= now:
            _, _, tid = heapq.heappop(self._timers)
            out.extend(self.on_timeout(tid))
        return out

    def finish(self) -> list[CheckerEvent]:
        """Fire all outstanding timers."""
        return self.advance(float("inf"))

    def report(self) -> Report:
        return Report.of([*self._final, *self._noconflict.values()], self.mode)

    @property
    def resident(self) -> int:
        return len(self._txns)

    @property
    def pending(self) -> int:
        return len(self._pending)

    # -- step 1: the newcomer itself ----------------------------------------------

    def _pos(self, t) -> int:
        return t.start_ts if self.mode == "si" else t.commit_ts

    def _step_own_checks(self, t: Transaction, now: float, out: list) -> None:
        tid = t.tid
        if self.mode == "si" and t.start_ts > t.commit_ts:
            v = tsorder_violation(tid, t.start_ts, t.commit_ts)
            self._final.append(v)
            out.append(CheckerEvent(EventType.TSORDER, tid, now, violation=v))

        last_sno, last_cts = self._last.get(t.sid, (-1, 0))
        bound = self._pos(t)
        if t.sno != last_sno + 1:
            v = session_violation(tid, t.commit_ts, t.sid, t.sno, last_cts, bound)
            v = Violation(v.kind, v.subject_tid, v.commit_ts,
                          detail=f"session {t.sid}: sno {t.sno} arrived after sno {last_sno}")
        elif t.sno > 0 and last_cts > bound:
            v = session_violation(tid, t.commit_ts, t.sid, t.sno, last_cts, bound)
        else:
            v = None
        if v is not None:
            self._final.append(v)
            out.append(CheckerEvent(EventType.SESSION, tid, now, violation=v))
        self._last[t.sid] = (t.sno, t.commit_ts)

        seen: dict = {}
        reads: dict[int, list] = {}
        pos = self._pos(t)
        for i, op in enumerate(t.ops):
            key, value = op.key, op.value
            if op.is_read:
                if key not in seen:
                    ok = value == self._frontier.floor_lookup(key, pos)
                    reads[i] = [key, value, ok]
                elif seen[key] != value:
                    v = int_violation(tid, t.commit_ts, key, i, value, seen[key])
                    self._final.append(v)
                    out.append(CheckerEvent(EventType.INT, tid, now, key, i, violation=v))
            seen[key] = value
        verdict = _Verdict(t.start_ts, t.commit_ts, reads)
        self._pending[tid] = verdict
        out.append(CheckerEvent(EventType.INTERIM_EXT, tid, now, flag=verdict.ok))

        for key, value in t.ext_val.items():
            self._frontier.insert_version(key, t.commit_ts, value)

    # -- step 2: write conflicts inside the newcomer's lifetime ---------------------

    def _recheck_conflicts(self, t: Transaction, now: float, out: list) -> None:
        wkey = t.wkey
        if not wkey:
            return
        ongoing = self._ongoing
        for ts, kind, tid, other in self._events(t.start_ts, t.commit_ts):
            keys = wkey & other.wkey if other is not t else wkey
            for key in sorted(keys):
                base = ongoing.floor_lookup(key, ts)
                if kind == EventKind.START:
                    ongoing.insert_version(key, ts, base | {tid})
                    continue
                current = base - {tid}
                ongoing.insert_version(key, ts, current)
                if not current:
                    continue
                prev = self._noconflict.get((tid, key))
                if prev is not None and set(prev.peer_tids) == current:
                    continue
                v = noconflict_violation(tid, other.commit_ts, key, current)
                self._noconflict[(tid, key)] = v
                out.append(CheckerEvent(EventType.NOCONFLICT, tid, now, key, violation=v))

    # -- step 3: external reads positioned after the newcomer's commit -------------

    def _recheck_ext(self, t: Transaction, now: float, out: list) -> None:
        keys = set(t.wkey)
        if not keys:
            return
        ext_val = t.ext_val
        si = self.mode == "si"
        for ts, kind, tid, other in self._events(t.commit_ts + 1, None):
            if kind == EventKind.START:
                if si:
                    self._reevaluate(other, keys, ext_val, now, out)
                continue
            if not si:
                self._reevaluate(other, keys, ext_val, now, out)
            keys -= other.wkey
            if not keys:
                break

    def _reevaluate(self, other: Transaction, keys: set, ext_val: dict, now: float, out: list) -> None:
        verdict = self._pending.get(other.tid)
        if verdict is None:  # timer already fired
            return
        was_ok = verdict.ok
        for op_index, key, value in other.external_reads:
            if key not in keys:
                continue
            rec = verdict.reads[op_index]
            ok = ext_val[key] == value
            if ok != rec[2]:
                rec[2] = ok
                out.append(CheckerEvent(EventType.FLIPFLOP, other.tid, now, key, op_index,
                                        flag=ok, previous=not ok))
        if verdict.ok != was_ok:
            out.append(CheckerEvent(EventType.INTERIM_EXT, other.tid, now, flag=verdict.ok))

    # -- event index ------------------------------------------------------------

    def _events(self, lo: int, hi: Optional[int]) -> Iterator[tuple]:
        """Events of every received transaction with ``lo <= ts <= hi``, ascending."""
        txns = self._txns
        maximum = None if hi is None else (hi, 2)
        resident = ((ts, kind, tid, txns[tid])
                    for ts, kind, tid in self._index.irange(minimum=(lo,), maximum=maximum))
        if self._txn_spill is None or not self._txn_spill.segments:
            return resident
        spilled = self._txn_spill.events_between(lo, hi)
        if not spilled:
            return resident
        return heapq.merge(resident, spilled, key=lambda e: e[:3])

    # -- timers -----------------------------------------------------------------

    def _arm_timer(self, tid: int, now: float) -> None:
        self._timer_seq += 1
        heapq.heappush(self._timers, (now + self.timeout_ms, self._timer_seq, tid))

    # -- garbage collection ------------------------------------------------------

    def _root(self) -> Path:
        if self._spill_root is None:
            self._spill_root = Path(tempfile.mkdtemp(prefix="isoguard-aion-"))
        return self._spill_root

    def _maybe_gc(self) -> None:
        n = self.gc.spill_count(len(self._txns))
        if not n:
            return
        seen = 0
        for ts, kind, tid in self._index:
            if kind == EventKind.COMMIT:
                seen += 1
                if seen == n:
                    self.online_gc(ts)
                    return

    def online_gc(self, threshold: int) -> None:
        """Move versions and transactions at or below ``threshold`` to disk."""
        root = self._root()
        if self._frontier._spill_dir is None:
            self._frontier._spill_dir = root / "frontier"
            self._ongoing._spill_dir = root / "ongoing"
            self._txn_spill = _TxnSpill(root / "txns")
        victims = [self._txns[tid] for ts, kind, tid in
                   self._index.irange(maximum=(threshold, 2)) if kind == EventKind.COMMIT]
        self._frontier.spill_below(threshold)
        self._ongoing.spill_below(threshold)
        if not victims:
            return
        self._txn_spill.spill(victims)
        for t in victims:
            del self._txns[t.tid]
            for ev in events_of(t):
                self._index.remove(ev)
        self.gc_runs += 1

    @property
    def reloads(self) -> int:
        n = self._frontier.reloads + self._ongoing.reloads
        if self._txn_spill is not None:
            n += self._txn_spill.reloads
        return n

    def _emit(self, events: list[CheckerEvent]) -> list[CheckerEvent]:
        if self.sink is not None:
            for ev in events:
                self.sink(ev)
        return events
