"""Simulated collector pipeline driving the online checker.

Transactions complete in commit order, one every ``interval_ms``. Each is
delayed by a normally distributed amount before reaching the collector,
which forwards them in batches; the checker consumes a batch when its last
member has arrived and spends ``service_ms`` of virtual time per
transaction. Flip-flop statistics are computed from the checker's event
stream alone, so they can be recomputed offline from an event log.
"""

from __future__ import annotations

import gc as _pygc
import json
import queue
import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from sortedcontainers import SortedList

from .aion import DEFAULT_TIMEOUT_MS, Aion, CheckerEvent, EventType, OnlineGc
from .history import History, Transaction, require_valid
from .violations import SCHEMA, Report

DEFAULT_BATCH = 500
DEFAULT_INTERVAL_MS = 2.0
DEFAULT_SERVICE_MS = 0.01


@dataclass(frozen=True)
class Delivery:
    position: int  # completion (commit-order) position
    arrival_ms: float  # arrival at the collector
    release_ms: float  # hand-off of the enclosing batch to the checker
    txn: Transaction


@dataclass
class DeliverySchedule:
    deliveries: list[Delivery]  # in delivery order
    batch: int
    mu_ms: float
    sigma_ms: float
    interval_ms: float
    seed: int

    def __len__(self) -> int:
        return len(self.deliveries)

    @property
    def transactions(self) -> list[Transaction]:
        return [d.txn for d in self.deliveries]

    def inversions(self) -> int:
        """Pairs delivered in the opposite order to their completion order."""
        seen = SortedList()
        count = 0
        for d in self.deliveries:
            count += len(seen) - seen.bisect_right(d.position)
            seen.add(d.position)
        return count

    def batches(self) -> Iterable[list[Delivery]]:
        for i in range(0, len(self.deliveries), self.batch):
            yield self.deliveries[i:i + self.batch]


def build_schedule(h: History, mu_ms: float = 100.0, sigma_ms: float = 10.0,
                   batch: int = DEFAULT_BATCH, seed: int = 0,
                   interval_ms: float = DEFAULT_INTERVAL_MS) -> DeliverySchedule:
    """Delay every transaction by ``max(0, N(mu, sigma^2))`` ms after completion.

    A transaction never arrives before its session predecessor (the
    predecessor's arrival time is carried forward), so each session is
    delivered in session order.
    """
    require_valid(h)
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if sigma_ms < 0 or interval_ms < 0:
        raise ValueError("sigma and interval must be >= 0")
    by_commit = sorted(h, key=lambda t: t.commit_ts)
    rng = np.random.default_rng(seed)
    delays = np.maximum(rng.normal(mu_ms, sigma_ms, size=len(by_commit)), 0.0) if sigma_ms else \
        np.full(len(by_commit), max(mu_ms, 0.0))
    # session order may disagree with commit order on faulty input
    session_rank = {t.tid: (t.sid, i) for i, t in enumerate(h)}
    arrival: dict[int, float] = {}
    for pos, t in enumerate(by_commit):
        arrival[t.tid] = pos * interval_ms + float(delays[pos])
    last: dict[int, float] = {}
    for t in sorted(h, key=lambda t: session_rank[t.tid]):
        a = max(arrival[t.tid], last.get(t.sid, 0.0))
        arrival[t.tid] = last[t.sid] = a
    position = {t.tid: pos for pos, t in enumerate(by_commit)}
    # ties broken by session rank so session order survives equal arrivals
    order = sorted(h, key=lambda t: (arrival[t.tid], session_rank[t.tid][1]))
    deliveries = []
    for start in range(0, len(order), batch):
        group = order[start:start + batch]
        release = arrival[group[-1].tid]
        deliveries.extend(Delivery(position[t.tid], arrival[t.tid], release, t) for t in group)
    return DeliverySchedule(deliveries, batch, mu_ms, sigma_ms, interval_ms, seed)


@dataclass
class FlipFlopStats:
    flips: dict[tuple[int, str], list[float]]  # (tid, key) -> flip times
    flipped_txns: int
    total_txns: int
    rectification_ms: list[float]  # wrong interim verdict -> its correction
    unrectified: int  # reads still wrong when their timer fired

    @property
    def flipped_fraction(self) -> float:
        return self.flipped_txns / self.total_txns if self.total_txns else 0.0

    def histogram(self) -> dict[int, int]:
        """Number of transactions by how many flips they had (0 omitted)."""
        per_txn = Counter()
        for (tid, _), times in self.flips.items():
            per_txn[tid] += len(times)
        return dict(sorted(Counter(per_txn.values()).items()))

    def fraction_within(self, ms: float) -> float:
        if not self.rectification_ms:
            return 1.0
        return sum(1 for x in self.rectification_ms if x <= ms) / len(self.rectification_ms)

    def percentiles(self) -> dict[str, float]:
        if not self.rectification_ms:
            return {}
        arr = np.asarray(self.rectification_ms)
        return {f"p{q}": float(np.percentile(arr, q)) for q in (50, 90, 95, 99, 100)}

    def to_dict(self) -> dict:
        return {
            "flipped_txns": self.flipped_txns,
            "total_txns": self.total_txns,
            "flipped_fraction": self.flipped_fraction,
            "flip_events": sum(len(v) for v in self.flips.values()),
            "histogram": {str(k): v for k, v in self.histogram().items()},
            "rectified": len(self.rectification_ms),
            "unrectified": self.unrectified,
            "rectification_ms": self.percentiles(),
            "rectified_within_10ms": self.fraction_within(10.0),
        }


def flip_stats(events: Iterable[CheckerEvent], total_txns: int) -> FlipFlopStats:
    """Derive flip-flop statistics from a checker event stream.

    A read is wrong from the moment a flip marks it false, or from its
    owner's arrival when its first flip is to true; it is rectified at the
    next flip back to true.
    """
    flips: dict[tuple[int, str], list[float]] = defaultdict(list)
    arrived: dict[int, float] = {}
    wrong_since: dict[tuple[int, str], float] = {}
    rect: list[float] = []
    finals = 0
    for ev in events:
        if ev.kind is EventType.FLIPFLOP:
            k = (ev.tid, ev.key)
            first = k not in flips
            flips[k].append(ev.at)
            if ev.flag:
                began = wrong_since.pop(k, None)
                if began is None and first:
                    began = arrived.get(ev.tid)
                if began is not None:
                    rect.append(ev.at - began)
            else:
                wrong_since[k] = ev.at
        elif ev.kind is EventType.FINAL_EXT:
            finals += 1
        elif ev.kind is EventType.INTERIM_EXT:
            arrived.setdefault(ev.tid, ev.at)
    return FlipFlopStats(dict(flips), len({tid for tid, _ in flips}), total_txns, rect, finals)


@dataclass
class RunResult:
    report: Report
    stats: FlipFlopStats
    throughput: list[int]  # transactions processed in each second
    events: list[CheckerEvent]
    elapsed_s: float
    processed: int
    gc_runs: int = 0
    reloads: int = 0
    clock: str = "virtual"
    extra: dict = field(default_factory=dict)

    @property
    def tps(self) -> float:
        return self.processed / self.elapsed_s if self.elapsed_s > 0 else float("inf")

    def to_dict(self) -> dict:
        rep = self.report.to_dict()
        return {
            "schema": SCHEMA,
            "mode": rep["mode"],
            "clean": rep["clean"],
            "counts": rep["counts"],
            "violations": rep["violations"],
            "flipflops": self.stats.to_dict(),
            "throughput": {
                "clock": self.clock,
                "per_second": self.throughput,
                "processed": self.processed,
                "elapsed_s": self.elapsed_s,
                "tps": self.tps,
            },
            "gc": {"runs": self.gc_runs, "reloads": self.reloads},
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def _trace(times_ms: list[float]) -> list[int]:
    if not times_ms:
        return []
    per = Counter(int(t // 1000.0) for t in times_ms)
    return [per.get(i, 0) for i in range(max(per) + 1)]


class VirtualClock:
    def __init__(self, now: float = 0.0):
        self.now = now

    def __call__(self) -> float:
        return self.now


def run_online(schedule: DeliverySchedule, mode: str = "si", gc: OnlineGc = OnlineGc(),
               timeout_ms: float = DEFAULT_TIMEOUT_MS, virtual: bool = True,
               service_ms: float = DEFAULT_SERVICE_MS, spill_dir=None,
               sink: Optional[Callable[[CheckerEvent], None]] = None,
               queue_size: int = 4 * DEFAULT_BATCH) -> RunResult:
    """Feed ``schedule`` to a fresh checker and collect its verdicts.

    In virtual time, batch release times and ``service_ms`` drive the clock
    and timers fire in between. In wall-clock mode a producer thread pushes
    the deliveries (without waiting out their delays) through a bounded
    queue to the consuming checker, which measures real throughput.
    """
    events: list[CheckerEvent] = []

    def collect(ev: CheckerEvent) -> None:
        events.append(ev)
        if sink is not None:
            sink(ev)

    done_at: list[float] = []
    if virtual:
        clock = VirtualClock()
        checker = Aion(mode, timeout_ms, clock=clock, sink=collect, gc=gc, spill_dir=spill_dir)
        t0 = time.perf_counter()
        for group in schedule.batches():
            release = group[0].release_ms
            _advance_to(checker, clock, max(release, clock.now))
            for d in group:
                _advance_to(checker, clock, clock.now + service_ms)
                checker.on_transaction(d.txn)
                done_at.append(clock.now)
        checker.finish()
        elapsed = time.perf_counter() - t0
        trace = _trace(done_at)
        label = "virtual"
    else:
        checker = Aion(mode, timeout_ms, sink=collect, gc=gc, spill_dir=spill_dir)
        feed: queue.Queue = queue.Queue(maxsize=queue_size)
        stop = object()

        def produce() -> None:
            for d in schedule.deliveries:
                feed.put(d.txn)
            feed.put(stop)

        producer = threading.Thread(target=produce, name="isoguard-feed", daemon=True)
        # The checker creates no reference cycles; pausing the interpreter's
        # cycle collector keeps its full-heap scans out of the measurement.
        _pygc.collect()
        was_enabled = _pygc.isenabled()
        _pygc.disable()
        try:
            t0 = time.perf_counter()
            producer.start()
            while True:
                item = feed.get()
                if item is stop:
                    break
                checker.on_transaction(item)
                checker.advance(checker.clock())
                done_at.append((time.perf_counter() - t0) * 1000.0)
            elapsed = time.perf_counter() - t0
            producer.join()
        finally:
            if was_enabled:
                _pygc.enable()
        checker.finish()
        trace = _trace(done_at)
        label = "wall"
    stats = flip_stats(events, len(schedule))
    return RunResult(checker.report(), stats, trace, events, elapsed, len(done_at),
                     checker.gc_runs, checker.reloads, label)


def _advance_to(checker: Aion, clock: VirtualClock, target: float) -> None:
    """Move the virtual clock to ``target``, firing timers at their deadlines."""
    while True:
        due = checker.next_deadline()
        if due is None or due > target:
            break
        clock.now = max(clock.now, due)
        checker.advance(clock.now)
    clock.now = target


def read_event_log(lines: Iterable[str]) -> list[CheckerEvent]:
    return [CheckerEvent.from_dict(json.loads(line)) for line in lines if line.strip()]
