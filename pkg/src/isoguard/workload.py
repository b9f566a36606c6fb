"""Workload generation by simulating a snapshot-isolation database, plus
fault injection to produce non-conforming histories."""

from __future__ import annotations

import bisect
import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .history import History, Operation, Transaction, require_valid

MAX_RETRIES = 10
DEFAULT_THETA = 0.99
DISTRIBUTIONS = ("uniform", "zipf", "hotspot")


@dataclass(frozen=True)
class WorkloadParams:
    sessions: int = 50
    txns: int = 100_000
    ops_per_txn: int = 15
    read_ratio: float = 0.5
    keys: int = 1000
    distribution: str = "zipf"
    theta: float = DEFAULT_THETA
    seed: int = 0

    def __post_init__(self):
        for name in ("sessions", "txns", "ops_per_txn", "keys"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.read_ratio <= 1.0:
            raise ValueError("read_ratio must be within [0, 1]")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {', '.join(DISTRIBUTIONS)}")
        if self.distribution == "zipf" and self.theta <= 0:
            raise ValueError("zipf theta must be > 0")


def key_probabilities(n: int, distribution: str, theta: float = DEFAULT_THETA) -> np.ndarray:
    """Access probability of each of ``n`` keys (key 0 is the hottest)."""
    if distribution == "uniform":
        p = np.ones(n)
    elif distribution == "zipf":
        p = 1.0 / np.arange(1, n + 1, dtype=float) ** theta
    elif distribution == "hotspot":
        hot = max(1, math.ceil(0.2 * n))
        if hot == n:
            p = np.ones(n)
        else:
            p = np.empty(n)
            p[:hot] = 0.8 / hot
            p[hot:] = 0.2 / (n - hot)
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return p / p.sum()


def key_name(i: int) -> str:
    return f"k{i}"


class _Draws:
    """Bulk-drawn random numbers, handed out one at a time."""

    def __init__(self, draw, chunk=1 << 16):
        self._draw = draw
        self._chunk = chunk
        self._buf: list = []
        self._i = 0

    def next(self):
        if self._i >= len(self._buf):
            self._buf = self._draw(self._chunk).tolist()
            self._i = 0
        v = self._buf[self._i]
        self._i += 1
        return v


@dataclass
class GenerationStats:
    attempts: int = 0
    commits: int = 0
    aborts: int = 0
    retries: int = 0
    dropped: int = 0
    key_counts: Counter = field(default_factory=Counter)

    def to_dict(self, top: int = 10) -> dict:
        total = sum(self.key_counts.values())
        return {
            "attempts": self.attempts,
            "commits": self.commits,
            "aborts": self.aborts,
            "retries": self.retries,
            "dropped": self.dropped,
            "operations": total,
            "distinct_keys": len(self.key_counts),
            "top_keys": [[k, c] for k, c in self.key_counts.most_common(top)],
        }


class _Db:
    """The reference SI store: a timestamp oracle plus a log of committed writes."""

    def __init__(self):
        self.clock = 0
        self.versions: dict[str, tuple[list[int], list[int]]] = {}
        self.log_length = 0

    def timestamp(self) -> int:
        self.clock += 1
        return self.clock

    def read(self, key: str, start_ts: int):
        chain = self.versions.get(key)
        if chain is None:
            return None
        i = bisect.bisect_left(chain[0], start_ts)
        return chain[1][i - 1] if i else None

    def try_commit(self, start_ts: int, buffer: dict[str, int]) -> Optional[int]:
        commit_ts = self.timestamp()
        for key in buffer:
            chain = self.versions.get(key)
            if chain is not None and chain[0][-1] > start_ts:
                return None  # first committer wins
        for key, value in buffer.items():
            chain = self.versions.setdefault(key, ([], []))
            chain[0].append(commit_ts)
            chain[1].append(value)
        self.log_length += 1
        return commit_ts


class _Session:
    __slots__ = ("sid", "quota", "sno", "plan", "pos", "start_ts", "buffer", "ops", "attempt", "retries")

    def __init__(self, sid: int, quota: int):
        self.sid = sid
        self.quota = quota
        self.sno = 0
        self.plan = None
        self.pos = 0
        self.start_ts = 0
        self.buffer: dict = {}
        self.ops: list = []
        self.attempt = 0
        self.retries = 0


def generate(p: WorkloadParams, stats: Optional[GenerationStats] = None) -> History:
    """Simulate ``p.sessions`` concurrent clients against an SI store.

    Each scheduler step executes one operation of some session's current
    transaction; sessions are visited round-robin with a random skip. Aborted
    transactions are retried (fresh timestamps) up to ``MAX_RETRIES`` times,
    then dropped and replaced, so the result has exactly ``p.txns`` committed
    transactions.
    """
    stats = stats if stats is not None else GenerationStats()
    rng = np.random.default_rng(p.seed)
    probs = key_probabilities(p.keys, p.distribution, p.theta)
    names = [key_name(i) for i in range(p.keys)]
    key_draw = _Draws(lambda n: rng.choice(p.keys, size=n, p=probs))
    coin = _Draws(lambda n: rng.random(n) < p.read_ratio)
    skip_range = max(1, p.sessions // 4)
    skip = _Draws(lambda n: rng.integers(0, skip_range, size=n))

    base, extra = divmod(p.txns, p.sessions)
    sessions = [_Session(s, base + (1 if s < extra else 0)) for s in range(p.sessions)]
    active = [s for s in sessions if s.quota]
    db = _Db()
    out: list[Transaction] = []
    n_ops = p.ops_per_txn
    next_attempt = 0
    cursor = 0

    while active:
        cursor = (cursor + 1 + skip.next()) % len(active)
        s = active[cursor]
        if s.plan is None:
            s.plan = [(coin.next(), names[key_draw.next()]) for _ in range(n_ops)]
            s.retries = 0
        if s.pos == 0:
            s.start_ts = db.timestamp()
            s.attempt = next_attempt
            next_attempt += 1
            s.buffer = {}
            s.ops = []
            stats.attempts += 1
        is_read, key = s.plan[s.pos]
        if is_read:
            value = s.buffer[key] if key in s.buffer else db.read(key, s.start_ts)
            s.ops.append(Operation("r", key, value))
        else:
            value = s.attempt * n_ops + s.pos
            s.buffer[key] = value
            s.ops.append(Operation("w", key, value))
        s.pos += 1
        if s.pos < n_ops:
            continue

        s.pos = 0
        commit_ts = db.try_commit(s.start_ts, s.buffer)
        if commit_ts is None:
            stats.aborts += 1
            if s.retries < MAX_RETRIES:
                s.retries += 1
                stats.retries += 1
            else:
                stats.dropped += 1
                s.plan = None
            continue
        out.append(Transaction(s.attempt, s.sid, s.sno, s.start_ts, commit_ts, tuple(s.ops)))
        stats.commits += 1
        stats.key_counts.update(op.key for op in s.ops)
        s.sno += 1
        s.plan = None
        s.quota -= 1
        if not s.quota:
            active.pop(cursor)
            cursor -= 1
    return History(out)


# ---------------------------------------------------------------------------
# fault injection


class FaultKind(str, enum.Enum):
    PERTURB_START = "perturb-start"
    PERTURB_COMMIT = "perturb-commit"
    CORRUPT_READ = "corrupt-read"
    FORCE_CONFLICT = "force-conflict"


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    rate: float
    magnitude: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("fault rate must be within (0, 1]")
        if self.magnitude < 1:
            raise ValueError("fault magnitude must be >= 1")


def _overlaps(a: Transaction, b: Transaction) -> bool:
    return max(a.start_ts, b.start_ts) <= min(a.commit_ts, b.commit_ts)


def inject_faults(h: History, f: FaultSpec) -> tuple[History, int]:
    """Apply ``f`` to a seeded ``f.rate`` fraction of eligible transactions.

    Returns the new history and how many transactions were altered. When
    anything is altered all timestamps are first doubled, which keeps the
    order intact and guarantees a free tick next to every timestamp.
    """
    require_valid(h)
    rng = np.random.default_rng(f.seed)
    txns = list(h)
    if f.kind is FaultKind.CORRUPT_READ:
        eligible = [i for i, t in enumerate(txns) if any(op.is_read for op in t.ops)]
    elif f.kind is FaultKind.FORCE_CONFLICT:
        by_start = sorted(txns, key=lambda t: t.start_ts)
        starts = [t.start_ts for t in by_start]
        partners: dict[int, Transaction] = {}
        for i, t in enumerate(txns):
            if t.start_ts == t.commit_ts:
                continue
            hi = bisect.bisect_right(starts, t.commit_ts)
            for s in reversed(by_start[max(0, hi - 256):hi]):
                if s is not t and s.wkey and _overlaps(s, t) and not s.wkey <= t.wkey:
                    partners[i] = s
                    break
        eligible = sorted(partners)
    else:
        eligible = list(range(len(txns)))
    chosen = [i for i, pick in zip(eligible, rng.random(len(eligible)) < f.rate) if pick]
    if not chosen:
        return h, 0

    txns = [Transaction(t.tid, t.sid, t.sno, 2 * t.start_ts, 2 * t.commit_ts, t.ops) for t in txns]
    used = {ts for t in txns for ts in (t.start_ts, t.commit_ts)}
    delta = 2 * f.magnitude
    fresh_value = max((abs(op.value) for t in txns for op in t.ops if op.value is not None), default=0) + 1
    changed = 0

    def nudge(target: int, lo: int, hi: int) -> Optional[int]:
        for d in range(0, hi - lo + 1):
            for cand in (target + d, target - d):
                if lo <= cand <= hi and cand not in used:
                    return cand
        return None

    for i in chosen:
        t = txns[i]
        if f.kind is FaultKind.CORRUPT_READ:
            reads = [j for j, op in enumerate(t.ops) if op.is_read]
            j = reads[int(rng.integers(len(reads)))]
            op = t.ops[j]
            bad = op.value + 1 if op.value is not None else -(t.tid + 1)
            ops = t.ops[:j] + (Operation("r", op.key, bad),) + t.ops[j + 1:]
            txns[i] = Transaction(t.tid, t.sid, t.sno, t.start_ts, t.commit_ts, ops)
        elif f.kind is FaultKind.FORCE_CONFLICT:
            partner = partners[i]
            key = sorted(partner.wkey - t.wkey)[0]
            ops = t.ops + (Operation("w", key, fresh_value),)
            fresh_value += 1
            txns[i] = Transaction(t.tid, t.sid, t.sno, t.start_ts, t.commit_ts, ops)
        else:
            sign = 1 if rng.random() < 0.5 else -1
            writes = bool(t.wkey)
            if f.kind is FaultKind.PERTURB_START:
                hi = t.commit_ts - 1 if writes else t.commit_ts
                new = nudge(t.start_ts + sign * delta, 1, hi)
                if new is None or new == t.start_ts:
                    continue
                if t.start_ts != t.commit_ts:
                    used.discard(t.start_ts)
                txns[i] = Transaction(t.tid, t.sid, t.sno, new, t.commit_ts, t.ops)
            else:
                lo = t.start_ts + 1 if writes else t.start_ts
                new = nudge(t.commit_ts + sign * delta, lo, max(lo, t.commit_ts + 2 * delta + 2))
                if new is None or new == t.commit_ts:
                    continue
                if t.start_ts != t.commit_ts:
                    used.discard(t.commit_ts)
                txns[i] = Transaction(t.tid, t.sid, t.sno, t.start_ts, new, t.ops)
            used.add(new)
        changed += 1
    if not changed:
        return h, 0
    out = History(txns)
    require_valid(out)
    return out, changed
