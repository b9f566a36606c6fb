"""Random histories and delivery orders shared by the test modules."""

from __future__ import annotations

import random
from typing import Optional

from isoguard.aion import Aion, OnlineGc
from isoguard.history import History, Operation, Transaction
from isoguard.workload import FaultKind, FaultSpec, WorkloadParams, generate, inject_faults


def random_history(rng: random.Random, max_txns: int = 50, max_ops: int = 10,
                   max_keys: int = 10, max_sessions: int = 5) -> History:
    """A structurally valid history with arbitrary (often violating) contents.

    Timestamps are a random permutation of distinct ticks; reads return a
    value somebody wrote to the key (or null) so that many of them are right.
    """
    n = rng.randint(0, max_txns)
    keys = [f"k{i}" for i in range(rng.randint(1, max_keys))]
    n_sessions = rng.randint(1, max_sessions)
    ticks = rng.sample(range(1, 4 * n + 3), 2 * n) if n else []
    written: dict[str, list[int]] = {k: [] for k in keys}
    drafts = []
    next_value = 1
    for i in range(n):
        a, b = sorted(ticks[2 * i:2 * i + 2])
        ops = []
        for _ in range(rng.randint(0, max_ops)):
            key = rng.choice(keys)
            if rng.random() < 0.5:
                pool = written[key]
                value = rng.choice(pool) if pool and rng.random() < 0.8 else None
                if value is None and rng.random() < 0.1:
                    value = 10_000 + rng.randint(0, 3)  # never written
                ops.append(Operation("r", key, value))
            else:
                value = next_value if rng.random() < 0.9 else rng.randint(1, max(1, next_value))
                next_value += 1
                written[key].append(value)
                ops.append(Operation("w", key, value))
        if not any(op.is_write for op in ops) and rng.random() < 0.3:
            b = a  # read-only transaction with start == commit
        drafts.append((a, b, tuple(ops)))
    # sessions mostly follow start order, sometimes not
    if rng.random() < 0.7:
        drafts.sort(key=lambda d: d[0])
    sno = [0] * n_sessions
    txns = []
    for i, (a, b, ops) in enumerate(drafts):
        sid = rng.randrange(n_sessions)
        txns.append(Transaction(100 + i, sid, sno[sid], a, b, ops))
        sno[sid] += 1
    return History(txns)


def generated_history(rng: random.Random, max_txns: int = 50) -> History:
    """A small simulated-SI history, fault-injected half of the time."""
    p = WorkloadParams(sessions=rng.randint(1, 6), txns=rng.randint(1, max_txns),
                       ops_per_txn=rng.randint(1, 10), read_ratio=rng.random(),
                       keys=rng.randint(1, 10), distribution=rng.choice(["uniform", "zipf", "hotspot"]),
                       seed=rng.randrange(2**32))
    h = generate(p)
    if rng.random() < 0.5:
        kind = rng.choice(list(FaultKind))
        h, _ = inject_faults(h, FaultSpec(kind, rng.uniform(0.05, 0.5), rng.randint(1, 5), rng.randrange(2**32)))
    return h


def mixed_history(rng: random.Random) -> History:
    return random_history(rng) if rng.random() < 0.5 else generated_history(rng)


def session_preserving_shuffle(h: History, rng: random.Random) -> list[Transaction]:
    queues = [[h[tid] for tid in tids] for tids in h.sessions.values()]
    queues = [q for q in queues if q]
    weights = [len(q) for q in queues]
    out = []
    pos = [0] * len(queues)
    remaining = sum(weights)
    while remaining:
        i = rng.choices(range(len(queues)), weights=[len(q) - p for q, p in zip(queues, pos)])[0]
        out.append(queues[i][pos[i]])
        pos[i] += 1
        remaining -= 1
    return out


class Clock:
    def __init__(self):
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


def run_aion(order: list[Transaction], mode: str, gc: OnlineGc = OnlineGc(),
             spill_dir: Optional[str] = None):
    """Deliver ``order`` with no time passing, then expire every timer."""
    clock = Clock()
    checker = Aion(mode, clock=clock, gc=gc, spill_dir=spill_dir)
    events = []
    for t in order:
        events.extend(checker.on_transaction(t))
    events.extend(checker.finish())
    return checker, events
