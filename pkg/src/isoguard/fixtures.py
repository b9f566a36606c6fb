"""Small hand-built histories used as regression fixtures and demos."""

from __future__ import annotations

from .history import History, R, Transaction, W


def concurrent_write_example() -> History:
    """Five transactions; T5 writes y concurrently with T3.

    Event order (tick: event)::

        1 s1  2 c1  3 s2  4 s5  5 c2  6 s3  7 c5  8 s4  9 c3  10 c4

    T3 reads x=2 from T2 and writes y; T5 writes y=1 while T3 is running;
    T4 starts after T5 commits and reads y=1. The only anomaly is the
    write-write conflict between T5 and T3 on y.
    """
    return History([
        Transaction(1, 1, 0, 1, 2, (W("x", 1),)),
        Transaction(2, 2, 0, 3, 5, (W("x", 2),)),
        Transaction(3, 3, 0, 6, 9, (R("x", 2), W("y", 3))),
        Transaction(4, 4, 0, 8, 10, (R("y", 1),)),
        Transaction(5, 5, 0, 4, 7, (W("y", 1),)),
    ])


def stale_snapshot_example() -> History:
    """T1, T2, T3 run one after another but T3 still reads T1's value of x.

    Without timestamps, T1 -> T3 -> T2 would explain the reads; with them,
    T2 is in T3's snapshot so the read is an Ext violation.
    """
    return History([
        Transaction(1, 1, 0, 1, 2, (W("x", 1),)),
        Transaction(2, 2, 0, 3, 4, (W("x", 2),)),
        Transaction(3, 3, 0, 5, 6, (R("x", 1),)),
    ])
