from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isoguard.fixtures import concurrent_write_example, stale_snapshot_example
from isoguard.history import History, HistoryError, R, Transaction, W
from isoguard.oracle import oracle_check_ser, oracle_check_si
from isoguard.violations import Violation, ViolationKind

from support import random_history


def txn(tid, start, commit, ops=(), sid=None, sno=0):
    return Transaction(tid, tid if sid is None else sid, sno, start, commit, tuple(ops))


NOCONFLICT_T5_T3 = Violation(ViolationKind.NOCONFLICT, 5, 7, "y", None, (3,))
EXT_T3 = Violation(ViolationKind.EXT, 3, 6, "x", 0)


def test_concurrent_write_fixture():
    r = oracle_check_si(concurrent_write_example())
    assert r.violations == (NOCONFLICT_T5_T3,)
    assert r.count(ViolationKind.EXT) == 0


def test_stale_snapshot_fixture():
    r = oracle_check_si(stale_snapshot_example())
    assert r.violations == (EXT_T3,)
    assert r.violations[0].detail == "external read of 'x' returned 1, expected 2"


def test_write_then_read_is_clean():
    h = History([txn(1, 1, 2, [W("x", 1)]), txn(2, 3, 4, [R("x", 1)])])
    assert oracle_check_si(h).clean
    assert oracle_check_ser(h).clean


def test_overlap_legal_under_si_only():
    # T2 starts before T1 commits, so it may not see x=1 under SI; under SER it must.
    h = History([txn(1, 1, 3, [W("x", 1)]), txn(2, 2, 4, [R("x", None), W("y", 2)])])
    assert oracle_check_si(h).clean
    ser = oracle_check_ser(h)
    assert ser.violations == (Violation(ViolationKind.EXT, 2, 4, "x", 0),)
    assert ser.violations[0].detail == "external read of 'x' returned null, expected 1"


def test_noconflict_attributed_to_earlier_committer():
    h = History([txn(1, 1, 3, [W("x", 1)]), txn(2, 2, 4, [W("x", 2)])])
    assert oracle_check_si(h).violations == (Violation(ViolationKind.NOCONFLICT, 1, 3, "x", None, (2,)),)


def test_session_violation():
    h = History([txn(1, 1, 4, [W("x", 1)], sid=0, sno=0), txn(2, 2, 3, [R("x", None)], sid=0, sno=1)])
    si = oracle_check_si(h)
    assert [v.kind for v in si.violations] == [ViolationKind.SESSION]
    assert si.violations[0].subject_tid == 2
    # under SER the successor must merely commit later
    assert [v.kind for v in oracle_check_ser(h).violations] == [ViolationKind.SESSION]
    h2 = History([txn(1, 1, 3, [W("x", 1)], sid=0, sno=0), txn(2, 2, 4, [R("x", 1)], sid=0, sno=1)])
    assert [v.kind for v in oracle_check_si(h2).violations] == [ViolationKind.SESSION, ViolationKind.EXT]
    assert oracle_check_ser(h2).clean


def test_int_violation():
    h = History([txn(1, 1, 2, [W("x", 5), R("x", 5), R("x", 6)])])
    assert oracle_check_si(h).violations == (Violation(ViolationKind.INT, 1, 2, "x", 2),)


def test_repeated_initial_read_is_internal():
    h = History([txn(1, 1, 1, [R("x", None), R("x", None)])])
    assert oracle_check_si(h).clean


def test_read_of_unwritten_key_with_value():
    h = History([txn(1, 1, 1, [R("x", 7)])])
    assert oracle_check_si(h).violations == (Violation(ViolationKind.EXT, 1, 1, "x", 0),)


def test_last_write_of_writer_counts():
    h = History([txn(1, 1, 2, [W("x", 1), W("x", 2)]), txn(2, 3, 4, [R("x", 2)])])
    assert oracle_check_si(h).clean


def test_serial_ser_equals_si_without_noconflict():
    rng = random.Random(3)
    for _ in range(50):
        h = random_history(rng, max_txns=15)
        # make it serial: re-time every transaction back to back in record order
        txns, tick = [], 1
        for t in h:
            ro = not t.wkey
            txns.append(Transaction(t.tid, t.sid, t.sno, tick, tick if ro else tick + 1, t.ops))
            tick += 1 if ro else 2
        serial = History(txns)
        si = oracle_check_si(serial)
        assert si.count(ViolationKind.NOCONFLICT) == 0
        assert oracle_check_ser(serial).violations == si.violations


def test_empty():
    assert oracle_check_si(History()).clean
    assert oracle_check_ser(History()).clean


def test_rejects_invalid_history():
    with pytest.raises(HistoryError):
        oracle_check_si(History([txn(1, 3, 2)]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_record_order_beyond_sessions_is_irrelevant(seed):
    rng = random.Random(seed)
    h = random_history(rng, max_txns=25)
    sessions = list(h.sessions.values())
    rng.shuffle(sessions)
    reordered = History([h[tid] for tids in sessions for tid in tids])
    assert oracle_check_si(reordered) == oracle_check_si(h)
    assert oracle_check_ser(reordered) == oracle_check_ser(h)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_no_overlap_no_noconflict(seed):
    h = random_history(random.Random(seed), max_txns=25)
    ts = list(h)
    overlapping = any(a is not b and a.wkey & b.wkey and max(a.start_ts, b.start_ts) <= min(a.commit_ts, b.commit_ts)
                      for a in ts for b in ts)
    if not overlapping:
        assert oracle_check_si(h).count(ViolationKind.NOCONFLICT) == 0


def test_dropping_bad_reads_cleans_report():
    h = stale_snapshot_example()
    fixed = History([t if t.tid != 3 else Transaction(3, 3, 0, 5, 6, ()) for t in h])
    assert oracle_check_si(fixed).clean
