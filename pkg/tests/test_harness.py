from __future__ import annotations

import json

import pytest

from isoguard.aion import CheckerEvent, OnlineGc
from isoguard.chronos import check_ser, check_si
from isoguard.harness import build_schedule, flip_stats, read_event_log, run_online
from isoguard.history import History, R, Transaction, W
from isoguard.workload import FaultSpec, WorkloadParams, generate, inject_faults


@pytest.fixture(scope="module")
def clean():
    return generate(WorkloadParams(sessions=20, txns=2000, ops_per_txn=10, keys=200, seed=4))


@pytest.fixture(scope="module")
def faulty(clean):
    h, n = inject_faults(clean, FaultSpec("corrupt-read", 0.02, seed=2))
    assert n > 1
    return h


def test_sigma_zero_is_commit_order(clean):
    s = build_schedule(clean, 100, 0)
    assert s.inversions() == 0
    assert [d.txn.commit_ts for d in s.deliveries] == sorted(t.commit_ts for t in clean)


def test_schedule_is_deterministic_and_session_fifo(clean):
    a = build_schedule(clean, 100, 30, seed=5)
    b = build_schedule(clean, 100, 30, seed=5)
    assert [d.txn.tid for d in a.deliveries] == [d.txn.tid for d in b.deliveries]
    assert a.inversions() > 0
    last: dict[int, int] = {}
    for d in a.deliveries:
        assert d.txn.sno == last.get(d.txn.sid, -1) + 1
        last[d.txn.sid] = d.txn.sno


def test_negative_delays_clamped(clean):
    s = build_schedule(clean, -50, 10, seed=1)
    assert all(d.arrival_ms >= 0 for d in s.deliveries)


def test_batches_release_when_last_member_arrives(clean):
    s = build_schedule(clean, 100, 10, batch=300, seed=1)
    groups = list(s.batches())
    assert [len(g) for g in groups] == [300] * 6 + [200]
    for g in groups:
        assert all(d.release_ms == g[-1].arrival_ms >= d.arrival_ms for d in g)


def test_inversions_grow_with_sigma(clean):
    totals = []
    for sigma in (0, 5, 20, 60):
        totals.append(sum(build_schedule(clean, 100, sigma, seed=s).inversions() for s in range(3)))
    assert totals == sorted(totals)
    assert totals[0] == 0 < totals[-1]


def test_clean_history_converges_with_flips(clean):
    r = run_online(build_schedule(clean, 100, 10, seed=3), "si")
    assert r.report.clean
    assert r.stats.flipped_txns > 0
    assert r.stats.unrectified == 0
    assert len(r.stats.rectification_ms) == sum(1 for e in r.events if e.kind.value == "FlipFlop" and e.flag)


def test_sigma_zero_has_no_flips(clean):
    r = run_online(build_schedule(clean, 100, 0), "si")
    assert r.report.clean
    assert r.stats.flipped_txns == 0


@pytest.mark.parametrize("mode, check", [("si", check_si), ("ser", check_ser)])
def test_fault_injected_report_equals_offline(faulty, mode, check):
    r = run_online(build_schedule(faulty, 100, 10, seed=3), mode)
    assert r.report == check(faulty)
    assert len(r.report) > 1


def test_cap_gc_keeps_report(faulty, tmp_path):
    s = build_schedule(faulty, 100, 10, seed=3)
    plain = run_online(s, "si")
    capped = run_online(s, "si", OnlineGc("cap", 50), spill_dir=tmp_path)
    assert capped.gc_runs > 0
    assert capped.report.to_json() == plain.report.to_json()


def test_stats_recomputable_from_event_log(faulty, tmp_path):
    log = tmp_path / "events.jsonl"
    with open(log, "w") as fh:
        r = run_online(build_schedule(faulty, 100, 10, seed=3), "si",
                       sink=lambda ev: fh.write(json.dumps(ev.to_dict()) + "\n"))
    with open(log) as fh:
        events = read_event_log(fh)
    assert events == r.events
    again = flip_stats(events, r.stats.total_txns)
    assert again.to_dict() == r.stats.to_dict()


def test_rectification_latency_measured_from_wrong_verdict():
    reader = CheckerEvent.from_dict({"event": "InterimExtVerdict", "tid": 2, "at": 1.0, "flag": False})
    flip = CheckerEvent.from_dict({"event": "FlipFlop", "tid": 2, "at": 4.5, "key": "x", "op_index": 0,
                                   "flag": True, "from": False})
    back = CheckerEvent.from_dict({"event": "FlipFlop", "tid": 2, "at": 6.0, "key": "x", "op_index": 0,
                                   "flag": False, "from": True})
    again = CheckerEvent.from_dict({"event": "FlipFlop", "tid": 2, "at": 6.5, "key": "x", "op_index": 0,
                                    "flag": True, "from": False})
    s = flip_stats([reader, flip, back, again], total_txns=4)
    assert s.rectification_ms == [3.5, 0.5]
    assert s.flipped_fraction == 0.25
    assert s.histogram() == {3: 1}


def test_late_writer_within_timeout_is_rectified():
    # writer delayed far behind the reader, but well inside the timeout
    h = History([Transaction(1, 1, 0, 1, 2, (W("x", 1),)), Transaction(2, 2, 0, 3, 4, (R("x", 1),))])
    s = build_schedule(h, 0, 0, batch=1)
    s.deliveries.reverse()
    r = run_online(s, "si", timeout_ms=50)
    assert r.report.clean
    assert r.stats.flipped_txns == 1


def test_wall_clock_mode(faulty):
    r = run_online(build_schedule(faulty, 100, 10, seed=3), "ser", OnlineGc("threshold", 500), virtual=False)
    assert r.clock == "wall"
    assert r.processed == len(faulty)
    assert r.report == check_ser(faulty)
    assert sum(r.throughput) == len(faulty)
    d = r.to_dict()
    assert d["schema"] == "isoguard/1" and d["throughput"]["tps"] > 0
