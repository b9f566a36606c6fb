from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isoguard.history import (
    INITIAL_TXN,
    EventKind,
    History,
    HistoryError,
    R,
    Transaction,
    W,
    ar_less,
    event_sequence,
    parse_history,
    serialize_history,
    validate_history,
    vis,
)

from support import random_history


def txn(tid, start, commit, ops=(), sid=None, sno=0):
    return Transaction(tid, tid if sid is None else sid, sno, start, commit, tuple(ops))


class TestParse:
    def test_single_record(self):
        h = parse_history(b'{"tid":1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[["w","x",1]]}\n')
        assert len(h) == 1
        assert list(h.with_initial()) == [INITIAL_TXN, h[1]]
        assert h[1].ops == (W("x", 1),)
        assert h[1].wkey == {"x"}

    def test_empty_stream(self):
        h = parse_history(b"")
        assert len(h) == 0
        assert list(h.with_initial()) == [INITIAL_TXN]

    def test_write_of_initial_sentinel(self):
        with pytest.raises(HistoryError, match="write of initial sentinel"):
            parse_history('{"tid":1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[["w","x",null]]}')

    def test_null_read_is_initial_value(self):
        h = parse_history('{"tid":1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[["r","x",null]]}')
        assert h[1].ops == (R("x", None),)

    @pytest.mark.parametrize("line, fragment", [
        ('{"tid":1', "invalid JSON"),
        ('[1,2]', "JSON object"),
        ('{"tid":-1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[]}', "'tid'"),
        ('{"tid":1,"sid":0,"sno":0,"start":1,"commit":2}', "'ops'"),
        ('{"tid":1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[["x","k",1]]}', "kind"),
        ('{"tid":1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[["r","",1]]}', "non-empty"),
        ('{"tid":1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[["r","k",1.5]]}', "64-bit"),
        ('{"tid":1,"sid":0,"sno":0,"start":true,"commit":2,"ops":[]}', "'start'"),
    ])
    def test_malformed_line_reports_line_number(self, line, fragment):
        with pytest.raises(HistoryError) as exc:
            parse_history("# header\n\n" + line)
        assert exc.value.line == 3
        assert fragment in str(exc.value)

    def test_duplicate_tid(self):
        rec = '{"tid":1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[]}'
        with pytest.raises(HistoryError, match="duplicate tid"):
            parse_history(rec + "\n" + rec.replace('"start":1', '"start":3').replace('"commit":2', '"commit":4'))

    def test_session_order_is_record_order(self):
        h = History([txn(5, 3, 4, sid=1, sno=0), txn(2, 1, 2, sid=1, sno=1), txn(9, 5, 6, sid=2)])
        assert h.sessions == {1: [5, 2], 2: [9]}
        assert h.predecessor(h[2]) is h[5]
        assert h.predecessor(h[5]) is None

    def test_comments_and_line_numbers(self):
        h = parse_history('# c\n{"tid":7,"sid":0,"sno":0,"start":1,"commit":2,"ops":[]}\n')
        assert h.line_of == {7: 2}

    def test_round_trip_is_byte_identical(self):
        data = ('{"tid":1,"sid":0,"sno":0,"start":1,"commit":2,"ops":[["w","x",1],["r","y",null]]}\n'
                '{"tid":2,"sid":0,"sno":1,"start":3,"commit":3,"ops":[["r","x",1]]}\n').encode()
        assert serialize_history(parse_history(data)) == data

    def test_unicode_keys_round_trip(self):
        h = History([txn(1, 1, 2, [W("ключ", 3)])])
        assert serialize_history(parse_history(serialize_history(h))) == serialize_history(h)


class TestValidate:
    def test_collision(self):
        errs = validate_history(History([txn(1, 1, 3), txn(2, 3, 4)]))
        assert [e.kind for e in errs] == ["collision"]
        assert errs[0].tids == (1, 2)

    def test_read_only_tie_allowed(self):
        assert validate_history(History([txn(1, 5, 5, [R("x", None)])])) == []

    def test_writing_tie_rejected(self):
        assert [e.kind for e in validate_history(History([txn(1, 5, 5, [W("x", 1)])]))] == ["read-only-tie"]

    def test_ts_order(self):
        assert [e.kind for e in validate_history(History([txn(1, 7, 6)]))] == ["ts-order"]

    def test_reserved_tick(self):
        assert [e.kind for e in validate_history(History([txn(1, 0, 2)]))] == ["reserved-ts"]

    def test_sno_gap_and_duplicate(self):
        h = History([txn(1, 1, 2, sid=0, sno=0), txn(2, 3, 4, sid=0, sno=2), txn(3, 5, 6, sid=1, sno=0),
                     txn(4, 7, 8, sid=1, sno=0)])
        assert sorted(e.tids for e in validate_history(h)) == [(2,), (4,)]


class TestRelations:
    def test_ar(self):
        a, b = txn(1, 1, 2), txn(2, 3, 5)
        assert ar_less(a, b)
        assert not ar_less(b, a)
        assert not ar_less(a, a)

    def test_vis_inclusive(self):
        assert vis(txn(1, 1, 3), txn(2, 3, 5))
        assert not vis(txn(1, 1, 4), txn(2, 3, 5))
        assert vis(INITIAL_TXN, txn(2, 1, 2))


class TestEvents:
    def _seq(self, h):
        return [(ts, "s" if k is EventKind.START else "c", tid) for ts, k, tid in event_sequence(h)]

    def test_serial(self):
        assert self._seq(History([txn(1, 1, 2), txn(2, 3, 4)])) == [(1, "s", 1), (2, "c", 1), (3, "s", 2), (4, "c", 2)]

    def test_nested(self):
        assert [e[1] + str(e[2]) for e in self._seq(History([txn(1, 1, 4), txn(2, 2, 3)]))] == ["s1", "s2", "c2", "c1"]

    def test_read_only_tie(self):
        assert self._seq(History([txn(1, 5, 5, [R("x", None)])])) == [(5, "s", 1), (5, "c", 1)]


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_ar_is_strict_total_order(seed):
    h = random_history(random.Random(seed))
    ts = list(h)
    for a in ts:
        assert not ar_less(a, a)
        for b in ts:
            if a is not b:
                assert ar_less(a, b) != ar_less(b, a)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_vis_within_ar_and_prefix(seed):
    h = random_history(random.Random(seed), max_txns=20)
    ts = list(h.with_initial())
    for a in ts:
        for b in ts:
            if a is not b and vis(a, b):
                assert ar_less(a, b)
            for c in ts:
                if ar_less(a, b) and vis(b, c):
                    assert vis(a, c)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_random_histories_validate_and_round_trip(seed):
    h = random_history(random.Random(seed))
    assert validate_history(h) == []
    data = serialize_history(h)
    assert serialize_history(parse_history(data)) == data
