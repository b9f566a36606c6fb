"""Transactions, histories, the canonical JSON-lines format and the
timestamp-derived arbitration/visibility relations."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable, Iterator, NamedTuple, Optional, Union

# The value observed for a key nobody has written yet. Encoded as JSON null.
INITIAL_VALUE = None

INITIAL_TS = 0
INITIAL_TID = -1

U64_MAX = 2**64 - 1
I64_MIN, I64_MAX = -(2**63), 2**63 - 1

Value = Optional[int]


class HistoryError(ValueError):
    """Malformed or structurally invalid history input."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Operation(NamedTuple):
    kind: str  # "r" | "w"
    key: str
    value: Value

    @property
    def is_read(self) -> bool:
        return self.kind == "r"

    @property
    def is_write(self) -> bool:
        return self.kind == "w"


def R(key: str, value: Value) -> Operation:
    return Operation("r", key, value)


def W(key: str, value: int) -> Operation:
    return Operation("w", key, value)


class ExternalRead(NamedTuple):
    op_index: int
    key: str
    value: Value


@dataclass(frozen=True)
class Transaction:
    tid: int
    sid: int
    sno: int
    start_ts: int
    commit_ts: int
    ops: tuple[Operation, ...] = ()

    def __post_init__(self):
        if not isinstance(self.ops, tuple):
            object.__setattr__(self, "ops", tuple(Operation(*op) for op in self.ops))

    @cached_property
    def wkey(self) -> frozenset[str]:
        return frozenset(op.key for op in self.ops if op.is_write)

    @cached_property
    def ext_val(self) -> dict[str, int]:
        """Last value this transaction writes to each key."""
        out: dict[str, int] = {}
        for op in self.ops:
            if op.is_write:
                out[op.key] = op.value
        return out

    @cached_property
    def external_reads(self) -> tuple[ExternalRead, ...]:
        """Reads that are the first operation on their key."""
        seen: set[str] = set()
        out = []
        for i, op in enumerate(self.ops):
            if op.key in seen:
                continue
            seen.add(op.key)
            if op.is_read:
                out.append(ExternalRead(i, op.key, op.value))
        return tuple(out)

    @property
    def is_read_only(self) -> bool:
        return not self.wkey


INITIAL_TXN = Transaction(INITIAL_TID, INITIAL_TID, 0, INITIAL_TS, INITIAL_TS, ())


def ar_less(a: Transaction, b: Transaction) -> bool:
    """Arbitration: ``a`` is ordered before ``b`` iff it commits earlier."""
    return a.commit_ts < b.commit_ts


def vis(a: Transaction, b: Transaction) -> bool:
    """Visibility: ``a`` is in ``b``'s snapshot iff it committed by ``b``'s start."""
    return a.commit_ts <= b.start_ts


class EventKind(enum.IntEnum):
    # START < COMMIT so a read-only txn with start == commit starts first
    START = 0
    COMMIT = 1


class Event(NamedTuple):
    ts: int
    kind: EventKind
    tid: int


def events_of(t: Transaction) -> tuple[Event, Event]:
    return Event(t.start_ts, EventKind.START, t.tid), Event(t.commit_ts, EventKind.COMMIT, t.tid)


class History:
    """A set of committed transactions with per-session order.

    Session order is the record order of each sid. The initial transaction
    is implicit and available as :attr:`initial`.
    """

    def __init__(self, txns: Iterable[Transaction] = ()):
        self._txns: dict[int, Transaction] = {}
        self._sessions: dict[int, list[int]] = {}
        self._position: dict[int, int] = {}
        self.line_of: dict[int, int] = {}  # tid -> source line, when parsed from a file
        for t in txns:
            if t.tid in self._txns or t.tid == INITIAL_TID:
                raise HistoryError(f"duplicate tid {t.tid}")
            self._txns[t.tid] = t
            order = self._sessions.setdefault(t.sid, [])
            self._position[t.tid] = len(order)
            order.append(t.tid)

    initial = INITIAL_TXN

    @property
    def transactions(self) -> tuple[Transaction, ...]:
        """User transactions in record order."""
        return tuple(self._txns.values())

    def with_initial(self) -> Iterator[Transaction]:
        yield INITIAL_TXN
        yield from self._txns.values()

    @property
    def sessions(self) -> dict[int, list[int]]:
        return self._sessions

    def __getitem__(self, tid: int) -> Transaction:
        if tid == INITIAL_TID:
            return INITIAL_TXN
        return self._txns[tid]

    def __contains__(self, tid: int) -> bool:
        return tid in self._txns

    def __iter__(self) -> Iterator[Transaction]:
        return iter(self._txns.values())

    def __len__(self) -> int:
        return len(self._txns)

    def predecessor(self, t: Transaction) -> Optional[Transaction]:
        """The transaction immediately before ``t`` in its session, if any."""
        pos = self._position[t.tid]
        if pos == 0:
            return None
        return self._txns[self._sessions[t.sid][pos - 1]]

    def __repr__(self) -> str:
        return f"History({len(self)} txns, {len(self._sessions)} sessions)"


# ---------------------------------------------------------------------------
# canonical file format


def _check_u64(rec: dict, name: str, lineno: int) -> int:
    v = rec.get(name)
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= U64_MAX:
        raise HistoryError(f"field {name!r} must be an unsigned 64-bit integer", lineno)
    return v


def _parse_op(raw, lineno: int) -> Operation:
    if not isinstance(raw, list) or len(raw) != 3:
        raise HistoryError(f"operation must be [kind, key, value], got {raw!r}", lineno)
    kind, key, value = raw
    if kind not in ("r", "w"):
        raise HistoryError(f"unknown operation kind {kind!r}", lineno)
    if not isinstance(key, str) or not key:
        raise HistoryError("key must be a non-empty string", lineno)
    if value is None:
        if kind == "w":
            raise HistoryError(f"write of initial sentinel to key {key!r}", lineno)
    elif isinstance(value, bool) or not isinstance(value, int) or not I64_MIN <= value <= I64_MAX:
        raise HistoryError(f"value must be a 64-bit integer or null, got {value!r}", lineno)
    return Operation(kind, key, value)


def parse_transaction(line: str, lineno: Optional[int] = None) -> Transaction:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise HistoryError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(rec, dict):
        raise HistoryError("record must be a JSON object", lineno)
    ops = rec.get("ops")
    if not isinstance(ops, list):
        raise HistoryError("field 'ops' must be a list", lineno)
    return Transaction(
        tid=_check_u64(rec, "tid", lineno),
        sid=_check_u64(rec, "sid", lineno),
        sno=_check_u64(rec, "sno", lineno),
        start_ts=_check_u64(rec, "start", lineno),
        commit_ts=_check_u64(rec, "commit", lineno),
        ops=tuple(_parse_op(op, lineno) for op in ops),
    )


def parse_history(stream: Union[IO[bytes], IO[str], bytes, str]) -> History:
    """Read a history from a JSON-lines byte/text stream (or its contents)."""
    if isinstance(stream, (bytes, str)):
        data = stream
    else:
        data = stream.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise HistoryError(f"input is not UTF-8: {exc}") from None
    txns = []
    seen: set[int] = set()
    lines: dict[int, int] = {}
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        t = parse_transaction(line, lineno)
        if t.tid in seen:
            raise HistoryError(f"duplicate tid {t.tid}", lineno)
        seen.add(t.tid)
        txns.append(t)
        lines[t.tid] = lineno
    h = History(txns)
    h.line_of = lines
    return h


def load_history(path) -> History:
    with open(path, "rb") as fh:
        return parse_history(fh)


def dumps_transaction(t: Transaction) -> str:
    rec = {
        "tid": t.tid,
        "sid": t.sid,
        "sno": t.sno,
        "start": t.start_ts,
        "commit": t.commit_ts,
        "ops": [list(op) for op in t.ops],
    }
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False)


def serialize_history(h: History) -> bytes:
    return "".join(dumps_transaction(t) + "\n" for t in h).encode("utf-8")


def write_history(h: History, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_history(h))


# ---------------------------------------------------------------------------
# structural validation


@dataclass(frozen=True)
class StructuralError:
    kind: str  # "collision" | "ts-order" | "read-only-tie" | "reserved-ts" | "session"
    tids: tuple[int, ...]
    message: str

    def __str__(self) -> str:
        return self.message


def validate_history(h: History) -> list[StructuralError]:
    """Return every structural problem in ``h``; an empty list means well-formed."""
    errors: list[StructuralError] = []
    owner: dict[int, int] = {}
    for t in h:
        if t.start_ts > t.commit_ts:
            errors.append(StructuralError(
                "ts-order", (t.tid,),
                f"txn {t.tid}: start_ts {t.start_ts} > commit_ts {t.commit_ts}"))
        elif t.start_ts == t.commit_ts and t.wkey:
            errors.append(StructuralError(
                "read-only-tie", (t.tid,),
                f"txn {t.tid}: start_ts == commit_ts == {t.start_ts} but it writes"))
        for ts in {t.start_ts, t.commit_ts}:
            if ts == INITIAL_TS:
                errors.append(StructuralError(
                    "reserved-ts", (t.tid,), f"txn {t.tid}: timestamp 0 is reserved"))
            other = owner.setdefault(ts, t.tid)
            if other != t.tid:
                errors.append(StructuralError(
                    "collision", (other, t.tid),
                    f"timestamp {ts} used by txns {other} and {t.tid}"))
    for sid, tids in h.sessions.items():
        for pos, tid in enumerate(tids):
            sno = h[tid].sno
            if sno != pos:
                errors.append(StructuralError(
                    "session", (tid,),
                    f"session {sid}: txn {tid} has sno {sno}, expected {pos}"))
    return errors


def event_sequence(h: History) -> list[Event]:
    """All start/commit events sorted by timestamp (start first on ties)."""
    events = []
    for t in h:
        events.extend(events_of(t))
    events.sort()
    return events


def require_valid(h: History) -> None:
    errors = validate_history(h)
    if errors:
        shown = "; ".join(str(e) for e in errors[:5])
        more = f" (+{len(errors) - 5} more)" if len(errors) > 5 else ""
        raise HistoryError(f"history is not well-formed: {shown}{more}")
