"""Violation records and canonically ordered reports shared by all checkers."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .history import Value

SCHEMA = "isoguard/1"


class ViolationKind(str, enum.Enum):
    SESSION = "Session"
    INT = "Int"
    EXT = "Ext"
    NOCONFLICT = "NoConflict"
    TSORDER = "TsOrder"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {k: i for i, k in enumerate(ViolationKind)}


def _fmt(v: Value) -> str:
    return "null" if v is None else str(v)


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    subject_tid: int
    commit_ts: int
    key: Optional[str] = None
    op_index: Optional[int] = None
    peer_tids: tuple[int, ...] = ()
    detail: str = field(default="", compare=False)

    def sort_key(self):
        return (self.commit_ts, self.kind.rank, self.key or "",
                -1 if self.op_index is None else self.op_index, self.peer_tids)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "tid": self.subject_tid,
            "commit_ts": self.commit_ts,
            "key": self.key,
            "op_index": self.op_index,
            "peers": list(self.peer_tids),
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Violation":
        return cls(ViolationKind(d["kind"]), d["tid"], d["commit_ts"], d.get("key"),
                   d.get("op_index"), tuple(d.get("peers", ())), d.get("detail", ""))


# Constructors keep the detail text identical across engines.

def session_violation(tid: int, commit_ts: int, sid: int, sno: int,
                      pred_commit_ts: int, bound_ts: int) -> Violation:
    return Violation(
        ViolationKind.SESSION, tid, commit_ts,
        detail=f"session {sid}: predecessor of sno {sno} commits at {pred_commit_ts}, "
               f"not before {bound_ts}")


def int_violation(tid: int, commit_ts: int, key: str, op_index: int,
                  observed: Value, expected: Value) -> Violation:
    return Violation(
        ViolationKind.INT, tid, commit_ts, key, op_index,
        detail=f"internal read of {key!r} returned {_fmt(observed)}, expected {_fmt(expected)}")


def ext_violation(tid: int, commit_ts: int, key: str, op_index: int,
                  observed: Value, expected: Value) -> Violation:
    return Violation(
        ViolationKind.EXT, tid, commit_ts, key, op_index,
        detail=f"external read of {key!r} returned {_fmt(observed)}, expected {_fmt(expected)}")


def noconflict_violation(tid: int, commit_ts: int, key: str, peers: Iterable[int]) -> Violation:
    peers = tuple(sorted(peers))
    return Violation(
        ViolationKind.NOCONFLICT, tid, commit_ts, key, None, peers,
        detail=f"concurrent writers of {key!r}: {tid} and {', '.join(map(str, peers))}")


def tsorder_violation(tid: int, start_ts: int, commit_ts: int) -> Violation:
    return Violation(
        ViolationKind.TSORDER, tid, commit_ts,
        detail=f"start_ts {start_ts} > commit_ts {commit_ts}")


@dataclass(frozen=True)
class Report:
    """Violations in canonical order: subject commit_ts, kind, key, op index."""

    violations: tuple[Violation, ...] = ()
    mode: str = "si"

    @classmethod
    def of(cls, violations: Iterable[Violation], mode: str = "si") -> "Report":
        return cls(tuple(sorted(violations, key=Violation.sort_key)), mode)

    @property
    def clean(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def count(self, kind: ViolationKind) -> int:
        return sum(1 for v in self.violations if v.kind is kind)

    def of_kind(self, kind: ViolationKind) -> list[Violation]:
        return [v for v in self.violations if v.kind is kind]

    def to_dict(self) -> dict:
        counts = {k.value: 0 for k in ViolationKind}
        for v in self.violations:
            counts[v.kind.value] += 1
        return {
            "schema": SCHEMA,
            "mode": self.mode,
            "clean": self.clean,
            "counts": counts,
            "violations": [v.to_dict() for v in self.violations],
        }

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)
