"""Timestamp-based isolation checking: offline (Chronos) and online (Aion)."""

from .aion import Aion, CheckerEvent, EventType, OnlineGc
from .chronos import GcPolicy, check_ser, check_si
from .harness import DeliverySchedule, FlipFlopStats, build_schedule, flip_stats, run_online
from .history import (
    History,
    HistoryError,
    Operation,
    R,
    Transaction,
    W,
    load_history,
    parse_history,
    serialize_history,
    validate_history,
    write_history,
)
from .oracle import oracle_check_ser, oracle_check_si
from .versioned import VersionedMap
from .violations import Report, Violation, ViolationKind
from .workload import FaultKind, FaultSpec, WorkloadParams, generate, inject_faults

__all__ = [
    "Aion", "CheckerEvent", "EventType", "OnlineGc",
    "GcPolicy", "check_si", "check_ser",
    "DeliverySchedule", "FlipFlopStats", "build_schedule", "flip_stats", "run_online",
    "History", "HistoryError", "Operation", "R", "W", "Transaction",
    "load_history", "parse_history", "serialize_history", "validate_history", "write_history",
    "oracle_check_si", "oracle_check_ser",
    "VersionedMap",
    "Report", "Violation", "ViolationKind",
    "FaultKind", "FaultSpec", "WorkloadParams", "generate", "inject_faults",
]
