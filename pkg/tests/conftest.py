from __future__ import annotations

import pytest

from isoguard.history import write_history
from isoguard.workload import WorkloadParams, generate


@pytest.fixture(scope="session")
def default_100k_file(tmp_path_factory):
    """The default workload at 100K transactions, written once per test session."""
    h = generate(WorkloadParams(txns=100_000, seed=2024))
    path = tmp_path_factory.mktemp("default") / "default-100k.jsonl"
    write_history(h, path)
    return path, h
