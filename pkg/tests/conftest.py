from __future__ import annotations

import numpy as np
import pytest

from fanetsim.connectivity import ConnectivityTimeline, _adjacency_from_positions
from fanetsim.metrics import PacketLedger
from fanetsim.netsim import Engine, MacParams, Network
from fanetsim.radio import RadioParams, comm_range

RANGE = comm_range(RadioParams())

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def timeline_from_positions(pos: np.ndarray, dt: float = 0.1, link_range: float = RANGE) -> ConnectivityTimeline:
    """Timeline over a (K, N, 3) position stack (no event list needed by the engine)."""
    samples = _adjacency_from_positions(pos, link_range)
    times = np.arange(len(pos)) * dt
    return ConnectivityTimeline(times, samples, [], dt)


def static_positions(points, k: int = 1001) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return np.repeat(pts[None, :, :], k, axis=0)


def line_points(n: int, spacing: float = 3000.0):
    return [(i * spacing, 0.0, 0.0) for i in range(n)]


def make_net(pos: np.ndarray, failed=(), seed: int = 0, timeline: ConnectivityTimeline | None = None, trace: bool = False, mac: MacParams | None = None):
    engine = Engine(trace=trace)
    ledger = PacketLedger()
    tl = timeline or timeline_from_positions(pos)
    net = Network(engine, tl, pos, RadioParams(), mac or MacParams(), failed, seed, ledger)
    return engine, net, ledger


@pytest.fixture
def acceptance_report():
    def report(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        print(ACCEPTANCE_LINES[-1])

    return report
