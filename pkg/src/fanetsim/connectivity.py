"""Link timeline derived from planned trajectories.

The timeline is the routing protocol's prior knowledge: the per-instant
adjacency matrix on the packet clock plus the ordered list of link
rejoin/separate events between every node pair.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .mobility import FormationSpec
from .radio import RadioParams, comm_range, in_range, received_power_dbm  # noqa: F401  (re-exported)

Change = Literal["up", "down"]


@dataclass(frozen=True)
class AdjacencyMatrix:
    n: int
    bits: np.ndarray
    t: float

    def neighbors(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.bits[node])


@dataclass(frozen=True)
class LinkEvent:
    t: float
    link: tuple[int, int]
    change: Change


def _adjacency_from_positions(pos: np.ndarray, link_range: float, failed: Iterable[int] = ()) -> np.ndarray:
    if pos.ndim == 3 and len(pos) > 64:
        return np.concatenate([_adjacency_from_positions(pos[i:i + 64], link_range, failed) for i in range(0, len(pos), 64)])
    diff = pos[..., :, None, :] - pos[..., None, :, :]
    dist = np.sqrt(np.einsum("...ijk,...ijk->...ij", diff, diff))
    bits = dist <= link_range
    n = pos.shape[-2]
    idx = np.arange(n)
    bits[..., idx, idx] = False
    failed = list(failed)
    if failed:
        bits[..., failed, :] = False
        bits[..., :, failed] = False
    return bits


def adjacency_at(spec: FormationSpec, t: float, link_range: float, failed: Iterable[int] = ()) -> AdjacencyMatrix:
    """Disk-model adjacency at the sample instant at or before ``t``."""
    k = spec.sample_index(t)
    bits = _adjacency_from_positions(spec.positions[k], link_range, failed)
    return AdjacencyMatrix(spec.n_nodes, bits, float(spec.times[k]))


@dataclass
class ConnectivityTimeline:
    times: np.ndarray               # (K,)
    samples: np.ndarray             # (K, N, N) bool
    events: list[LinkEvent]
    dt: float
    _labels: np.ndarray | None = field(default=None, init=False, repr=False)
    _neighbor_cache: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def index_at(self, t: float) -> int:
        """Sample at or before ``t`` (clamped to the timeline)."""
        k = int(math.floor(t / self.dt + 1e-9))
        return min(max(k, 0), len(self.times) - 1)

    def index_from(self, t: float) -> int:
        """First sample at or after ``t``; may equal ``len(times)``."""
        return max(0, int(math.ceil(t / self.dt - 1e-9)))

    def matrix(self, k: int) -> AdjacencyMatrix:
        return AdjacencyMatrix(self.n, self.samples[k], float(self.times[k]))

    def neighbor_lists(self, k: int) -> list[list[int]]:
        cached = self._neighbor_cache.get(k)
        if cached is None:
            bits = self.samples[k]
            cached = [np.flatnonzero(bits[i]).tolist() for i in range(self.n)]
            if len(self._neighbor_cache) > 64:
                self._neighbor_cache.clear()
            self._neighbor_cache[k] = cached
        return cached

    @property
    def labels(self) -> np.ndarray:
        """Connected-component label of every node in every sample, shape (K, N)."""
        if self._labels is None:
            self._labels = np.stack([_components(s)[1] for s in self.samples])
        return self._labels

    def component_counts(self) -> np.ndarray:
        return np.array([_components(s)[0] for s in self.samples])

    def replay(self, k: int) -> np.ndarray:
        """Rebuild sample ``k`` from sample 0 and the event list."""
        bits = self.samples[0].copy()
        t_k = self.times[k] + 1e-9
        for ev in self.events:
            if ev.t > t_k:
                break
            i, j = ev.link
            bits[i, j] = bits[j, i] = ev.change == "up"
        return bits

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_neighbor_cache"] = {}
        return state


def _components(bits: np.ndarray) -> tuple[int, np.ndarray]:
    return connected_components(csr_matrix(bits), directed=False)


def build_timeline(
    spec: FormationSpec,
    link_range: float,
    failed: Iterable[int] = (),
    dt: float | None = None,
) -> ConnectivityTimeline:
    """Sample the adjacency every ``dt`` over the whole scenario and diff consecutive samples."""
    export = spec.options.export_interval
    dt = export if dt is None else dt
    stride = int(round(dt / export))
    if stride < 1 or abs(stride * export - dt) > 1e-9:
        raise ValueError(f"dt={dt} must be a positive multiple of the trajectory export interval {export}")
    pos = spec.positions[::stride]
    times = spec.times[::stride]
    samples = _adjacency_from_positions(pos, link_range, failed)
    events: list[LinkEvent] = []
    iu = np.triu_indices(spec.n_nodes, k=1)
    upper = samples[:, iu[0], iu[1]]
    flips = np.nonzero(upper[1:] != upper[:-1])
    for kk, p in zip(*flips):
        t = float(times[kk + 1])
        link = (int(iu[0][p]), int(iu[1][p]))
        events.append(LinkEvent(t, link, "up" if upper[kk + 1, p] else "down"))
    events.sort(key=lambda e: (e.t, e.link))
    return ConnectivityTimeline(times, samples, events, dt)


def reachable_in(bits: np.ndarray, src: int, dst: int, excluded: frozenset[int] | set[int] = frozenset()) -> bool:
    """BFS reachability of ``dst`` from ``src`` with ``excluded`` nodes removed."""
    if src in excluded or dst in excluded:
        return False
    seen = {src}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(bits[u]):
            v = int(v)
            if v == dst:
                return True
            if v not in seen and v not in excluded:
                seen.add(v)
                queue.append(v)
    return False


def earliest_reachable(
    timeline: ConnectivityTimeline,
    src: int,
    dst: int,
    t_now: float,
    excluded: Iterable[int] = (),
    horizon: float | None = None,
) -> float | None:
    """Earliest sample time >= ``t_now`` at which ``dst`` is connected to ``src``.

    Returns ``None`` (unreachable) if no such sample exists up to ``horizon``
    (default: the end of the timeline).
    """
    if src == dst:
        raise ValueError("src and dst must differ")
    excluded = frozenset(excluded) - {src, dst}
    k0 = timeline.index_from(t_now)
    k_max = len(timeline.times) - 1
    if horizon is not None:
        k_max = min(k_max, int(math.floor(horizon / timeline.dt + 1e-9)))
    if not excluded:
        labels = timeline.labels
        for k in range(k0, k_max + 1):
            if labels[k, src] == labels[k, dst]:
                return float(timeline.times[k])
        return None
    for k in range(k0, k_max + 1):
        if reachable_in(timeline.samples[k], src, dst, excluded):
            return float(timeline.times[k])
    return None


def write_events_csv(timeline: ConnectivityTimeline, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node_a", "node_b", "change"])
        for ev in timeline.events:
            w.writerow([f"{ev.t:.1f}", ev.link[0], ev.link[1], ev.change])
