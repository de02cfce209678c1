"""Four-group diamond formation flying the five-phase diversion/rendezvous mission.

Groups are laid out around a common reference in the cross-track plane:
group 0 above, group 1 below, group 2 to the left and group 3 to the right.
During the mission each group deflects outward (climb, descend, turn left,
turn right) by the same angle profile, flies apart, reverses and returns.
The profile is time-symmetric, so the inter-group links break and re-form at
instants that are mirror images around the middle of the reversal; the
builder places that middle so that links break inside the maneuver phase and
re-form inside the rendezvous phase.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .kinematics import EarthModel, GeoPosition, LocalFrame
from .maneuvers import (
    FlightPlan,
    ManeuverSegment,
    coordinated_turn,
    generate_trajectory,
    level_state,
    pitch_change,
    straight,
    trajectory_arrays,
)
from .radio import RadioParams, comm_range

N_GROUPS = 4
GROUP_ROLES = ("climb", "descend", "turn_left", "turn_right")


class BadNodeCount(ValueError):
    pass


class UnknownNode(KeyError):
    pass


@dataclass(frozen=True)
class ScenarioPhases:
    boundaries: tuple[tuple[float, float], ...] = (
        (0.0, 30.1),
        (30.1, 37.7),
        (37.7, 60.1),
        (60.1, 62.8),
        (62.8, 100.0),
    )

    def __post_init__(self) -> None:
        b = self.boundaries
        if len(b) != 5:
            raise ValueError("exactly five phases are required")
        for (lo, hi), (lo2, _) in zip(b, b[1:]):
            if not lo < hi or hi != lo2:
                raise ValueError(f"phases must be contiguous and ordered: {b}")
        if not b[-1][0] < b[-1][1]:
            raise ValueError("last phase is empty")

    @property
    def sim_end(self) -> float:
        return self.boundaries[-1][1]

    def phase_of(self, t: float) -> int:
        """1-based phase index; intervals are half-open except the last."""
        for i, (lo, hi) in enumerate(self.boundaries):
            if lo <= t < hi:
                return i + 1
        if t == self.boundaries[-1][1]:
            return len(self.boundaries)
        raise ValueError(f"t={t} outside the scenario span")


@dataclass(frozen=True)
class ScenarioOptions:
    speed: float = 250.0
    spacing: float = 300.0
    origin: GeoPosition = GeoPosition(0.0, 0.0, 8000.0)
    divert_angle: float = math.radians(45.0)
    maneuver_rate: float = 0.25         # rad/s, pitch rate and turn rate alike
    bank_time: float = 0.5              # s to roll into / out of a turn
    break_displacement: float = 150.0   # cross-track drift at which groups lose contact
    rejoin_time: float | None = None    # default: rejoin_lead after the rendezvous phase opens
    rejoin_lead: float = 0.2
    link_range: float | None = None     # default: Friis range of the default radio
    dt: float = 0.01
    export_interval: float = 0.1


def diamond_offsets(k: int, spacing: float) -> np.ndarray:
    """Body-frame offsets of a k x k lattice turned 45 degrees, center first.

    Adjacent lattice positions are ``spacing`` apart.  Rows are ``[x, y, 0]``
    with x to the right and y forward; for odd k the first row is the center.
    """
    c = (k - 1) / 2.0
    pts = []
    for u in range(k):
        for v in range(k):
            a, b = u - c, v - c
            pts.append(((a - b) * spacing / math.sqrt(2.0), (a + b) * spacing / math.sqrt(2.0), 0.0))
    pts.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p[1], p[0]))
    return np.array(pts)


def group_size_for(n_nodes: int) -> int:
    if n_nodes <= 0 or n_nodes % N_GROUPS:
        raise BadNodeCount(f"node count {n_nodes} is not 4*k^2")
    k = math.isqrt(n_nodes // N_GROUPS)
    if k * k * N_GROUPS != n_nodes:
        raise BadNodeCount(f"node count {n_nodes} is not 4*k^2")
    return k


@dataclass
class GroupSpec:
    role: str
    leader_plan: FlightPlan
    member_offsets: np.ndarray
    node_ids: list[int]

    @property
    def leader(self) -> int:
        return self.node_ids[0]


@dataclass
class FormationSpec:
    groups: list[GroupSpec]
    phases: ScenarioPhases
    options: ScenarioOptions
    earth: EarthModel
    frame: LocalFrame
    link_range: float
    _group_of: dict[int, tuple[int, int]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._group_of = {}
        for gi, g in enumerate(self.groups):
            if len(g.node_ids) != len(g.member_offsets):
                raise ValueError("one offset per node id is required")
            for mi, nid in enumerate(g.node_ids):
                if nid in self._group_of:
                    raise ValueError(f"node {nid} appears twice")
                self._group_of[nid] = (gi, mi)

    @property
    def n_nodes(self) -> int:
        return len(self._group_of)

    def group_of(self, node: int) -> int:
        try:
            return self._group_of[node][0]
        except KeyError:
            raise UnknownNode(node) from None

    def central_nodes(self) -> list[int]:
        """The node in the middle slot of each diamond (the group leader)."""
        return [g.leader for g in self.groups]

    @cached_property
    def leader_tracks(self) -> list[dict[str, np.ndarray]]:
        o = self.options
        tracks = []
        for g in self.groups:
            samples = generate_trajectory(
                g.leader_plan, self.earth, dt=o.dt, t_end=self.phases.sim_end, export_interval=o.export_interval
            )
            tracks.append(trajectory_arrays(samples, self.frame))
        return tracks

    @property
    def times(self) -> np.ndarray:
        return self.leader_tracks[0]["t"]

    @cached_property
    def positions(self) -> np.ndarray:
        """Local positions of every node at every export instant, shape (K, N, 3)."""
        tracks = self.leader_tracks
        out = np.empty((len(tracks[0]["t"]), self.n_nodes, 3))
        for g, tr in zip(self.groups, tracks):
            rot = rotation_stack(tr["att"][:, 0], tr["att"][:, 1])
            member = tr["xyz"][:, None, :] + np.einsum("kij,mj->kmi", rot, g.member_offsets)
            out[:, g.node_ids, :] = member
        return out

    @cached_property
    def attitudes(self) -> np.ndarray:
        """Per-node (psi, theta, gamma) at every export instant: the leader's attitude."""
        att = np.empty((len(self.times), self.n_nodes, 3))
        for g, tr in zip(self.groups, self.leader_tracks):
            att[:, g.node_ids, :] = tr["att"][:, None, :]
        return att

    def sample_index(self, t: float) -> int:
        return int(math.floor(t / self.options.export_interval + 1e-9))


def rotation_stack(psi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Vectorized trajectory-to-navigation rotation, shape (K, 3, 3)."""
    sp, cp, st, ct = np.sin(psi), np.cos(psi), np.sin(theta), np.cos(theta)
    zero = np.zeros_like(psi)
    return np.stack(
        [
            np.stack([cp, ct * sp, -st * sp], axis=-1),
            np.stack([-sp, ct * cp, -st * cp], axis=-1),
            np.stack([zero, st, ct], axis=-1),
        ],
        axis=-2,
    )


def _drift_time(displacement: float, o: ScenarioOptions) -> float:
    """Time after the deflection begins at which the cross-track drift reaches ``displacement``."""
    v, w, A = o.speed, o.maneuver_rate, o.divert_angle
    tau = A / w
    ramp = v * (1.0 - math.cos(A)) / w
    if displacement <= ramp:
        return math.acos(1.0 - displacement * w / v) / w
    return tau + (displacement - ramp) / (v * math.sin(A))


def _separation_for_range(radius: float, link_range: float) -> float:
    """Cross-track centre offset S at which neighbouring diamonds are exactly out of range.

    Neighbouring groups sit at (0, S) and (S, 0) in the cross-track plane and
    each diamond reaches ``radius`` sideways, so the closest pair is
    ``sqrt((S - 2 radius)^2 + S^2)`` apart.
    """
    b = 2.0 * radius
    # (S - b)^2 + S^2 = d^2  ->  2 S^2 - 2 b S + b^2 - d^2 = 0
    disc = b * b - 2.0 * (b * b - link_range ** 2)
    return (b + math.sqrt(disc)) / 2.0


def _leader_segments(role: str, o: ScenarioOptions, t_start: float, hold: float, t_end: float, g: float):
    A, w, tb, v = o.divert_angle, o.maneuver_rate, o.bank_time, o.speed
    if role in ("turn_left", "turn_right"):
        sign = 1.0 if role == "turn_right" else -1.0
        bank = math.atan(v * w / g)

        def turn(delta):
            return coordinated_turn(sign * delta, v, bank, bank / tb, g)

        body = turn(A) + [straight(hold)] + turn(-2.0 * A) + [straight(hold)] + turn(A)
    else:
        sign = 1.0 if role == "climb" else -1.0
        body = [
            straight(tb),
            pitch_change(sign * A, v, w),
            ManeuverSegment("climb_hold", 2.0 * tb + hold),
            pitch_change(-2.0 * sign * A, v, w),
            ManeuverSegment("climb_hold", 2.0 * tb + hold),
            pitch_change(sign * A, v, w),
            straight(tb),
        ]
    used = t_start + sum(s.duration for s in body)
    return [straight(t_start)] + body + [straight(t_end - used + 1.0)]


def build_scenario(
    n_nodes: int,
    phases: ScenarioPhases | None = None,
    options: ScenarioOptions | None = None,
    earth: EarthModel | None = None,
) -> FormationSpec:
    phases = phases or ScenarioPhases()
    o = options or ScenarioOptions()
    earth = earth or EarthModel()
    k = group_size_for(n_nodes)
    link_range = o.link_range if o.link_range is not None else comm_range(RadioParams())

    offsets = diamond_offsets(k, o.spacing)
    radius = float(np.max(np.abs(offsets[:, 0])))
    s_break = _separation_for_range(radius, link_range)
    d0 = s_break - o.break_displacement
    if d0 <= 0:
        raise ValueError("break_displacement too large for this formation")

    t_start = phases.boundaries[1][0]
    rejoin = o.rejoin_time
    if rejoin is None:
        rejoin = phases.boundaries[3][0] + o.rejoin_lead
    t_out = t_start + o.bank_time + _drift_time(o.break_displacement, o)
    t_mid = 0.5 * (t_out + rejoin)
    tau = o.divert_angle / o.maneuver_rate
    hold = t_mid - t_start - 3.0 * o.bank_time - 2.0 * tau
    if hold < 0:
        raise ValueError("maneuver too slow to separate and rejoin within the phase table")

    frame = LocalFrame(o.origin, earth)
    centres = {
        "climb": (0.0, d0),
        "descend": (0.0, -d0),
        "turn_left": (-d0, 0.0),
        "turn_right": (d0, 0.0),
    }
    groups = []
    m = k * k
    for gi, role in enumerate(GROUP_ROLES):
        x, z = centres[role]
        start = frame.to_geo((x, 0.0, o.origin.h + z))
        initial = level_state(start, o.speed, psi=0.0, t=0.0)
        segs = _leader_segments(role, o, t_start, hold, phases.sim_end, earth.g)
        groups.append(GroupSpec(role, FlightPlan(segs, initial), offsets.copy(), list(range(gi * m, (gi + 1) * m))))
    return FormationSpec(groups, phases, o, earth, frame, link_range)


def position_of(spec: FormationSpec, node: int, t: float) -> tuple[np.ndarray, GeoPosition]:
    """Local xyz and geodetic position of ``node`` at ``t`` (linear between samples)."""
    if node not in spec._group_of:
        raise UnknownNode(node)
    times = spec.times
    if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
        raise ValueError(f"t={t} outside the scenario span")
    pos = spec.positions[:, node, :]
    xyz = np.array([np.interp(t, times, pos[:, i]) for i in range(3)])
    return xyz, spec.frame.to_geo(xyz)


def write_trajectories_csv(spec: FormationSpec, path: Path | str, nodes: Sequence[int] | None = None) -> None:
    nodes = range(spec.n_nodes) if nodes is None else nodes
    pos, att, times = spec.positions, spec.attitudes, spec.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node", "x", "y", "z", "psi", "theta", "gamma"])
        for k, t in enumerate(times):
            for n in nodes:
                x, y, z = pos[k, n]
                psi, theta, gamma = att[k, n]
                w.writerow([f"{t:.1f}", n, f"{x:.3f}", f"{y:.3f}", f"{z:.3f}", f"{psi:.6f}", f"{theta:.6f}", f"{gamma:.6f}"])
