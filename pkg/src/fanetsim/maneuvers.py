"""Maneuver primitives and flight plans.

Each segment kind maps to a constant ``(omega_b, a_t)`` command pair: the
attitude angular velocity ordered ``(theta_dot, gamma_dot, psi_dot)`` and the
trajectory-frame acceleration.  Plans are integrated with RK4 into sampled
trajectories.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kinematics import (
    Attitude,
    EarthModel,
    GeoPosition,
    KinematicState,
    LocalFrame,
    rk4_vector_step,
)

_ZERO = (0.0, 0.0, 0.0)


class OutOfPlanRange(ValueError):
    pass


class Kind(str, enum.Enum):
    UNIFORM_RECTILINEAR = "uniform_rectilinear"
    UNIFORM_ACCEL = "uniform_accel"
    COORD_TURN_BANK = "coord_turn_bank"
    COORD_TURN_HOLD = "coord_turn_hold"
    COORD_TURN_LEVEL = "coord_turn_level"
    CLIMB_ENTRY = "climb_entry"
    CLIMB_HOLD = "climb_hold"
    CLIMB_EXIT = "climb_exit"


@dataclass(frozen=True)
class ManeuverSegment:
    kind: Kind
    duration: float
    a: float = 0.0
    gamma_rate: float = 0.0
    psi_rate: float = 0.0
    theta_rate: float = 0.0
    r: float = 0.0
    gamma_target: float = 0.0
    theta_target: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.duration > 0:
            raise ValueError(f"{self.kind.value}: duration must be positive")
        if self.kind is Kind.COORD_TURN_HOLD and not abs(self.gamma_target) < math.pi / 2:
            raise ValueError("turn hold needs |gamma_target| < pi/2")
        if self.kind in (Kind.CLIMB_ENTRY, Kind.CLIMB_EXIT) and not self.r > 0:
            raise ValueError(f"{self.kind.value}: climb radius r must be positive")

    def command(self, g: float = 9.80665) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
        """The ``(omega_b, a_t)`` pair for this segment kind."""
        k = self.kind
        if k is Kind.UNIFORM_RECTILINEAR or k is Kind.CLIMB_HOLD:
            return _ZERO, _ZERO
        if k is Kind.UNIFORM_ACCEL:
            return _ZERO, (0.0, self.a, 0.0)
        if k is Kind.COORD_TURN_BANK:
            return (0.0, self.gamma_rate, 0.0), _ZERO
        if k is Kind.COORD_TURN_HOLD:
            return (0.0, 0.0, self.psi_rate), (0.0, 0.0, g * math.tan(self.gamma_target))
        if k is Kind.COORD_TURN_LEVEL:
            return (0.0, -self.gamma_rate, 0.0), _ZERO
        centripetal = self.theta_rate ** 2 * self.r
        if k is Kind.CLIMB_ENTRY:
            return (self.theta_rate, 0.0, 0.0), (0.0, 0.0, centripetal)
        return (-self.theta_rate, 0.0, 0.0), (0.0, 0.0, -centripetal)


def integration_accel(kind: Kind, a_t: Sequence[float]) -> tuple[float, float, float]:
    """Trajectory-frame acceleration actually fed to the integrator.

    The banked-turn lift term is carried on the vertical axis of the command
    pair.  In the unrolled trajectory frame the turn-producing component lies
    on the horizontal-right axis, so it is moved there; everything else
    passes through.
    """
    if kind is Kind.COORD_TURN_HOLD:
        return (a_t[2], 0.0, 0.0)
    return (a_t[0], a_t[1], a_t[2])


@dataclass
class FlightPlan:
    segments: list[ManeuverSegment]
    initial: KinematicState
    _starts: list[float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("flight plan needs at least one segment")
        t = self.initial.t
        self._starts = []
        for seg in self.segments:
            self._starts.append(t)
            t += seg.duration

    @property
    def t_start(self) -> float:
        return self.initial.t

    @property
    def t_end(self) -> float:
        return self._starts[-1] + self.segments[-1].duration

    def boundaries(self) -> list[float]:
        return self._starts[1:]

    def segment_at(self, t: float) -> ManeuverSegment:
        if t < self.t_start - 1e-12 or t > self.t_end + 1e-9:
            raise OutOfPlanRange(f"t={t} outside plan span [{self.t_start}, {self.t_end}]")
        i = max(0, bisect_right(self._starts, t) - 1)
        return self.segments[i]


def command_at(plan: FlightPlan, t: float, g: float = 9.80665):
    return plan.segment_at(t).command(g)


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    pos: GeoPosition
    v_n: np.ndarray
    attitude: Attitude


def generate_trajectory(
    plan: FlightPlan,
    earth: EarthModel,
    dt: float = 0.01,
    t_end: float | None = None,
    export_interval: float = 0.1,
) -> list[TrajectorySample]:
    """Integrate ``plan`` and return samples at every multiple of ``export_interval``.

    Steps never straddle a segment boundary or an export instant: each span
    between consecutive breakpoints is cut into equal sub-steps no longer
    than ``dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    t0 = plan.t_start
    t_end = plan.t_end if t_end is None else t_end
    if t_end > plan.t_end + 1e-9:
        raise OutOfPlanRange(f"t_end={t_end} beyond plan end {plan.t_end}")
    n_export = int(math.floor((t_end - t0) / export_interval + 1e-9))
    exports = [t0 + i * export_interval for i in range(n_export + 1)]
    cuts = sorted(set(round(b, 9) for b in plan.boundaries() if t0 < b < t_end))
    breaks = sorted(set(exports) | set(cuts))
    export_set = set(exports)

    y = plan.initial.as_vector()
    samples = [_sample(y, t0)]
    t = t0
    for t_next in breaks[1:]:
        span = t_next - t
        if span > 1e-12:
            seg = plan.segment_at(t + 0.5 * span)
            omega, a_cmd = seg.command(earth.g)
            a_int = integration_accel(seg.kind, a_cmd)
            n = max(1, math.ceil(span / dt - 1e-9))
            h = span / n
            for _ in range(n):
                y = rk4_vector_step(y, omega, a_int, earth, h)
        t = t_next
        if t_next in export_set:
            samples.append(_sample(y, t_next))
    return samples


def _sample(y, t: float) -> TrajectorySample:
    s = KinematicState.from_vector(y, t)
    return TrajectorySample(t, s.pos, s.v_n, s.attitude)


def trajectory_arrays(samples: Sequence[TrajectorySample], frame: LocalFrame) -> dict[str, np.ndarray]:
    """Column arrays ``t, xyz, v_n, att (psi, theta, gamma)`` for a sample list."""
    t = np.array([s.t for s in samples])
    beta = np.array([s.pos.beta for s in samples])
    lam = np.array([s.pos.lam for s in samples])
    h = np.array([s.pos.h for s in samples])
    return {
        "t": t,
        "geo": np.stack([beta, lam, h], axis=1),
        "xyz": frame.to_local_arrays(beta, lam, h),
        "v_n": np.array([s.v_n for s in samples]),
        "att": np.array([[s.attitude.psi, s.attitude.theta, s.attitude.gamma] for s in samples]),
    }


# --- plan builders -------------------------------------------------------

def coordinated_turn(
    heading_change: float,
    speed: float,
    bank_angle: float,
    bank_rate: float,
    g: float = 9.80665,
) -> list[ManeuverSegment]:
    """Bank, hold and level segments that change course by ``heading_change``.

    The bank sign follows the turn direction (positive = right turn).  The turn
    rate is the coordinated value ``g tan(bank) / speed``, and the hold lasts
    ``heading_change / psi_rate``.
    """
    if heading_change == 0:
        raise ValueError("heading_change must be nonzero")
    sign = 1.0 if heading_change > 0 else -1.0
    gamma = sign * abs(bank_angle)
    gamma_rate = sign * abs(bank_rate)
    psi_rate = g * math.tan(gamma) / speed
    bank_time = abs(gamma / gamma_rate)
    return [
        ManeuverSegment(Kind.COORD_TURN_BANK, bank_time, gamma_rate=gamma_rate, gamma_target=gamma),
        ManeuverSegment(Kind.COORD_TURN_HOLD, heading_change / psi_rate, psi_rate=psi_rate, gamma_target=gamma),
        ManeuverSegment(Kind.COORD_TURN_LEVEL, bank_time, gamma_rate=gamma_rate, gamma_target=gamma),
    ]


def pitch_change(delta: float, speed: float, theta_rate: float) -> ManeuverSegment:
    """A single constant-rate pitch segment changing pitch by ``delta``.

    Pitching up uses the entry command, pitching down the exit command; the
    vertical-circle radius is ``speed / theta_rate`` so the velocity vector
    follows the attitude.
    """
    if delta == 0:
        raise ValueError("delta must be nonzero")
    rate = abs(theta_rate)
    kind = Kind.CLIMB_ENTRY if delta > 0 else Kind.CLIMB_EXIT
    return ManeuverSegment(kind, abs(delta) / rate, theta_rate=rate, r=speed / rate, theta_target=delta)


def straight(duration: float) -> ManeuverSegment:
    return ManeuverSegment(Kind.UNIFORM_RECTILINEAR, duration)


def level_state(pos: GeoPosition, speed: float, psi: float = 0.0, t: float = 0.0) -> KinematicState:
    """Level, wings-level flight along course ``psi``."""
    v = np.array([speed * math.sin(psi), speed * math.cos(psi), 0.0])
    return KinematicState(Attitude(psi=psi), v, pos, t)
