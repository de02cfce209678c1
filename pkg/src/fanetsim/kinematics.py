"""Coordinate frames and RK4 integration of the point-mass kinematic state.

Frames: b (body), t (trajectory: x right, y along track, z up), n (east,
north, up) and e (latitude, longitude, altitude).  The state integrated here
is seven-fold: three attitude angles, the n-frame velocity, and the geodetic
position.  Internally the integrator works on a flat 9-element float list
ordered ``(theta, gamma, psi, v_e, v_n, v_u, beta, lambda, h)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
_POLAR_COS_LIMIT = 1e-9


class PolarSingularity(ValueError):
    """Raised when the longitude rate is evaluated too close to a pole."""


@dataclass(frozen=True)
class EarthModel:
    R_e: float = 6378137.0
    e: float = 1.0 / 298.257
    g: float = 9.80665
    # textbook radii (sin^2 beta) instead of the printed sin(2 beta) forms
    standard_radii: bool = False

    def __post_init__(self) -> None:
        if not self.R_e > 0:
            raise ValueError("R_e must be positive")
        if not 0.0 <= self.e < 1.0:
            raise ValueError("e must lie in [0, 1)")
        if not self.g > 0:
            raise ValueError("g must be positive")


@dataclass(frozen=True)
class Attitude:
    psi: float = 0.0    # course angle, clockwise from north
    theta: float = 0.0  # pitch
    gamma: float = 0.0  # roll

    def normalized(self) -> "Attitude":
        return Attitude(
            psi=self.psi % TWO_PI,
            theta=self.theta,
            gamma=_wrap_pi(self.gamma),
        )


@dataclass(frozen=True)
class GeoPosition:
    beta: float    # latitude (rad)
    lam: float     # longitude (rad)
    h: float       # altitude (m)


@dataclass(frozen=True)
class KinematicState:
    attitude: Attitude
    v_n: np.ndarray
    pos: GeoPosition
    t: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "v_n", np.asarray(self.v_n, dtype=float).reshape(3))

    def as_vector(self) -> list[float]:
        a, v, p = self.attitude, self.v_n, self.pos
        return [a.theta, a.gamma, a.psi, float(v[0]), float(v[1]), float(v[2]), p.beta, p.lam, p.h]

    @classmethod
    def from_vector(cls, y: Sequence[float], t: float) -> "KinematicState":
        att = Attitude(psi=y[2], theta=y[0], gamma=y[1]).normalized()
        return cls(att, np.array(y[3:6], dtype=float), GeoPosition(y[6], y[7], y[8]), t)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.v_n))


@dataclass(frozen=True)
class StateRates:
    """Time derivative of a :class:`KinematicState`."""

    attitude_rate: np.ndarray  # (theta_dot, gamma_dot, psi_dot)
    accel_n: np.ndarray
    beta_dot: float
    lambda_dot: float
    h_dot: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.attitude_rate, self.accel_n, [self.beta_dot, self.lambda_dot, self.h_dot]])


def _wrap_pi(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    if -math.pi < angle <= math.pi:
        return angle
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def _rotation_rows(psi: float, theta: float):
    sp, cp = math.sin(psi), math.cos(psi)
    st, ct = math.sin(theta), math.cos(theta)
    return (
        (cp, ct * sp, -st * sp),
        (-sp, ct * cp, -st * cp),
        (0.0, st, ct),
    )


def rotation_t_to_n(att: Attitude) -> np.ndarray:
    """Rotation matrix taking trajectory-frame vectors into the navigation frame.

    Only course and pitch enter; roll does not rotate the trajectory frame.
    """
    return np.array(_rotation_rows(att.psi, att.theta))


def accel_t_to_n(att: Attitude, a_t: Sequence[float]) -> np.ndarray:
    return rotation_t_to_n(att) @ np.asarray(a_t, dtype=float)


def radii_of_curvature(beta: float, earth: EarthModel) -> tuple[float, float]:
    """Return ``(R_N, R_M)``: prime-vertical and meridian radii.

    By default the first-order forms with ``sin(2*beta)`` are used verbatim;
    ``earth.standard_radii`` switches to ``R_N = R_e(1 + e sin^2 b)`` and
    ``R_M = R_e(1 - 2e + 3e sin^2 b)``.
    """
    R_e, e = earth.R_e, earth.e
    if earth.standard_radii:
        s2 = math.sin(beta) ** 2
        return R_e * (1.0 + e * s2), R_e * (1.0 - 2.0 * e + 3.0 * e * s2)
    s = math.sin(2.0 * beta)
    return R_e * (1.0 - 2.0 * e + 3.0 * e * s), R_e * (1.0 + e * s)


def altitude_length(pos: GeoPosition) -> float:
    """Default length term added to the radii: the altitude itself."""
    return pos.h


LengthFn = Callable[[GeoPosition], float]


def _derivative(y, omega_b, a_t, earth: EarthModel, length_fn: LengthFn | None):
    theta, psi = y[0], y[2]
    beta, h = y[6], y[8]
    cos_beta = math.cos(beta)
    if abs(cos_beta) <= _POLAR_COS_LIMIT:
        raise PolarSingularity(f"latitude {beta!r} too close to a pole")
    rows = _rotation_rows(psi, theta)
    ax, ay, az = a_t
    an = [r[0] * ax + r[1] * ay + r[2] * az for r in rows]
    R_N, R_M = radii_of_curvature(beta, earth)
    L = h if length_fn is None else length_fn(GeoPosition(beta, y[7], h))
    return [
        omega_b[0], omega_b[1], omega_b[2],
        an[0], an[1], an[2],
        y[4] / (R_M + L),
        y[3] / (cos_beta * (R_N + L)),
        y[5],
    ]


def state_derivative(
    s: KinematicState,
    omega_b: Sequence[float],
    a_t: Sequence[float],
    earth: EarthModel,
    length_fn: LengthFn | None = None,
) -> StateRates:
    d = _derivative(s.as_vector(), tuple(omega_b), tuple(a_t), earth, length_fn)
    return StateRates(np.array(d[0:3]), np.array(d[3:6]), d[6], d[7], d[8])


def rk4_vector_step(y, omega_b, a_t, earth, dt, length_fn=None):
    """One classic RK4 step on the raw 9-vector.  Commands are held constant."""
    f = _derivative
    k1 = f(y, omega_b, a_t, earth, length_fn)
    y2 = [yi + 0.5 * dt * ki for yi, ki in zip(y, k1)]
    k2 = f(y2, omega_b, a_t, earth, length_fn)
    y3 = [yi + 0.5 * dt * ki for yi, ki in zip(y, k2)]
    k3 = f(y3, omega_b, a_t, earth, length_fn)
    y4 = [yi + dt * ki for yi, ki in zip(y, k3)]
    k4 = f(y4, omega_b, a_t, earth, length_fn)
    out = [
        yi + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
        for yi, a, b, c, d in zip(y, k1, k2, k3, k4)
    ]
    out[2] %= TWO_PI
    out[1] = _wrap_pi(out[1])
    return out


def rk4_step(
    s: KinematicState,
    omega_b: Sequence[float],
    a_t: Sequence[float],
    earth: EarthModel,
    dt: float,
    max_step: float = 0.01,
    length_fn: LengthFn | None = None,
) -> KinematicState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > max_step * (1.0 + 1e-12):
        raise ValueError(f"dt={dt} exceeds max_step={max_step}")
    y = rk4_vector_step(s.as_vector(), tuple(omega_b), tuple(a_t), earth, dt, length_fn)
    return KinematicState.from_vector(y, s.t + dt)


@dataclass(frozen=True)
class LocalFrame:
    """Flat east-north-up projection anchored at ``origin``.

    x and y are scaled with the radii of curvature at the origin; z is the
    altitude itself, so it is not relative to the origin.
    """

    origin: GeoPosition
    earth: EarthModel = field(default_factory=EarthModel)

    def _scales(self) -> tuple[float, float]:
        R_N, R_M = radii_of_curvature(self.origin.beta, self.earth)
        h0 = self.origin.h
        return (R_N + h0) * math.cos(self.origin.beta), R_M + h0

    def to_local(self, pos: GeoPosition) -> np.ndarray:
        sx, sy = self._scales()
        return np.array([(pos.lam - self.origin.lam) * sx, (pos.beta - self.origin.beta) * sy, pos.h])

    def to_local_arrays(self, beta: np.ndarray, lam: np.ndarray, h: np.ndarray) -> np.ndarray:
        sx, sy = self._scales()
        return np.stack([(lam - self.origin.lam) * sx, (beta - self.origin.beta) * sy, h], axis=-1)

    def to_geo(self, xyz: Sequence[float]) -> GeoPosition:
        sx, sy = self._scales()
        return GeoPosition(self.origin.beta + xyz[1] / sy, self.origin.lam + xyz[0] / sx, float(xyz[2]))

