"""Reference paths and speed profiles.

A :class:`Path` is an arc-length parameterized curve traversed according to a
speed profile. Its sample at time ``t`` is a :class:`PathReference` holding the
desired planar position, velocity and heading (tangent angle).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class InvalidPathError(ValueError):
    pass


@dataclass(frozen=True)
class PathReference:
    r: np.ndarray
    rdot: np.ndarray
    theta: float
    theta_rate: float = 0.0


@dataclass(frozen=True)
class SpeedProfile:
    """Rest-to-rest speed profile over ``distance``.

    ``trapezoid`` accelerates at ``accel`` up to ``v_max``, cruises, and
    decelerates; it degrades to a triangle when the distance is too short.
    ``triangle`` accelerates to the midpoint and back, peaking at
    ``min(v_max, sqrt(accel * distance))``.
    """

    kind: str = "trapezoid"
    v_max: float = 0.5
    accel: float = 0.25
    distance: float | None = None

    def __post_init__(self):
        if self.kind not in ("trapezoid", "triangle"):
            raise InvalidPathError(f"unknown speed profile kind {self.kind!r}")
        if not (self.v_max > 0 and self.accel > 0):
            raise InvalidPathError("v_max and accel must be positive")
        if self.distance is not None and self.distance < 0:
            raise InvalidPathError("distance must be non-negative")

    def over(self, distance: float) -> "SpeedProfile":
        return replace(self, distance=float(distance))

    @property
    def _shape(self) -> tuple[float, float, float]:
        """(peak speed, acceleration used, cruise duration)."""
        D = self.distance or 0.0
        if D == 0.0:
            return 0.0, self.accel, 0.0
        if self.kind == "triangle":
            peak = min(self.v_max, math.sqrt(self.accel * D))
            return peak, peak * peak / D, 0.0
        if D >= self.v_max ** 2 / self.accel:
            return self.v_max, self.accel, (D - self.v_max ** 2 / self.accel) / self.v_max
        return math.sqrt(self.accel * D), self.accel, 0.0

    @property
    def duration(self) -> float:
        peak, a, cruise = self._shape
        return 0.0 if peak == 0.0 else 2.0 * peak / a + cruise

    def evaluate(self, t: float) -> tuple[float, float, float]:
        """Distance travelled, speed and acceleration at time ``t`` (clamped)."""
        peak, a, cruise = self._shape
        D = self.distance or 0.0
        if peak == 0.0 or t <= 0.0:
            return 0.0, 0.0, 0.0
        ta = peak / a
        T = 2.0 * ta + cruise
        if t >= T:
            return D, 0.0, 0.0
        if t < ta:
            return 0.5 * a * t * t, a * t, a
        if t < ta + cruise:
            return 0.5 * a * ta * ta + peak * (t - ta), peak, 0.0
        tr = T - t
        return D - 0.5 * a * tr * tr, a * tr, -a


# --- geometry ---------------------------------------------------------------

class _Geometry:
    length: float

    def point(self, s: float) -> np.ndarray:
        raise NotImplementedError

    def tangent(self, s: float) -> np.ndarray:
        raise NotImplementedError

    def curvature(self, s: float, h: float = 1e-5) -> float:
        s0, s1 = max(0.0, s - h), min(self.length, s + h)
        a0 = _angle(self.tangent(s0))
        a1 = _angle(self.tangent(s1))
        return _wrap(a1 - a0) / (s1 - s0)

    def frame(self, s: float) -> tuple[np.ndarray, np.ndarray, float]:
        """Point, unit tangent and signed curvature at arc length ``s``."""
        return self.point(s), self.tangent(s), self.curvature(s)


@dataclass
class _Line(_Geometry):
    start: np.ndarray
    heading: float
    length: float

    def point(self, s):
        return self.start + s * np.array([math.cos(self.heading), math.sin(self.heading)])

    def tangent(self, s):
        return np.array([math.cos(self.heading), math.sin(self.heading)])

    def curvature(self, s, h=0.0):
        return 0.0


@dataclass
class _Circle(_Geometry):
    center: np.ndarray
    radius: float
    phase0: float = -math.pi / 2

    @property
    def length(self):
        return 2.0 * math.pi * self.radius

    def point(self, s):
        phi = self.phase0 + s / self.radius
        return self.center + self.radius * np.array([math.cos(phi), math.sin(phi)])

    def tangent(self, s):
        phi = self.phase0 + s / self.radius
        return np.array([-math.sin(phi), math.cos(phi)])

    def curvature(self, s, h=0.0):
        return 1.0 / self.radius


@dataclass
class _Cardioid(_Geometry):
    """Polar ``rho = a (1 - cos phi)`` about ``origin``; starts and ends at the cusp."""

    a: float
    origin: np.ndarray

    @property
    def length(self):
        return 8.0 * self.a

    def _phi(self, s):
        s = min(max(s, 0.0), self.length)
        return 2.0 * math.acos(max(-1.0, min(1.0, 1.0 - s / (4.0 * self.a))))

    def point(self, s):
        phi = self._phi(s)
        rho = self.a * (1.0 - math.cos(phi))
        return self.origin + rho * np.array([math.cos(phi), math.sin(phi)])

    def tangent(self, s):
        phi = self._phi(s)
        return np.array([math.cos(phi / 2) * (2 * math.cos(phi) - 1),
                         math.sin(phi / 2) * (1 + 2 * math.cos(phi))])


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


@dataclass
class _Sinusoid(_Geometry):
    """``y = amplitude sin(2 pi x / wavelength)`` for ``x`` in ``[0, periods * wavelength]``."""

    amplitude: float
    wavelength: float
    periods: float
    origin: np.ndarray
    _xs: np.ndarray = field(init=False, repr=False)
    _ss: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._xs = np.linspace(0.0, self.periods * self.wavelength, int(400 * self.periods) + 1)
        seg = np.array([self._arc(a, b) for a, b in zip(self._xs[:-1], self._xs[1:])])
        self._ss = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self):
        return float(self._ss[-1])

    def _slope(self, x):
        k = 2.0 * math.pi / self.wavelength
        return self.amplitude * k * np.cos(k * x)

    def _arc(self, a, b):
        xm, xr = 0.5 * (a + b), 0.5 * (b - a)
        x = xm + xr * _GL_X
        return float(xr * _GL_W @ np.sqrt(1.0 + self._slope(x) ** 2))

    def _x_of_s(self, s):
        s = min(max(s, 0.0), self.length)
        i = int(np.clip(np.searchsorted(self._ss, s) - 1, 0, len(self._xs) - 2))
        x0, s0 = self._xs[i], self._ss[i]
        x = x0 + (s - s0) / (self._ss[i + 1] - s0) * (self._xs[i + 1] - x0)
        for _ in range(20):
            err = s0 + self._arc(x0, x) - s
            step = err / math.sqrt(1.0 + float(self._slope(x)) ** 2)
            x -= step
            if abs(step) < 1e-15:
                break
        return x

    def point(self, s):
        x = self._x_of_s(s)
        y = self.amplitude * math.sin(2.0 * math.pi * x / self.wavelength)
        return self.origin + np.array([x, y])

    def tangent(self, s):
        return self.frame(s)[1]

    def frame(self, s):
        x = self._x_of_s(s)
        k = 2.0 * math.pi / self.wavelength
        dy = self.amplitude * k * math.cos(k * x)
        ddy = -self.amplitude * k * k * math.sin(k * x)
        n = math.sqrt(1.0 + dy * dy)
        point = self.origin + np.array([x, self.amplitude * math.sin(k * x)])
        return point, np.array([1.0 / n, dy / n]), ddy / n ** 3


def _angle(v) -> float:
    return math.atan2(v[1], v[0])


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# --- time parameterization ----------------------------------------------------

@dataclass
class _Move:
    geometry: _Geometry
    profile: SpeedProfile
    t_start: float

    @property
    def duration(self):
        return self.profile.duration

    def sample(self, t):
        s, v, _ = self.profile.evaluate(t - self.t_start)
        point, tan, kappa = self.geometry.frame(s)
        return PathReference(point, v * tan, _angle(tan), v * kappa)


@dataclass
class _Turn:
    point: np.ndarray
    theta_from: float
    sweep: float
    rate: float
    t_start: float

    @property
    def duration(self):
        return abs(self.sweep) / self.rate

    def sample(self, t):
        tau = min(max(t - self.t_start, 0.0), self.duration)
        theta = _wrap(self.theta_from + math.copysign(self.rate * tau, self.sweep))
        moving = 0.0 < tau < self.duration
        return PathReference(self.point.copy(), np.zeros(2), theta,
                             math.copysign(self.rate, self.sweep) if moving else 0.0)


class Path:
    """A sequence of moves along curves and in-place turns."""

    def __init__(self, shape: str, segments: list):
        self.shape = shape
        self.segments = segments
        self.T_end = segments[-1].t_start + segments[-1].duration
        self.corner_times = [seg.t_start for seg in segments[1:] if isinstance(seg, _Turn)]

    @property
    def start(self) -> np.ndarray:
        return self.sample(0.0).r

    @property
    def length(self) -> float:
        return sum(seg.geometry.length for seg in self.segments if isinstance(seg, _Move))

    def sample(self, t: float) -> PathReference:
        """Reference at time ``t``; clamped to the terminal point at rest after ``T_end``."""
        t = max(0.0, float(t))
        if t >= self.T_end:
            ref = self.segments[-1].sample(self.T_end)
            return PathReference(ref.r, np.zeros(2), ref.theta, 0.0)
        for seg in self.segments:
            if t < seg.t_start + seg.duration:
                return seg.sample(t)
        return self.segments[-1].sample(t)


def sample_reference(path: Path, t: float) -> PathReference:
    return path.sample(t)


def make_path(shape: str, geometry: dict | None = None,
              profile: SpeedProfile | None = None) -> Path:
    """Build one of the reference paths.

    Shapes and geometry keys (all lengths in metres, defaults in brackets):

    - ``circle``: radius [2.0]; starts at the origin heading +x, counter-clockwise.
    - ``cardioid``: a [1.0]; polar ``a (1 - cos phi)``, starts and ends at the cusp.
    - ``sinusoid``: amplitude [0.5], wavelength [4.0], periods [2].
    - ``square``: side [2.0], turn_rate in deg/s [30]; stops at every corner
      and turns in place. Uses a triangle profile per side.
    - ``line``: length [5.0], heading in rad [0].
    - ``point``: duration [10.0]; a stationary target.

    Every shape accepts ``origin`` [(0, 0)].
    """
    geometry = dict(geometry or {})
    profile = profile or SpeedProfile()
    origin = np.asarray(geometry.pop("origin", (0.0, 0.0)), dtype=float)

    def take(key, default):
        val = float(geometry.pop(key, default))
        if not val > 0 and key not in ("heading",):
            raise InvalidPathError(f"{shape} geometry parameter {key!r} must be positive, got {val}")
        return val

    if shape == "circle":
        R = take("radius", 2.0)
        geo = _Circle(origin + np.array([0.0, R]), R)
    elif shape == "cardioid":
        geo = _Cardioid(take("a", 1.0), origin)
    elif shape == "sinusoid":
        geo = _Sinusoid(take("amplitude", 0.5), take("wavelength", 4.0), take("periods", 2.0), origin)
    elif shape == "line":
        geo = _Line(origin, float(geometry.pop("heading", 0.0)), take("length", 5.0))
    elif shape == "point":
        T = take("duration", 10.0)
        heading = float(geometry.pop("heading", 0.0))
        _reject_unknown(shape, geometry)
        return Path(shape, [_Hold(origin, heading, T)])
    elif shape == "square":
        side = take("side", 2.0)
        rate_deg = take("turn_rate", 30.0)
        if rate_deg > 45.0:
            raise InvalidPathError(f"turn_rate {rate_deg} deg/s exceeds the 45 deg/s limit")
        rate = math.radians(rate_deg)
        _reject_unknown(shape, geometry)
        tri = replace(profile, kind="triangle").over(side)
        segments, t = [], 0.0
        corner = origin.copy()
        for i in range(4):
            heading = i * math.pi / 2
            if i:
                turn = _Turn(corner.copy(), heading - math.pi / 2, math.pi / 2, rate, t)
                segments.append(turn)
                t += turn.duration
            move = _Move(_Line(corner.copy(), heading, side), tri, t)
            segments.append(move)
            t += move.duration
            corner = corner + side * np.array([math.cos(heading), math.sin(heading)])
        return Path(shape, segments)
    else:
        raise InvalidPathError(f"unknown path shape {shape!r}")
    _reject_unknown(shape, geometry)
    if geo.length <= 0:
        raise InvalidPathError("zero-length path")
    return Path(shape, [_Move(geo, profile.over(geo.length), 0.0)])


@dataclass
class _Hold:
    point: np.ndarray
    theta: float
    duration: float
    t_start: float = 0.0

    def sample(self, t):
        return PathReference(self.point.copy(), np.zeros(2), self.theta, 0.0)


def _reject_unknown(shape, leftover):
    if leftover:
        raise InvalidPathError(f"unknown {shape} geometry parameters: {sorted(leftover)}")
