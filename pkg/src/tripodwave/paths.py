"""Beam-displacement trajectories d(t)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CONTINUITY_TOL = 1e-9


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    """Straight displacement from ``start`` along ``direction`` at ``speed``.

    With ``ramp > 0`` the speed follows a cosine ramp of that duration at both
    ends; the peak speed is raised so the segment still covers
    ``speed * duration``.
    """

    start: tuple[float, float]
    direction: tuple[float, float]
    speed: float
    duration: float
    ramp: float = 0.0

    def __post_init__(self):
        n = math.hypot(*self.direction)
        if abs(n - 1.0) > 1e-12:
            raise PathError(f"line direction {self.direction} is not a unit vector")
        if self.speed < 0 or self.duration <= 0:
            raise PathError("line needs speed >= 0 and duration > 0")
        if not 0 <= 2 * self.ramp < self.duration:
            raise PathError("ramp must be shorter than half the segment")

    @property
    def length(self) -> float:
        return self.speed * self.duration

    def _peak(self) -> float:
        return self.speed * self.duration / (self.duration - self.ramp)

    def _distance(self, t: float) -> float:
        r = self.ramp
        if r == 0:
            return self.speed * t
        vp, T = self._peak(), self.duration

        def up(s):
            return 0.5 * s - r / (2 * math.pi) * math.sin(math.pi * s / r)

        if t < r:
            return vp * up(t)
        if t <= T - r:
            return vp * (0.5 * r + (t - r))
        return vp * (T - r) - vp * up(T - t)

    def _speed(self, t: float) -> float:
        r = self.ramp
        if r == 0:
            return self.speed
        vp, T = self._peak(), self.duration
        if t < r:
            return vp * 0.5 * (1 - math.cos(math.pi * t / r))
        if t <= T - r:
            return vp
        return vp * 0.5 * (1 - math.cos(math.pi * (T - t) / r))

    def position(self, t: float) -> np.ndarray:
        return np.asarray(self.start) + self._distance(t) * np.asarray(self.direction)

    def velocity(self, t: float) -> np.ndarray:
        return self._speed(t) * np.asarray(self.direction)

    @property
    def end(self) -> np.ndarray:
        return self.position(self.duration)


@dataclass(frozen=True)
class Arc:
    """Circular displacement about ``center``.

    The radius vector sits at angle ``start_angle + omega * t`` (radians from
    the x axis towards z). ``omega`` is signed: negative is clockwise in the
    x-z plane; its magnitude is speed / radius.
    """

    center: tuple[float, float]
    radius: float
    omega: float
    start_angle: float
    sweep: float

    def __post_init__(self):
        if self.radius <= 0 or self.omega == 0:
            raise PathError("arc needs radius > 0 and nonzero angular velocity")
        if self.sweep == 0 or math.copysign(1, self.sweep) != math.copysign(1, self.omega):
            raise PathError("arc sweep must be nonzero and share the sign of omega")

    @property
    def speed(self) -> float:
        return abs(self.omega) * self.radius

    @property
    def duration(self) -> float:
        return self.sweep / self.omega

    @property
    def length(self) -> float:
        return abs(self.sweep) * self.radius

    def position(self, t: float) -> np.ndarray:
        a = self.start_angle + self.omega * t
        return np.asarray(self.center) + self.radius * np.array([math.cos(a), math.sin(a)])

    def velocity(self, t: float) -> np.ndarray:
        a = self.start_angle + self.omega * t
        return self.omega * self.radius * np.array([-math.sin(a), math.cos(a)])

    def heading(self, t: float) -> float:
        """Angle of the velocity vector from the x axis."""
        return self.start_angle + self.omega * t + math.copysign(math.pi / 2, self.omega)

    @property
    def end(self) -> np.ndarray:
        return self.position(self.duration)


class BeamPath:
    """Ordered, continuous list of segments starting at t = 0."""

    def __init__(self, segments, name: str = ""):
        self.segments = tuple(segments)
        self.name = name
        if not self.segments:
            raise PathError("a path needs at least one segment")
        for a, b in zip(self.segments, self.segments[1:]):
            gap = np.linalg.norm(a.end - b.position(0.0))
            if gap > CONTINUITY_TOL * max(1.0, np.linalg.norm(a.end)):
                raise PathError(f"path is discontinuous between segments (gap {gap:.3g})")
        self.starts = np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    @property
    def duration(self) -> float:
        return float(self.starts[-1])

    @property
    def is_polygonal(self) -> bool:
        return all(isinstance(s, Line) for s in self.segments)

    @property
    def corner_times(self) -> list[float]:
        return [float(t) for t in self.starts[1:]]

    def locate(self, t: float):
        if not (-1e-9 <= t <= self.duration + 1e-9):
            raise PathError(f"t={t} outside the path duration [0, {self.duration}]")
        t = min(max(t, 0.0), self.duration)
        i = int(np.searchsorted(self.starts, t, side="right") - 1)
        i = min(max(i, 0), len(self.segments) - 1)
        return self.segments[i], t - self.starts[i]

    def __repr__(self):
        return f"BeamPath({self.name!r}, {len(self.segments)} segments, T={self.duration:g})"


def displacement_at(path: BeamPath, t: float) -> np.ndarray:
    seg, tl = path.locate(t)
    return seg.position(tl)


def velocity_at(path: BeamPath, t: float) -> np.ndarray:
    seg, tl = path.locate(t)
    return seg.velocity(tl)


# -- builders ---------------------------------------------------------------

def unit(angle: float) -> tuple[float, float]:
    return (math.cos(angle), math.sin(angle))


def polygon(legs, start=(0.0, 0.0), name: str = "", ramp: float = 0.0) -> BeamPath:
    """Chain straight legs given as (direction, speed, duration) triples."""
    segs = []
    pos = np.asarray(start, dtype=float)
    for direction, speed, duration in legs:
        d = np.asarray(direction, dtype=float)
        d = tuple(d / np.linalg.norm(d))
        seg = Line(tuple(pos), d, float(speed), float(duration), ramp)
        segs.append(seg)
        pos = seg.end
    return BeamPath(segs, name)


def rest(duration: float, at=(0.0, 0.0), name: str = "rest") -> BeamPath:
    return BeamPath([Line(tuple(map(float, at)), (1.0, 0.0), 0.0, float(duration))], name)


def circle(radius: float, speed: float, sweep: float = -2 * math.pi, heading: float = math.pi / 2,
           start=(0.0, 0.0), tangent_time: float = 0.0, name: str = "circle") -> BeamPath:
    """Arc starting at ``start`` moving along ``heading``, turning by ``sweep``.

    Negative sweep turns clockwise. With ``tangent_time > 0`` the beams then
    continue along the final tangent at the same speed.
    """
    omega = math.copysign(speed / radius, sweep)
    # Radius vector is the heading rotated back by +-90 degrees.
    a0 = heading - math.copysign(math.pi / 2, omega)
    center = np.asarray(start, dtype=float) - radius * np.array(unit(a0))
    arc = Arc(tuple(center), float(radius), omega, a0, float(sweep))
    segs = [arc]
    if tangent_time > 0:
        segs.append(Line(tuple(arc.end), unit(arc.heading(arc.duration)), float(speed), float(tangent_time)))
    return BeamPath(segs, name)


# Square corners: A -> B is +x, B -> C is -z (clockwise in the x-z plane).
EAST, WEST, NORTH, SOUTH = (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)


def square(side: float, speeds, clockwise: bool = True, legs: int = 4, name: str = "") -> BeamPath:
    dirs = [EAST, SOUTH, WEST, NORTH] if clockwise else [SOUTH, EAST, NORTH, WEST]
    speeds = list(speeds) if np.ndim(speeds) else [speeds] * 4
    plan = [(dirs[i], speeds[i], side / speeds[i]) for i in range(legs)]
    return polygon(plan, name=name or ("square-cw" if clockwise else "square-ccw"))


def triangle(side: float, speed: float, clockwise: bool = True, legs: int = 3, name: str = "") -> BeamPath:
    turn = -2 * math.pi / 3 if clockwise else 2 * math.pi / 3
    plan = [(unit(i * turn), speed, side / speed) for i in range(legs)]
    return polygon(plan, name=name or ("triangle-cw" if clockwise else "triangle-ccw"))


def builtin_scenarios(scale: str = "full") -> dict[str, BeamPath]:
    """Named paths at the full-size geometry (``"full"``) or the desk-scale test variant."""
    if scale == "full":
        a, circle_r = 100.0, 75.0
        sq_speeds = [5.0, 5.0, 2.5, 2.5]
    elif scale == "test":
        a, circle_r = 40.0, 30.0
        sq_speeds = [5.0, 5.0, 2.5, 2.5]
    else:
        raise PathError(f"unknown scale {scale!r}")
    return {
        "square-cw": square(a, sq_speeds, clockwise=True),
        "square-ccw": square(a, [5.0, 5.0, 5.0, 2.5], clockwise=False),
        "triangle-cw": triangle(a, 5.0, clockwise=True),
        "triangle-ccw": triangle(a, 5.0, clockwise=False),
        "circle": circle(circle_r, 1.5),
        "circle-then-tangent": circle(circle_r, 1.5, sweep=-math.pi / 3, tangent_time=50.0,
                                      name="circle-then-tangent"),
    }
