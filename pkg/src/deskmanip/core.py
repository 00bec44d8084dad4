"""Shared planar math: poses, angle wrapping, frame transforms, RNG streams."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi].

    The half-open interval gives every angle a unique representative,
    which the pose property tests rely on.
    """
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    r = math.fmod(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    elif r > math.pi:
        r -= TWO_PI
    return r


@dataclass(frozen=True)
class Pose2:
    """Planar pose: position in meters, heading wrapped into (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("pose position must be finite")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class BodyState:
    """Pose plus planar twist (linear velocity, angular rate)."""

    pose: Pose2
    lin_vel: tuple[float, float] = (0.0, 0.0)
    ang_vel: float = 0.0

    def __post_init__(self):
        vx, vy = self.lin_vel
        if not (math.isfinite(vx) and math.isfinite(vy) and math.isfinite(self.ang_vel)):
            raise ValueError("body velocities must be finite")


def pose_delta(target: Pose2, current: Pose2) -> tuple[float, float, float]:
    """Target pose expressed relative to the current pose.

    The translation is rotated into the current pose's frame; the heading
    difference is wrapped, so antipodal headings stay continuous.
    """
    dxw = target.x - current.x
    dyw = target.y - current.y
    c = math.cos(-current.theta)
    s = math.sin(-current.theta)
    dx = c * dxw - s * dyw
    dy = s * dxw + c * dyw
    return dx, dy, wrap_angle(target.theta - current.theta)


def to_root_frame(p_world: tuple[float, float], root: Pose2) -> tuple[float, float]:
    """Express a world point in the root pose's local frame."""
    dx = p_world[0] - root.x
    dy = p_world[1] - root.y
    c = math.cos(-root.theta)
    s = math.sin(-root.theta)
    return (c * dx - s * dy, s * dx + c * dy)


def from_root_frame(p_local: tuple[float, float], root: Pose2) -> tuple[float, float]:
    """Inverse of to_root_frame."""
    c = math.cos(root.theta)
    s = math.sin(root.theta)
    return (root.x + c * p_local[0] - s * p_local[1],
            root.y + s * p_local[0] + c * p_local[1])


def rotate(v: tuple[float, float], angle: float) -> tuple[float, float]:
    c = math.cos(angle)
    s = math.sin(angle)
    return (c * v[0] - s * v[1], s * v[0] + c * v[1])


class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Philox gives identical draw sequences for identical keys on every
    platform, and independent streams are just distinct stream ids, so
    parallel environments stay reproducible regardless of scheduling.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, substream: int) -> "RngStream":
        """Derive an independent child stream.

        Children are keyed by hashing the substream index into stream_id
        space; the parent's draw position is unaffected.
        """
        child_id = (self.stream_id * 0x9E3779B97F4A7C15 + substream + 1) % (2**64)
        return RngStream(self.seed, child_id)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, a, size=None, p=None):
        return self._gen.choice(a, size=size, p=p)
