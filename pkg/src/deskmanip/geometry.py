"""Convex polygon queries (closest point / normal / distance) and the
basis-point-set object encoding.

Everything here is a pure function over immutable values. Distances follow
the interior-is-zero convention: points inside the polygon report distance
0 together with the nearest boundary point and its outward normal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Pose2, RngStream

_EPS = 1e-12


@dataclass(frozen=True)
class ObjectShape:
    """Convex polygon in its local frame, vertices counter-clockwise."""

    vertices: np.ndarray  # (M, 2)
    shape_id: str

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError(f"shape {self.shape_id!r}: need >= 3 planar vertices")
        nxt = np.roll(v, -1, axis=0)
        if np.any(np.all(np.abs(nxt - v) < _EPS, axis=1)):
            raise ValueError(f"shape {self.shape_id!r}: repeated vertices")
        e = nxt - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross < -1e-9):
            raise ValueError(f"shape {self.shape_id!r}: vertices not convex counter-clockwise")

    @property
    def max_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    def area(self) -> float:
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        return float(0.5 * np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]))

    def centroid(self) -> np.ndarray:
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        cr = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
        a = 0.5 * np.sum(cr)
        cx = np.sum((v[:, 0] + nxt[:, 0]) * cr) / (6 * a)
        cy = np.sum((v[:, 1] + nxt[:, 1]) * cr) / (6 * a)
        return np.array([cx, cy])

    def moment_per_mass(self) -> float:
        """Second polar moment about the centroid, per unit mass."""
        v = self.vertices - self.centroid()
        nxt = np.roll(v, -1, axis=0)
        cr = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
        num = np.sum(cr * (np.sum(v * v, axis=1) + np.sum(v * nxt, axis=1)
                           + np.sum(nxt * nxt, axis=1)))
        return float(num / (6.0 * np.sum(cr)))


@dataclass(frozen=True)
class BasisSet:
    """Fixed point set sampled once; identical seed gives identical points."""

    points: np.ndarray  # (N, 2)
    seed: int
    stream_id: int = 0
    radius: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))


@dataclass(frozen=True)
class BPSCode:
    distances: np.ndarray = field()  # (N,), all >= 0

    def __post_init__(self):
        object.__setattr__(self, "distances", np.asarray(self.distances, dtype=float))


def _local_points(p_world: np.ndarray, pose: Pose2) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    d = p_world - np.array([pose.x, pose.y])
    return np.stack([c * d[..., 0] + s * d[..., 1],
                     -s * d[..., 0] + c * d[..., 1]], axis=-1)


def _to_world(p_local: np.ndarray, pose: Pose2) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return np.stack([pose.x + c * p_local[..., 0] - s * p_local[..., 1],
                     pose.y + s * p_local[..., 0] + c * p_local[..., 1]], axis=-1)


def _edge_geometry(shape: ObjectShape):
    cached = getattr(shape, "_edges", None)
    if cached is not None:
        return cached
    a = shape.vertices
    b = np.roll(a, -1, axis=0)
    e = b - a
    lengths = np.linalg.norm(e, axis=1)
    if np.any(lengths < _EPS):
        raise ValueError("degenerate polygon edge")
    # outward normals for CCW winding
    normals = np.stack([e[:, 1], -e[:, 0]], axis=1) / lengths[:, None]
    out = (a, b, e, lengths, normals)
    object.__setattr__(shape, "_edges", out)
    return out


def boundary_points_local(shape: ObjectShape, p_local: np.ndarray):
    """Closest boundary point, outward normal, and signed containment for a
    batch of local-frame query points.

    Returns (points (N,2), normals (N,2), distances (N,), inside (N,)).
    Distances are to the boundary, unsigned; `inside` marks containment.
    """
    p = np.atleast_2d(np.asarray(p_local, dtype=float))
    a, b, e, lengths, edge_normals = _edge_geometry(shape)
    m = a.shape[0]

    rel = p[:, None, :] - a[None, :, :]                     # (N, M, 2)
    t = np.einsum("nmk,mk->nm", rel, e) / (lengths ** 2)[None, :]
    t_clamped = np.clip(t, 0.0, 1.0)
    closest = a[None, :, :] + t_clamped[..., None] * e[None, :, :]
    diff = p[:, None, :] - closest
    d2 = np.einsum("nmk,nmk->nm", diff, diff)
    best = np.argmin(d2, axis=1)                            # (N,)
    idx = np.arange(p.shape[0])
    best_point = closest[idx, best]
    best_t = t_clamped[idx, best]
    dist = np.sqrt(d2[idx, best])

    # rel x e is <= 0 on the interior side of every CCW edge
    cross = rel[..., 0] * e[None, :, 1] - rel[..., 1] * e[None, :, 0]
    inside = np.all(cross <= 1e-12, axis=1)

    # feature normal: edge normal in the segment interior, adjacent-normal
    # bisector when the closest feature is a vertex
    normals = edge_normals[best].copy()
    at_start = best_t < 1e-9
    at_end = best_t > 1.0 - 1e-9
    prev_edge = (best - 1) % m
    next_edge = (best + 1) % m
    for flag, other in ((at_start, prev_edge), (at_end, next_edge)):
        if np.any(flag):
            ns = edge_normals[best[flag]] + edge_normals[other[flag]]
            ns /= np.linalg.norm(ns, axis=1, keepdims=True)
            normals[flag] = ns
    return best_point, normals, dist, inside


def closest_point(shape: ObjectShape, pose: Pose2, p: tuple[float, float]):
    """Closest point on the posed polygon boundary to a world point.

    Returns (point, normal, distance) in world coordinates. Interior
    queries report distance 0 with the nearest boundary point.
    """
    pts, normals, dist = closest_points_batch(shape, pose,
                                              np.asarray(p, dtype=float)[None])
    return pts[0], normals[0], float(dist[0])


def closest_points_batch(shape: ObjectShape, pose: Pose2, p_world: np.ndarray):
    """Vectorized closest_point over (N, 2) world queries.

    Returns (points (N,2), normals (N,2), distances (N,)); interior queries
    report distance 0.
    """
    p_local = _local_points(np.asarray(p_world, dtype=float), pose)
    bp, nrm, dist, inside = boundary_points_local(shape, p_local)
    points = _to_world(bp, pose)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    normals = np.stack([c * nrm[:, 0] - s * nrm[:, 1],
                        s * nrm[:, 0] + c * nrm[:, 1]], axis=1)
    return points, normals, np.where(inside, 0.0, dist)


def surface_distances(shape: ObjectShape, pose: Pose2, p_world: np.ndarray) -> np.ndarray:
    """Batch distance-to-surface for world points (interior gives 0)."""
    p_local = _local_points(np.asarray(p_world, dtype=float), pose)
    _, _, dist, inside = boundary_points_local(shape, p_local)
    return np.where(inside, 0.0, dist)


def sample_basis(rng: RngStream, n: int = 32, radius: float = 0.3) -> BasisSet:
    """n i.i.d. points uniform in a disc of the given radius."""
    if n < 1 or radius <= 0:
        raise ValueError("need n >= 1 and radius > 0")
    u = rng.uniform(size=n)
    ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
    r = radius * np.sqrt(u)
    pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    return BasisSet(points=pts, seed=rng.seed, stream_id=rng.stream_id, radius=radius)


def bps_encode(shape: ObjectShape, pose: Pose2, basis: BasisSet, frame: Pose2) -> BPSCode:
    """Surface distance from each basis point (anchored to `frame`) to the
    posed shape. Translating shape and frame together leaves the code
    unchanged."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    b = basis.points
    world = np.stack([frame.x + c * b[:, 0] - s * b[:, 1],
                      frame.y + s * b[:, 0] + c * b[:, 1]], axis=1)
    return BPSCode(distances=surface_distances(shape, pose, world))


# --- shipped shape set -----------------------------------------------------

def _box(shape_id: str, hx: float, hy: float) -> ObjectShape:
    v = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    return ObjectShape(vertices=v, shape_id=shape_id)


def default_shapes() -> dict[str, ObjectShape]:
    return {
        "sq6": _box("sq6", 0.03, 0.03),
        "sq20": _box("sq20", 0.10, 0.10),
        "bar": _box("bar", 0.02, 0.09),
    }


def save_shape_library(shapes: dict[str, ObjectShape], path: str) -> None:
    doc = {
        "version": 1,
        "shapes": [
            {"shape_id": s.shape_id, "vertices": s.vertices.tolist()}
            for s in shapes.values()
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_shape_library(path: str) -> dict[str, ObjectShape]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported shape library version {doc.get('version')!r}")
    return {
        e["shape_id"]: ObjectShape(vertices=np.array(e["vertices"]), shape_id=e["shape_id"])
        for e in doc["shapes"]
    }
