"""Demonstration clip containers and dataset persistence.

Clips store 30 FPS frames as dense arrays. Velocities are computed once at
generation time (central differences) and stored, never recomputed, so every
downstream consumer sees identical numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from ..core import Pose2
from ..physics.morphology import NUM_BODIES, Morphology

DATASET_VERSION = 1
FPS = 30.0


@dataclass
class MotionClip:
    clip_id: str
    template: str
    shape_id: str
    morphology: Morphology
    body_pos: np.ndarray        # (T, 11, 2)
    body_theta: np.ndarray      # (T, 11)
    body_vel: np.ndarray        # (T, 11, 2)
    body_omega: np.ndarray      # (T, 11)
    obj_pos: np.ndarray         # (T, 2)
    obj_theta: np.ndarray       # (T,)
    obj_vel: np.ndarray         # (T, 2)
    obj_omega: np.ndarray       # (T,)
    contact_flags: np.ndarray   # (T, 11) bool
    contact_points: np.ndarray  # (T, 11, 2), NaN where unflagged
    fps: float = FPS

    def __post_init__(self):
        t = len(self.body_pos)
        if t < 31:
            raise ValueError(f"clip needs at least 31 frames, got {t}")
        shapes = {
            "body_pos": (t, NUM_BODIES, 2), "body_theta": (t, NUM_BODIES),
            "body_vel": (t, NUM_BODIES, 2), "body_omega": (t, NUM_BODIES),
            "obj_pos": (t, 2), "obj_theta": (t,), "obj_vel": (t, 2),
            "obj_omega": (t,), "contact_flags": (t, NUM_BODIES),
            "contact_points": (t, NUM_BODIES, 2),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} shape {got}, expected {want}")

    def __len__(self) -> int:
        return len(self.body_pos)

    @property
    def duration(self) -> float:
        return len(self) / self.fps

    def frame(self, t: int) -> "FrameRef":
        return FrameRef(
            body_poses=[Pose2(*self.body_pos[t, b], self.body_theta[t, b])
                        for b in range(NUM_BODIES)],
            body_vels=np.column_stack([self.body_vel[t], self.body_omega[t]]).copy(),
            obj_pose=Pose2(*self.obj_pos[t], self.obj_theta[t]),
            obj_vel=np.array([*self.obj_vel[t], self.obj_omega[t]]),
            contact_flags=self.contact_flags[t].copy(),
            contact_points=self.contact_points[t].copy(),
        )

    def contact_onsets(self) -> list[int]:
        """Frames where any body newly enters contact."""
        any_c = self.contact_flags.any(axis=1)
        rising = np.flatnonzero(any_c[1:] & ~any_c[:-1]) + 1
        out = list(rising)
        if any_c[0]:
            out.insert(0, 0)
        return out


@dataclass
class FrameRef:
    body_poses: list
    body_vels: np.ndarray      # (11, 3) vx, vy, omega
    obj_pose: Pose2
    obj_vel: np.ndarray        # (3,)
    contact_flags: np.ndarray  # (11,) bool
    contact_points: np.ndarray  # (11, 2)


@dataclass
class Dataset:
    clips: list = field(default_factory=list)
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"train/test splits overlap: {sorted(overlap)}")

    def by_id(self, clip_id: str) -> MotionClip:
        for c in self.clips:
            if c.clip_id == clip_id:
                return c
        raise KeyError(clip_id)

    def split(self, which: str) -> list:
        ids = {"train": self.train_ids, "test": self.test_ids}[which]
        return [self.by_id(i) for i in ids]


def finite_difference_velocities(pos: np.ndarray, fps: float) -> np.ndarray:
    """Central differences with one-sided endpoints, along axis 0."""
    v = np.empty_like(pos)
    v[1:-1] = (pos[2:] - pos[:-2]) * (fps / 2.0)
    v[0] = (pos[1] - pos[0]) * fps
    v[-1] = (pos[-1] - pos[-2]) * fps
    return v


def angular_velocities(theta: np.ndarray, fps: float) -> np.ndarray:
    """Central differences on unwrapped headings, along axis 0."""
    return finite_difference_velocities(np.unwrap(theta, axis=0), fps)


# --- persistence -------------------------------------------------------------

def _morph_to_doc(m: Morphology) -> dict:
    return {f.name: getattr(m, f.name) if not isinstance(getattr(m, f.name), tuple)
            else list(getattr(m, f.name)) for f in fields(m)}


def _morph_from_doc(d: dict) -> Morphology:
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return Morphology(**kw)


def _clip_to_doc(c: MotionClip) -> dict:
    cp = c.contact_points.copy()
    cp[~np.isfinite(cp)] = 0.0   # JSON has no NaN; flags say which entries count
    return {
        "clip_id": c.clip_id, "template": c.template, "shape_id": c.shape_id,
        "fps": c.fps, "morphology": _morph_to_doc(c.morphology),
        "body_pos": c.body_pos.tolist(), "body_theta": c.body_theta.tolist(),
        "body_vel": c.body_vel.tolist(), "body_omega": c.body_omega.tolist(),
        "obj_pos": c.obj_pos.tolist(), "obj_theta": c.obj_theta.tolist(),
        "obj_vel": c.obj_vel.tolist(), "obj_omega": c.obj_omega.tolist(),
        "contact_flags": c.contact_flags.astype(int).tolist(),
        "contact_points": cp.tolist(),
    }


def _clip_from_doc(d: dict) -> MotionClip:
    flags = np.array(d["contact_flags"], dtype=bool)
    cp = np.array(d["contact_points"], dtype=float)
    cp[~flags] = np.nan
    return MotionClip(
        clip_id=d["clip_id"], template=d["template"], shape_id=d["shape_id"],
        fps=d["fps"], morphology=_morph_from_doc(d["morphology"]),
        body_pos=np.array(d["body_pos"]), body_theta=np.array(d["body_theta"]),
        body_vel=np.array(d["body_vel"]), body_omega=np.array(d["body_omega"]),
        obj_pos=np.array(d["obj_pos"]), obj_theta=np.array(d["obj_theta"]),
        obj_vel=np.array(d["obj_vel"]), obj_omega=np.array(d["obj_omega"]),
        contact_flags=flags, contact_points=cp,
    )


def save_dataset(ds: Dataset, path: str) -> None:
    doc = {
        "version": DATASET_VERSION,
        "split": {"train": list(ds.train_ids), "test": list(ds.test_ids)},
        "clips": [_clip_to_doc(c) for c in ds.clips],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_dataset(path: str) -> Dataset:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"malformed dataset file at byte offset {e.pos}: {e.msg}")
    version = doc.get("version")
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version!r}, "
                         f"expected {DATASET_VERSION}")
    return Dataset(
        clips=[_clip_from_doc(d) for d in doc["clips"]],
        train_ids=doc["split"]["train"],
        test_ids=doc["split"]["test"],
    )
