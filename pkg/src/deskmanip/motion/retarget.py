"""Cross-embodiment retargeting of demonstration clips.

A clip recorded on one body is replayed on another by keeping the joint
trajectory, rebuilding body poses with the new link lengths, and shifting
the object per frame so its recorded contact points line up with the new
fingertip pads in the least-squares sense. Frames without contact inherit
linearly interpolated offsets so the object path stays smooth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Pose2
from ..geometry import closest_point, default_shapes
from ..physics.morphology import (HAND_BODIES, Morphology,
                                  forward_kinematics,
                                  joint_angles_from_poses, pad_world)
from .clip import (MotionClip, angular_velocities,
                   finite_difference_velocities)

MAX_OBJECT_JUMP = 0.10


def retarget_objective(contact_pts: np.ndarray, pad_targets: np.ndarray,
                       offset) -> float:
    """Sum of squared distances between shifted contact points and pads.

    This is the quantity the per-frame offset minimizes; exposed so the
    closed-form solution can be checked against brute-force search.
    """
    contact_pts = np.asarray(contact_pts, dtype=float)
    pad_targets = np.asarray(pad_targets, dtype=float)
    d = contact_pts + np.asarray(offset, dtype=float) - pad_targets
    return float(np.sum(d * d))


def solve_frame_offset(contact_pts: np.ndarray,
                       pad_targets: np.ndarray) -> np.ndarray:
    """Least-squares translation: mean pad-minus-contact displacement."""
    contact_pts = np.asarray(contact_pts, dtype=float)
    pad_targets = np.asarray(pad_targets, dtype=float)
    if contact_pts.shape != pad_targets.shape or contact_pts.ndim != 2:
        raise ValueError("contact points and pad targets must both be (n, 2)")
    if len(contact_pts) == 0:
        raise ValueError("offset is undefined without contacts")
    return np.mean(pad_targets - contact_pts, axis=0)


def _fill_offsets(offsets: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Linear interpolation across unknown frames, held flat at both ends."""
    t_total = len(offsets)
    idx = np.flatnonzero(known)
    out = offsets.copy()
    ts = np.arange(t_total, dtype=float)
    for axis in range(2):
        out[:, axis] = np.interp(ts, ts[idx], offsets[idx, axis])
    return out


@dataclass
class RetargetResult:
    clip: MotionClip
    offsets: np.ndarray          # (T, 2) object translation applied per frame
    zero_contact: bool           # True when the source had no contacts at all


def retarget_object(clip: MotionClip, target: Morphology) -> RetargetResult:
    t_total = len(clip)
    cart = clip.body_pos[:, 0, 0]
    body_pos = np.zeros_like(clip.body_pos)
    body_theta = np.zeros_like(clip.body_theta)
    for t in range(t_total):
        q = joint_angles_from_poses(clip.body_theta[t])
        poses = forward_kinematics(target, float(cart[t]), q)
        body_pos[t] = poses[:, :2]
        body_theta[t] = poses[:, 2]

    known = clip.contact_flags.any(axis=1)
    offsets = np.zeros((t_total, 2))
    if known.any():
        for t in np.flatnonzero(known):
            js = np.flatnonzero(clip.contact_flags[t])
            pads = pad_world(target,
                             np.column_stack([body_pos[t], body_theta[t]]))
            offsets[t] = solve_frame_offset(clip.contact_points[t, js],
                                            pads[js])
        offsets = _fill_offsets(offsets, known)
    zero_contact = not bool(known.any())

    obj_pos = clip.obj_pos + offsets
    shape = default_shapes()[clip.shape_id]
    contact_points = np.full_like(clip.contact_points, np.nan)
    for t in np.flatnonzero(known):
        op = Pose2(obj_pos[t, 0], obj_pos[t, 1], clip.obj_theta[t])
        pads = pad_world(target, np.column_stack([body_pos[t], body_theta[t]]))
        for j in np.flatnonzero(clip.contact_flags[t]):
            pt, _, _ = closest_point(shape, op, tuple(pads[j]))
            contact_points[t, j] = pt

    fps = clip.fps
    new_clip = MotionClip(
        clip_id=clip.clip_id + "_rt", template=clip.template,
        shape_id=clip.shape_id, morphology=target,
        body_pos=body_pos, body_theta=body_theta,
        body_vel=finite_difference_velocities(body_pos, fps),
        body_omega=angular_velocities(body_theta, fps),
        obj_pos=obj_pos, obj_theta=clip.obj_theta.copy(),
        obj_vel=finite_difference_velocities(obj_pos, fps),
        obj_omega=angular_velocities(clip.obj_theta, fps),
        contact_flags=clip.contact_flags.copy(),
        contact_points=contact_points, fps=fps)
    return RetargetResult(clip=new_clip, offsets=offsets,
                          zero_contact=zero_contact)


def filter_clip(clip: MotionClip) -> tuple[bool, str]:
    """Sanity screen for clips entering a dataset.

    Rejects object teleports (per-frame jump beyond MAX_OBJECT_JUMP) and
    contact flags on bodies that cannot grip (anything but palms and
    fingers). Returns (accepted, reason).
    """
    bad = np.flatnonzero(clip.contact_flags.any(axis=0))
    for j in bad:
        if int(j) not in HAND_BODIES:
            return False, f"non_hand contact on body {int(j)}"
    if len(clip) > 1:
        step = np.linalg.norm(np.diff(clip.obj_pos, axis=0), axis=1)
        if float(step.max()) > MAX_OBJECT_JUMP:
            t = int(np.argmax(step))
            return False, (f"jump of {step.max():.3f} m between frames "
                           f"{t} and {t + 1}")
    return True, "ok"
