"""Closed-form two-link inverse kinematics for the arm scripting layer."""

from __future__ import annotations

import math

import numpy as np

from ..core import wrap_angle
from ..physics.morphology import TORSO_HEIGHT, Morphology


def ik_2link(shoulder, target, l1: float, l2: float, elbow_sign: float):
    """Joint angles (q1 absolute shoulder heading, q2 relative elbow) placing
    the wrist of an l1-l2 chain at `target`. `elbow_sign` picks the branch."""
    if l1 <= 0 or l2 <= 0:
        raise ValueError("link lengths must be positive")
    if elbow_sign not in (1, -1, 1.0, -1.0):
        raise ValueError("elbow_sign must be +1 or -1")
    sx, sy = float(shoulder[0]), float(shoulder[1])
    tx, ty = float(target[0]), float(target[1])
    dx, dy = tx - sx, ty - sy
    d = math.hypot(dx, dy)
    if d > l1 + l2 + 1e-12 or d < abs(l1 - l2) - 1e-12:
        raise ValueError(
            f"target at distance {d:.4f} unreachable for links {l1}, {l2}")
    c2 = (d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c2 = min(1.0, max(-1.0, c2))
    q2 = elbow_sign * math.acos(c2)
    q1 = math.atan2(dy, dx) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
    return wrap_angle(q1), q2


ELBOW_SIGN = {"left": 1.0, "right": -1.0}   # elbows flare away from the torso


def arm_joint_angles(m: Morphology, side: str, cart_x: float, wrist,
                     palm_theta: float, finger_q: float) -> np.ndarray:
    """Five joint coordinates [shoulder, elbow, wrist, fingerA, fingerB] that
    put the wrist point and palm heading where asked."""
    mount = m.shoulder_left if side == "left" else m.shoulder_right
    shoulder = (cart_x + mount[0], TORSO_HEIGHT + mount[1])
    q1, q2 = ik_2link(shoulder, wrist, m.upper_len, m.fore_len, ELBOW_SIGN[side])
    qw = wrap_angle(palm_theta - (q1 + q2))
    return np.array([q1, q2, qw, finger_q, finger_q])
