"""Dual-arm cart manipulator morphology: body layout, joint table, forward
kinematics, and joint-coordinate extraction from body poses.

Body order is fixed everywhere in the project:
  0 torso (cart), 1-5 left arm (upper, fore, palm, fingerA, fingerB),
  6-10 right arm, and the free object rides as index 11 in solver arrays.

Link frames put the center of mass at the origin with +x running from the
proximal joint to the distal end, so the proximal anchor is (-L/2, 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import Pose2, wrap_angle

BODY_NAMES = [
    "torso",
    "l_upper", "l_fore", "l_palm", "l_finger_a", "l_finger_b",
    "r_upper", "r_fore", "r_palm", "r_finger_a", "r_finger_b",
]
NUM_BODIES = 11
OBJ = 11  # object slot in solver arrays

HAND_BODIES = (3, 4, 5, 8, 9, 10)   # palms + fingers
FINGER_BODIES = (4, 5, 9, 10)
PALM_BODIES = (3, 8)

JOINT_NAMES = [
    "l_shoulder", "l_elbow", "l_wrist", "l_finger_a", "l_finger_b",
    "r_shoulder", "r_elbow", "r_wrist", "r_finger_a", "r_finger_b",
]
NUM_ARM_JOINTS = 10
ACTION_DIM = 11  # cart + 10 arm joints; cart is action slot 0

# scene constants: the cart rail height and gripper geometry
TORSO_HEIGHT = 0.82
FINGER_HALFSPAN = 0.045   # lateral finger mount offset on the palm tip
FINGER_RADIUS = 0.008
PALM_RADIUS = 0.015

# hand links are deliberately chunky: impulse convergence through the
# palm-finger chain needs mass ratios vs the 1 kg object near unity
BODY_MASS = np.array([6.0, 0.8, 0.6, 0.5, 0.2, 0.2,
                      0.8, 0.6, 0.5, 0.2, 0.2])


@dataclass(frozen=True)
class Morphology:
    upper_len: float = 0.30
    fore_len: float = 0.30
    palm_len: float = 0.08
    finger_len: float = 0.06
    shoulder_left: tuple[float, float] = (-0.10, 0.18)
    shoulder_right: tuple[float, float] = (0.10, 0.18)
    torso_half: tuple[float, float] = (0.10, 0.18)

    def __post_init__(self):
        for name in ("upper_len", "fore_len", "palm_len", "finger_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def scaled(self, factor: float) -> "Morphology":
        """Morphology with all link lengths scaled (shoulder mounts kept)."""
        return Morphology(
            upper_len=self.upper_len * factor,
            fore_len=self.fore_len * factor,
            palm_len=self.palm_len * factor,
            finger_len=self.finger_len * factor,
            shoulder_left=self.shoulder_left,
            shoulder_right=self.shoulder_right,
            torso_half=self.torso_half,
        )

    def link_lengths(self) -> np.ndarray:
        """Length of each body's segment, torso excluded (0 placeholder)."""
        lu, lf, lp, lg = self.upper_len, self.fore_len, self.palm_len, self.finger_len
        return np.array([0.0, lu, lf, lp, lg, lg, lu, lf, lp, lg, lg])

    def pad_local(self) -> np.ndarray:
        """Per-body reference point (local frame) used for contact distances,
        relational observations, and recorded contact annotations."""
        pads = np.zeros((NUM_BODIES, 2))
        for b, length in enumerate(self.link_lengths()):
            if b in FINGER_BODIES or b in PALM_BODIES:
                pads[b, 0] = length / 2.0   # distal tip
        return pads

    def body_inertia(self) -> np.ndarray:
        """Rod inertia about the CoM; torso gets a box estimate."""
        lengths = self.link_lengths()
        inertia = BODY_MASS * lengths**2 / 12.0
        hx, hy = self.torso_half
        inertia[0] = BODY_MASS[0] * (hx**2 + hy**2) / 3.0
        return np.maximum(inertia, 1e-5)


def canonical() -> Morphology:
    return Morphology()


# --- joint table -------------------------------------------------------------
# columns: parent, child, sign; anchors in each body's local frame.
# Finger joints carry sign -1/+1 so the closing direction is positive for
# both fingers and the shared [0, 1.2] closing range applies to each.

JOINT_LIMITS = {
    "shoulder": (-3.0, 0.12),
    "elbow": (-2.7, 2.7),
    "wrist": (-2.0, 2.0),
    "finger": (0.0, 1.2),
}

CART_LIMIT = 2.0
CART_KP = 400.0
CART_FMAX = 250.0


@dataclass(frozen=True)
class JointTable:
    parent: np.ndarray
    child: np.ndarray
    sign: np.ndarray
    anchor_parent: np.ndarray  # (10, 2)
    anchor_child: np.ndarray   # (10, 2)
    lo: np.ndarray
    hi: np.ndarray
    kind: list = field(default_factory=list)


def build_joint_table(m: Morphology) -> JointTable:
    lu, lf, lp, lg = m.upper_len, m.fore_len, m.palm_len, m.finger_len
    w = FINGER_HALFSPAN
    rows = []
    for side, base, mount in (("l", 1, m.shoulder_left), ("r", 6, m.shoulder_right)):
        up, fo, pa, fa, fb = base, base + 1, base + 2, base + 3, base + 4
        rows += [
            (0, up, 1.0, mount, (-lu / 2, 0.0), "shoulder"),
            (up, fo, 1.0, (lu / 2, 0.0), (-lf / 2, 0.0), "elbow"),
            (fo, pa, 1.0, (lf / 2, 0.0), (-lp / 2, 0.0), "wrist"),
            (pa, fa, -1.0, (lp / 2, w), (-lg / 2, 0.0), "finger"),
            (pa, fb, 1.0, (lp / 2, -w), (-lg / 2, 0.0), "finger"),
        ]
    return JointTable(
        parent=np.array([r[0] for r in rows], dtype=np.int64),
        child=np.array([r[1] for r in rows], dtype=np.int64),
        sign=np.array([r[2] for r in rows]),
        anchor_parent=np.array([r[3] for r in rows]),
        anchor_child=np.array([r[4] for r in rows]),
        lo=np.array([JOINT_LIMITS[r[5]][0] for r in rows]),
        hi=np.array([JOINT_LIMITS[r[5]][1] for r in rows]),
        kind=[r[5] for r in rows],
    )


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def forward_kinematics(m: Morphology, cart_x: float, q: np.ndarray):
    """Body poses (11, 3) [x, y, theta] from cart coordinate + joint angles.

    q follows JOINT_NAMES order with finger signs already folded in (both
    fingers close for positive q).
    """
    lu, lf, lp, lg = m.upper_len, m.fore_len, m.palm_len, m.finger_len
    poses = np.zeros((NUM_BODIES, 3))
    poses[0] = [cart_x, TORSO_HEIGHT, 0.0]
    torso = np.array([cart_x, TORSO_HEIGHT])
    for side, base, mount, qoff in (("l", 1, m.shoulder_left, 0),
                                    ("r", 6, m.shoulder_right, 5)):
        sh = torso + np.asarray(mount)
        th_u = q[qoff + 0]
        elbow = sh + _rot(th_u) @ [lu, 0.0]
        poses[base] = [*(sh + _rot(th_u) @ [lu / 2, 0.0]), th_u]
        th_f = th_u + q[qoff + 1]
        wrist = elbow + _rot(th_f) @ [lf, 0.0]
        poses[base + 1] = [*(elbow + _rot(th_f) @ [lf / 2, 0.0]), th_f]
        th_p = th_f + q[qoff + 2]
        poses[base + 2] = [*(wrist + _rot(th_p) @ [lp / 2, 0.0]), th_p]
        tip = wrist + _rot(th_p) @ [lp, 0.0]
        for fi, (lat, sgn) in enumerate(((FINGER_HALFSPAN, -1.0), (-FINGER_HALFSPAN, 1.0))):
            mountp = wrist + _rot(th_p) @ [lp, lat]
            th_g = th_p + sgn * q[qoff + 3 + fi]
            poses[base + 3 + fi] = [*(mountp + _rot(th_g) @ [lg / 2, 0.0]), th_g]
    for i in range(NUM_BODIES):
        poses[i, 2] = wrap_angle(poses[i, 2])
    return poses


def joint_angles_from_poses(body_theta: np.ndarray) -> np.ndarray:
    """Extract joint coordinates (JOINT_NAMES order) from body headings."""
    jt_parent = [0, 1, 2, 3, 3, 0, 6, 7, 8, 8]
    jt_child = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
    signs = [1, 1, 1, -1, 1, 1, 1, 1, -1, 1]
    q = np.zeros(NUM_ARM_JOINTS)
    for k in range(NUM_ARM_JOINTS):
        q[k] = signs[k] * wrap_angle(body_theta[jt_child[k]] - body_theta[jt_parent[k]])
    return q


def joint_velocities_from_bodies(body_omega: np.ndarray) -> np.ndarray:
    jt_parent = [0, 1, 2, 3, 3, 0, 6, 7, 8, 8]
    jt_child = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
    signs = [1, 1, 1, -1, 1, 1, 1, 1, -1, 1]
    qd = np.zeros(NUM_ARM_JOINTS)
    for k in range(NUM_ARM_JOINTS):
        qd[k] = signs[k] * (body_omega[jt_child[k]] - body_omega[jt_parent[k]])
    return qd


def grip_gap(m: Morphology, q_finger: float) -> float:
    """Fingertip-sphere clearance between the two fingers at a close angle."""
    lat = FINGER_HALFSPAN - m.finger_len * math.sin(q_finger)
    return 2.0 * (lat - FINGER_RADIUS)


def finger_angle_for_gap(m: Morphology, gap: float) -> float:
    """Close angle whose fingertip clearance equals `gap`."""
    s = (FINGER_HALFSPAN - FINGER_RADIUS - gap / 2.0) / m.finger_len
    if not -1.0 <= s <= 1.0:
        raise ValueError(f"gap {gap} not reachable by the gripper")
    a = math.asin(s)
    lo, hi = JOINT_LIMITS["finger"]
    if not lo - 1e-9 <= a <= hi + 1e-9:
        raise ValueError(f"gap {gap} needs close angle {a:.3f} outside finger limits")
    return a


def pad_world(m: Morphology, poses: np.ndarray) -> np.ndarray:
    """World positions of each body's pad reference point."""
    pads = m.pad_local()
    out = np.zeros((NUM_BODIES, 2))
    for b in range(NUM_BODIES):
        c, s = math.cos(poses[b, 2]), math.sin(poses[b, 2])
        out[b, 0] = poses[b, 0] + c * pads[b, 0] - s * pads[b, 1]
        out[b, 1] = poses[b, 1] + s * pads[b, 0] + c * pads[b, 1]
    return out


def poses_to_pose2(poses: np.ndarray) -> list[Pose2]:
    return [Pose2(float(p[0]), float(p[1]), float(p[2])) for p in poses]
