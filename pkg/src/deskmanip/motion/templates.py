"""Scripted demonstration clips.

Each template drives task-space channels (cart, wrist points, palm headings,
finger close angles) through min-jerk segments, resolves arm joints with
closed-form IK, and rigidly carries the object in the grasping palm's frame
while contact flags are set. The result is a kinematically consistent clip
with annotated contacts, ready for tracking or retargeting.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import Pose2, RngStream, wrap_angle
from ..geometry import ObjectShape, closest_point, default_shapes
from ..physics.config import TABLE_TOP
from ..physics.morphology import (FINGER_HALFSPAN, FINGER_RADIUS, NUM_BODIES,
                                  PALM_RADIUS, TORSO_HEIGHT, Morphology,
                                  build_joint_table, canonical,
                                  finger_angle_for_gap, forward_kinematics,
                                  pad_world)
from .clip import (FPS, MotionClip, angular_velocities,
                   finite_difference_velocities)
from .ik import arm_joint_angles
from .retarget import filter_clip

LEFT_FINGERS = frozenset({4, 5})
RIGHT_FINGERS = frozenset({9, 10})
_HOME_Q = np.array([-2.5, 1.98, -1.05, 0.2, 0.2, -0.64, -1.98, 1.05, 0.2, 0.2])
# grasps close past the object surface by this much; a zero-margin pinch
# leaves the PD controller with no squeeze force and the object slips
_SQUEEZE = 0.005
# target pad clearance per side when passing or releasing the object; a
# placed object can settle a few millimetres sideways, so barely-open
# fingers drag along its face on the way out
_CLEAR = 0.015


def _minjerk(u: float) -> float:
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def _rest_y(shape: ObjectShape) -> float:
    return TABLE_TOP - float(np.min(shape.vertices[:, 1]))


def _pinch_wrist_y(m: Morphology, grip_y: float, qf: float) -> float:
    return grip_y + m.palm_len + m.finger_len * math.cos(qf)


class _Builder:
    """Accumulates per-frame channel rows; channels move with min-jerk."""

    def __init__(self, m: Morphology, cart: float):
        self.m = m
        poses = forward_kinematics(m, cart, _HOME_Q)
        self.ch = {"cart": float(cart)}
        for side, palm in (("l", 3), ("r", 8)):
            th = poses[palm, 2]
            wrist = poses[palm, :2] - 0.5 * m.palm_len * np.array(
                [math.cos(th), math.sin(th)])
            self.ch["w" + side] = wrist
            self.ch["p" + side] = float(th)
            self.ch["f" + side] = 0.2
        self.flags = frozenset()
        self.rows = [self._snap()]
        self.flag_rows = [self.flags]

    def _snap(self) -> dict:
        return {k: (v.copy() if isinstance(v, np.ndarray) else v)
                for k, v in self.ch.items()}

    def set_flags(self, bodies) -> None:
        self.flags = frozenset(bodies)

    def seg(self, dur_s: float, **targets) -> None:
        n = max(1, round(dur_s * FPS))
        start = self._snap()
        for i in range(1, n + 1):
            u = _minjerk(i / n)
            for k, tgt in targets.items():
                s = start[k]
                if isinstance(s, np.ndarray):
                    self.ch[k] = s + u * (np.asarray(tgt, dtype=float) - s)
                else:
                    self.ch[k] = s + u * (float(tgt) - s)
            # wrists not being driven ride along with the cart so an idle
            # arm keeps its posture instead of being stretched behind
            shift = self.ch["cart"] - start["cart"]
            for k in ("wl", "wr"):
                if k not in targets and shift != 0.0:
                    self.ch[k] = start[k] + np.array([shift, 0.0])
            self.rows.append(self._snap())
            self.flag_rows.append(self.flags)

    def hold(self, dur_s: float) -> None:
        self.seg(dur_s)


def _assemble(b: _Builder, shape: ObjectShape, obj0: Pose2, clip_id: str,
              template: str, shape_id: str) -> MotionClip:
    m = b.m
    jt = build_joint_table(m)
    t_total = len(b.rows)
    q_all = np.zeros((t_total, 10))
    for t, row in enumerate(b.rows):
        ql = arm_joint_angles(m, "left", row["cart"], row["wl"], row["pl"], row["fl"])
        qr = arm_joint_angles(m, "right", row["cart"], row["wr"], row["pr"], row["fr"])
        q_all[t] = np.concatenate([ql, qr])
        bad = (q_all[t] < jt.lo - 1e-9) | (q_all[t] > jt.hi + 1e-9)
        if bad.any():
            j = int(np.argmax(bad))
            raise ValueError(
                f"workspace violation in {clip_id}: joint {j} = {q_all[t, j]:.3f} "
                f"at frame {t}, limits [{jt.lo[j]:.2f}, {jt.hi[j]:.2f}]")

    body_pos = np.zeros((t_total, NUM_BODIES, 2))
    body_theta = np.zeros((t_total, NUM_BODIES))
    for t, row in enumerate(b.rows):
        poses = forward_kinematics(m, row["cart"], q_all[t])
        body_pos[t] = poses[:, :2]
        body_theta[t] = poses[:, 2]

    # object: rest pose until grasped, then rigid in the anchoring palm frame
    obj_pos = np.zeros((t_total, 2))
    obj_theta = np.zeros(t_total)
    flags = np.zeros((t_total, NUM_BODIES), dtype=bool)
    anchor = None
    rel = None
    pose = np.array([obj0.x, obj0.y, obj0.theta])
    for t in range(t_total):
        fl = b.flag_rows[t]
        for bidx in fl:
            flags[t, bidx] = True
        side = None
        if fl & LEFT_FINGERS:
            side = 3
        elif fl & RIGHT_FINGERS:
            side = 8
        if side is None:
            anchor = None
        else:
            if anchor != side:
                anchor = side
                pc, pth = body_pos[t, anchor], body_theta[t, anchor]
                c, s = math.cos(pth), math.sin(pth)
                d = pose[:2] - pc
                rel = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1],
                                wrap_angle(pose[2] - pth)])
            pc, pth = body_pos[t, anchor], body_theta[t, anchor]
            c, s = math.cos(pth), math.sin(pth)
            pose = np.array([pc[0] + c * rel[0] - s * rel[1],
                             pc[1] + s * rel[0] + c * rel[1],
                             wrap_angle(pth + rel[2])])
        obj_pos[t] = pose[:2]
        obj_theta[t] = pose[2]

    pads_all = np.zeros((t_total, NUM_BODIES, 2))
    for t in range(t_total):
        pads_all[t] = pad_world(m, np.column_stack([body_pos[t], body_theta[t]]))

    # a PD-tracked hand cannot break force contact the instant the plan
    # does, nor avoid touching slightly before a press seats; widen each
    # flag span while the pad is already (or still) against the surface so
    # honest tracking is not scored as an unplanned contact or a late
    # release
    touch = FINGER_RADIUS + 0.002
    for bidx in range(NUM_BODIES):
        for t in range(1, t_total):
            if flags[t - 1, bidx] and not flags[t, bidx]:
                op = Pose2(obj_pos[t, 0], obj_pos[t, 1], obj_theta[t])
                _, _, dist = closest_point(shape, op, tuple(pads_all[t, bidx]))
                if dist <= touch:
                    flags[t, bidx] = True
        for t in range(t_total - 2, -1, -1):
            if flags[t + 1, bidx] and not flags[t, bidx]:
                op = Pose2(obj_pos[t, 0], obj_pos[t, 1], obj_theta[t])
                _, _, dist = closest_point(shape, op, tuple(pads_all[t, bidx]))
                if dist <= touch:
                    flags[t, bidx] = True

    contact_points = np.full((t_total, NUM_BODIES, 2), np.nan)
    for t in range(t_total):
        if flags[t].any():
            op = Pose2(obj_pos[t, 0], obj_pos[t, 1], obj_theta[t])
            for bidx in np.flatnonzero(flags[t]):
                pt, _, _ = closest_point(shape, op, tuple(pads_all[t, bidx]))
                contact_points[t, bidx] = pt

    clip = MotionClip(
        clip_id=clip_id, template=template, shape_id=shape_id, morphology=m,
        body_pos=body_pos, body_theta=body_theta,
        body_vel=finite_difference_velocities(body_pos, FPS),
        body_omega=angular_velocities(body_theta, FPS),
        obj_pos=obj_pos, obj_theta=obj_theta,
        obj_vel=finite_difference_velocities(obj_pos, FPS),
        obj_omega=angular_velocities(obj_theta, FPS),
        contact_flags=flags, contact_points=contact_points)
    ok, reason = filter_clip(clip)
    if not ok:
        raise ValueError(f"generated clip {clip_id} failed filtering: {reason}")
    return clip


def _grip_width(shape: ObjectShape) -> float:
    v = shape.vertices
    return float(v[:, 0].max() - v[:, 0].min())


def _open_angle(m: Morphology, shape: ObjectShape) -> float:
    gap_max = 2.0 * (FINGER_HALFSPAN - FINGER_RADIUS)
    return finger_angle_for_gap(m, min(_grip_width(shape) + 2.0 * _CLEAR, gap_max))


def _grip_plan(m: Morphology, shape: ObjectShape):
    """Grip height, finger angles, and safe wrist heights for a pinch.

    Returns (rest_y, grip_y, wrist_y, close_angle, open_angle, apex_min).
    """
    oy = _rest_y(shape)
    v = shape.vertices
    top = TABLE_TOP + float(v[:, 1].max() - v[:, 1].min())
    qf = finger_angle_for_gap(m, _grip_width(shape) - _SQUEEZE)
    qo = _open_angle(m, shape)
    # tall shapes are gripped near the top; a centre-height pinch would put
    # the palm's own collision sphere inside the object
    gy = max(oy, top + PALM_RADIUS + 0.006 - m.finger_len * math.cos(qf))
    wy = _pinch_wrist_y(m, gy, qf)
    # the carrying height must let the open pads sweep in above the resting
    # object, and must keep the carried object clear of the table even as
    # the pinch sags under load
    apex_min = max(top + m.palm_len + m.finger_len * math.cos(qo)
                   + FINGER_RADIUS + 0.010,
                   wy + 0.03)
    return oy, gy, wy, qf, qo, apex_min


def _u(rng: RngStream, params: dict, key: str, lo: float, hi: float) -> float:
    if key in params:
        return float(params[key])
    return float(rng.uniform(lo, hi))


def _pick_place(m, shape_id, params, rng):
    shape = default_shapes()[shape_id]
    px = _u(rng, params, "pickup_x", -0.45, 0.30)
    dx = _u(rng, params, "delta_x", 0.18, 0.42) * (1 if rng.uniform() < 0.5 else -1)
    tx = float(params.get("place_x", np.clip(px + dx, -0.5, 0.5)))
    hold = _u(rng, params, "hold_s", 0.2, 0.5)
    oy, gy, wy, qf, qo, apex_min = _grip_plan(m, shape)
    apex = max(_u(rng, params, "apex_y", 0.64, 0.72), apex_min)

    # park beside the object and come in overhead; a straight diagonal from
    # the hanging start posture would sweep the pads through tall objects
    b = _Builder(m, cart=px - 0.2)
    b.seg(0.9, wr=[px - 0.12, apex], pr=-math.pi / 2, fr=qo)
    b.seg(1.0, cart=px - 0.1, wr=[px, apex])
    b.seg(0.9, wr=[px, wy])
    b.seg(0.5, fr=qf)
    b.set_flags(RIGHT_FINGERS)
    b.seg(0.9, wr=[px, apex])
    b.seg(1.8, cart=tx - 0.1, wr=[tx, apex])
    b.seg(0.8, wr=[tx, wy])
    b.hold(hold)
    b.set_flags(())
    b.seg(0.5, fr=qo)
    b.seg(0.8, wr=[tx, apex])
    return _assemble(b, shape, Pose2(px, oy, 0.0),
                     params.get("clip_id", f"pick_place_{rng.seed}_{rng.stream_id}"),
                     "pick_place", shape_id)


def _transfer(m, shape_id, params, rng):
    shape = default_shapes()[shape_id]
    px = _u(rng, params, "pickup_x", -0.50, -0.25)
    hx = _u(rng, params, "handover_x", -0.08, 0.08)
    tx = _u(rng, params, "place_x", 0.25, 0.50)
    oy, gy, wy, qf, qo, apex_min = _grip_plan(m, shape)
    apex = max(_u(rng, params, "apex_y", 0.64, 0.70), apex_min)

    # a mid-air handover needs one pinch to slide out between the other
    # pinch's fingers with millimetres to spare, which a PD-tracked arm
    # cannot do reliably; set the object down halfway instead and let the
    # second hand pick it back up. The right arm hauls the first leg; high
    # wrists sit near the shoulder on the working side because the shared
    # shoulder range runs out first on stretched-up-and-out left poses
    b = _Builder(m, cart=px - 0.2)
    b.seg(0.9, wr=[px - 0.12, apex], pr=-math.pi / 2, fr=qo)
    b.seg(1.0, cart=px - 0.1, wr=[px, apex])
    b.seg(0.9, wr=[px, wy])
    b.seg(0.5, fr=qf)
    b.set_flags(RIGHT_FINGERS)
    b.seg(0.9, wr=[px, apex])
    b.seg(1.8, cart=hx - 0.1, wr=[hx, apex])
    b.seg(0.8, wr=[hx, wy])
    b.hold(0.25)
    b.set_flags(())
    b.seg(0.5, fr=qo)
    b.seg(0.8, wr=[hx, apex])
    # second leg: the left hand rises on its own side of the object while
    # the released right hand rides aside with the base
    b.seg(1.0, cart=hx, wl=[hx - 0.08, apex], pl=-math.pi / 2, fl=qo)
    b.seg(1.0, wl=[hx, apex])
    b.seg(0.9, wl=[hx, wy])
    b.seg(0.5, fl=qf)
    b.set_flags(LEFT_FINGERS)
    b.seg(0.9, wl=[hx, apex])
    b.seg(1.8, cart=tx, wl=[tx, apex])
    b.seg(0.8, wl=[tx, wy])
    b.hold(0.25)
    b.set_flags(())
    b.seg(0.5, fl=qo)
    b.seg(0.8, wl=[tx, apex])
    return _assemble(b, shape, Pose2(px, oy, 0.0),
                     params.get("clip_id", f"transfer_{rng.seed}_{rng.stream_id}"),
                     "transfer", shape_id)


def _bimanual_lift(m, shape_id, params, rng):
    shape = default_shapes()[shape_id]
    px = _u(rng, params, "start_x", -0.30, 0.30)
    dx = _u(rng, params, "delta_x", -0.25, 0.25)
    tx = float(np.clip(px + dx, -0.45, 0.45))
    # the left arm carries at barely a fifth of a radian from its shoulder
    # limit when the box rides high, so the lift stays moderate
    lift = _u(rng, params, "lift", 0.06, 0.10)
    hold = _u(rng, params, "hold_s", 0.3, 0.6)
    oy = _rest_y(shape)
    v = shape.vertices
    half_w = float(v[:, 0].max())
    # curl both fingers onto the press axis so each hand contacts the flat
    # face at a single point; two vertically spread pads only seat together
    # when the palm is perfectly parallel to the face, which a tracked arm
    # never is
    qf = math.asin(FINGER_HALFSPAN / m.finger_len)
    # the squeeze here comes from arm posture rather than finger closing;
    # the arms deflect by several millimetres under load and shed press
    # force as the lifted posture changes, so command a deep press
    reach = m.palm_len + m.finger_len * math.cos(qf) + FINGER_RADIUS - 2.0 * _SQUEEZE

    def wrists(cx, cy):
        return [cx - half_w - reach, cy], [cx + half_w + reach, cy]

    # the object is wider than the hands' hanging start posture, so the
    # base starts well off to one side; the right arm crosses above the
    # object while the left stages low on its own side, high-and-left
    # being the stretch that exhausts the left shoulder range
    top = TABLE_TOP + float(v[:, 1].max() - v[:, 1].min())
    hc = top + 0.07
    wl0, wr0 = wrists(px, oy)
    b = _Builder(m, cart=px - 0.42)
    # -pi heads the same way as +pi but interpolates from the downward
    # home heading without swinging the wrist through its far limit
    b.seg(1.2, wl=[px - 0.50, oy + 0.05], pl=0.0, fl=qf,
          wr=[px - 0.30, hc], pr=-math.pi, fr=qf)
    b.seg(1.8, cart=px, wl=[px - 0.26, oy + 0.03], wr=[px + 0.26, hc])
    b.seg(0.9, wl=[px - 0.26, oy], wr=[px + 0.26, oy])
    # press in slowly; the two arms lag by different amounts and a fast
    # press spreads their arrival times past the contact-mismatch windows
    b.seg(1.2, wl=wl0, wr=wr0)
    # give the lagging arms time to seat the press before contact is
    # demanded, but less than the unplanned-contact termination window
    b.hold(0.4)
    b.set_flags(LEFT_FINGERS | RIGHT_FINGERS)
    wl1, wr1 = wrists(px, oy + lift)
    b.seg(0.9, wl=wl1, wr=wr1)
    wl2, wr2 = wrists(tx, oy + lift)
    b.seg(1.8, cart=tx, wl=wl2, wr=wr2)
    b.hold(hold)
    wl3, wr3 = wrists(tx, oy)
    b.seg(0.9, wl=wl3, wr=wr3)
    b.set_flags(())
    b.seg(0.6, wl=[wl3[0] - 0.07, oy + 0.02], wr=[wr3[0] + 0.07, oy + 0.02])
    b.seg(0.8, wl=[wl3[0] - 0.10, oy + 0.04], wr=[wr3[0] + 0.10, oy + 0.04])
    return _assemble(b, shape, Pose2(px, oy, 0.0),
                     params.get("clip_id", f"bimanual_{rng.seed}_{rng.stream_id}"),
                     "bimanual_lift", shape_id)


def _inspect(m, shape_id, params, rng):
    shape = default_shapes()[shape_id]
    px = _u(rng, params, "x", -0.40, 0.40)
    rot = _u(rng, params, "rot", 0.25, 0.45) * (1 if rng.uniform() < 0.5 else -1)
    oy, gy, wy, qf, qo, apex_min = _grip_plan(m, shape)
    apex = max(_u(rng, params, "apex_y", 0.68, 0.74), apex_min)

    b = _Builder(m, cart=px - 0.2)
    b.seg(0.9, wr=[px - 0.12, apex], pr=-math.pi / 2, fr=qo)
    b.seg(1.0, cart=px - 0.1, wr=[px, apex])
    b.seg(0.9, wr=[px, wy])
    b.seg(0.5, fr=qf)
    b.set_flags(RIGHT_FINGERS)
    b.seg(0.9, wr=[px, apex])
    b.seg(0.9, pr=-math.pi / 2 + rot)
    b.hold(0.4)
    b.seg(1.2, pr=-math.pi / 2 - rot * 0.5)
    b.hold(0.3)
    b.seg(0.9, pr=-math.pi / 2)
    b.seg(0.8, wr=[px, wy])
    b.set_flags(())
    b.seg(0.5, fr=qo)
    b.seg(0.8, wr=[px, apex])
    return _assemble(b, shape, Pose2(px, oy, 0.0),
                     params.get("clip_id", f"inspect_{rng.seed}_{rng.stream_id}"),
                     "inspect", shape_id)


TEMPLATES = {
    "pick_place": _pick_place,
    "transfer": _transfer,
    "bimanual_lift": _bimanual_lift,
    "inspect": _inspect,
}

_TEMPLATE_SHAPES = {
    "pick_place": ["sq6", "bar"],
    "transfer": ["sq6", "bar"],
    "bimanual_lift": ["sq20"],
    "inspect": ["sq6", "bar"],
}

# parameter windows reserved for the test split, per template
_HELD_OUT = {
    "pick_place": {"pickup_x": (0.32, 0.45)},
    "transfer": {"handover_x": (0.09, 0.14)},
    "bimanual_lift": {"start_x": (0.32, 0.42)},
    "inspect": {"x": (0.42, 0.50)},
}


def generate_clip(template: str, morphology: Morphology | None = None,
                  shape_id: str = "sq6", params: dict | None = None,
                  rng: RngStream | None = None) -> MotionClip:
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}, "
                         f"options: {sorted(TEMPLATES)}")
    m = morphology if morphology is not None else canonical()
    if rng is None:
        rng = RngStream(0, 9000)
    return TEMPLATES[template](m, shape_id, dict(params or {}), rng)


def build_dataset(seed: int, n_train_per_template: int = 16,
                  n_test_per_template: int = 4):
    """Standard corpus: train clips from the main parameter ranges, test
    clips from held-out windows."""
    from .clip import Dataset
    clips = []
    train_ids, test_ids = [], []
    master = RngStream(seed, 500)
    idx = 0
    for template in TEMPLATES:
        shapes = _TEMPLATE_SHAPES[template]
        for split, count in (("train", n_train_per_template),
                             ("test", n_test_per_template)):
            for k in range(count):
                shape_id = shapes[k % len(shapes)]
                params = {"clip_id": f"{template}_{split}_{k:02d}"}
                if split == "test":
                    for key, (lo, hi) in _HELD_OUT[template].items():
                        r = master.split(idx).uniform()
                        params[key] = lo + r * (hi - lo)
                clip = generate_clip(template, None, shape_id, params,
                                     master.split(idx))
                clips.append(clip)
                (train_ids if split == "train" else test_ids).append(clip.clip_id)
                idx += 1
    return Dataset(clips=clips, train_ids=train_ids, test_ids=test_ids)


def smoke_dataset(n_clips: int = 2, seed: int = 0):
    """Tiny fixed pick-and-place corpus for budgeted smoke training; the
    clips double as their own evaluation split."""
    from .clip import Dataset
    master = RngStream(seed, 505)
    clips = [generate_clip("pick_place", None, "sq6",
                           {"clip_id": f"smoke_{k:02d}"}, master.split(k))
             for k in range(n_clips)]
    return Dataset(clips=clips, train_ids=[c.clip_id for c in clips],
                   test_ids=[])
