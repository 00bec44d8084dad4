"""Goal-conditioned tracking MDP around the simulator.

Observation and goal construction in the character's root frame, the
multiplicative tracking reward with its phased contact terms, the
early-termination envelope, failure-weighted clip sampling, and the
episode metrics used for evaluation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Pose2, RngStream, pose_delta, wrap_angle
from .geometry import (BasisSet, ObjectShape, bps_encode, closest_point,
                       closest_points_batch, default_shapes, sample_basis)
from .motion.clip import MotionClip
from .physics import (CART_LIMIT, FINGER_BODIES, NUM_BODIES, OBJ, Sim,
                      SimConfig, TABLE_CENTER, TABLE_HALF, WorldState,
                      joint_velocities_from_bodies, pad_world)
from .physics.engine import ContactReport

OBS_DIM = 154
GOAL_DIM = 118
K_NEAR = 1
K_FAR = 30
W_PRE = 30
W_POST = 30

TERM_BODY_DEV = 0.25     # m, max over bodies
TERM_OBJ_DEV = 0.10      # m
EVAL_BODY_DEV = 0.50     # m, evaluation (looser than termination)
EVAL_OBJ_DEV = 0.25      # m
CONTACT_LOSS_FRAMES = 10    # terminate strictly beyond this
LATE_RELEASE_FRAMES = 12    # 0.4 s at 30 fps, strict >

LAMBDA_FAIL = 4.0
REFRESH_EPISODES = 500

_FLOOR = 1e-10


def _clamp01(x: float) -> float:
    return min(1.0, max(_FLOOR, x))


def _to_root(p: np.ndarray, root: Pose2) -> np.ndarray:
    c, s = math.cos(root.theta), math.sin(root.theta)
    d = p - [root.x, root.y]
    return np.stack([c * d[..., 0] + s * d[..., 1],
                     -s * d[..., 0] + c * d[..., 1]], axis=-1)


def _rot(v: np.ndarray, ang: float) -> np.ndarray:
    c, s = math.cos(ang), math.sin(ang)
    return np.stack([c * v[..., 0] - s * v[..., 1],
                     s * v[..., 0] + c * v[..., 1]], axis=-1)


# --- observation ------------------------------------------------------------

@dataclass
class Observation:
    """Fixed-layout feature blocks, all in the torso root frame.

    proprio: per body (x, y, cos, sin, vx, vy, w), 11 x 7
    obj: object (x, y, cos, sin, vx, vy, w)
    relational: per body vector to nearest object surface point + distance
    bps: basis-point surface distances
    table: table pose (x, y, theta) + half extents
    """

    proprio: np.ndarray      # (77,)
    obj: np.ndarray          # (7,)
    relational: np.ndarray   # (33,)
    bps: np.ndarray          # (32,)
    table: np.ndarray        # (5,)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.proprio, self.obj, self.relational,
                               self.bps, self.table])


def build_obs(world: WorldState, shape: ObjectShape,
              basis: BasisSet) -> Observation:
    root = Pose2(world.pos[0, 0], world.pos[0, 1], world.theta[0])

    pos = _to_root(world.pos[:NUM_BODIES], root)
    th = world.theta[:NUM_BODIES] - root.theta
    vel = _rot(world.vel[:NUM_BODIES], -root.theta)
    proprio = np.column_stack([pos, np.cos(th), np.sin(th), vel,
                               world.omega[:NUM_BODIES]]).ravel()

    opos = _to_root(world.pos[OBJ], root)
    oth = world.theta[OBJ] - root.theta
    ovel = _rot(world.vel[OBJ], -root.theta)
    obj = np.array([opos[0], opos[1], math.cos(oth), math.sin(oth),
                    ovel[0], ovel[1], world.omega[OBJ]])

    obj_pose = world.object_pose()
    pts, _, dists = closest_points_batch(shape, obj_pose,
                                         world.pos[:NUM_BODIES])
    rel = np.column_stack([_rot(pts - world.pos[:NUM_BODIES], -root.theta),
                           dists])

    bps = bps_encode(shape, obj_pose, basis, root).distances

    tc = _to_root(np.array(TABLE_CENTER, dtype=float), root)
    table = np.array([tc[0], tc[1], wrap_angle(-root.theta),
                      TABLE_HALF[0], TABLE_HALF[1]])

    return Observation(proprio=proprio, obj=obj, relational=rel.ravel(),
                       bps=bps, table=table)


_TABLE_SHAPE = None


def table_shape() -> ObjectShape:
    global _TABLE_SHAPE
    if _TABLE_SHAPE is None:
        hx, hy = TABLE_HALF
        v = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        _TABLE_SHAPE = ObjectShape(vertices=v, shape_id="table")
    return _TABLE_SHAPE


def table_code(world: WorldState, basis: BasisSet) -> np.ndarray:
    """Surface code of the table from the torso's frame; with the same
    basis as the object code, the two are directly comparable."""
    root = Pose2(world.pos[0, 0], world.pos[0, 1], world.theta[0])
    pose = Pose2(TABLE_CENTER[0], TABLE_CENTER[1], 0.0)
    return bps_encode(table_shape(), pose, basis, root).distances


# --- tracking goal ----------------------------------------------------------

@dataclass
class TrackGoal:
    """Future-frame targets at two horizons, as deltas from the current
    simulated pose; heading deltas are cos/sin encoded."""

    body_delta: dict        # k -> (11, 4)
    obj_delta: dict         # k -> (4,)
    flags: dict             # k -> (11,) float 0/1
    horizons: tuple = (K_NEAR, K_FAR)

    def vector(self) -> np.ndarray:
        parts = []
        for k in self.horizons:
            parts += [self.body_delta[k].ravel(), self.obj_delta[k],
                      self.flags[k]]
        return np.concatenate(parts)


def _delta_rows(tgt_pos, tgt_th, cur_pos, cur_th):
    """pose_delta batched: translation in each current pose's frame,
    wrapped heading difference encoded cos/sin."""
    d = tgt_pos - cur_pos
    c, s = np.cos(-cur_th), np.sin(-cur_th)
    dx = c * d[..., 0] - s * d[..., 1]
    dy = s * d[..., 0] + c * d[..., 1]
    dth = np.mod(tgt_th - cur_th + math.pi, 2.0 * math.pi) - math.pi
    return np.stack([dx, dy, np.cos(dth), np.sin(dth)], axis=-1)


def build_track_goal(clip: MotionClip, t: int, world: WorldState) -> TrackGoal:
    if not 0 <= t < len(clip):
        raise ValueError(f"frame {t} outside clip of length {len(clip)}")
    body_delta, obj_delta, flags = {}, {}, {}
    for k in (K_NEAR, K_FAR):
        tk = min(t + k, len(clip) - 1)
        body_delta[k] = _delta_rows(clip.body_pos[tk], clip.body_theta[tk],
                                    world.pos[:NUM_BODIES],
                                    world.theta[:NUM_BODIES])
        obj_delta[k] = _delta_rows(clip.obj_pos[tk], clip.obj_theta[tk],
                                   world.pos[OBJ], world.theta[OBJ])
        flags[k] = clip.contact_flags[tk].astype(float)
    return TrackGoal(body_delta=body_delta, obj_delta=obj_delta, flags=flags)


# --- phased contact reward --------------------------------------------------

def contact_phase(clip: MotionClip, t: int, j: int) -> tuple[str, int]:
    """Phase of body j at frame t: during beats pre beats post.

    pre(tau): next onset tau frames ahead, 1 <= tau <= W_PRE.
    post(tau): released tau frames ago, 0 <= tau < W_POST, where the
    release frame itself counts as tau = 0.
    """
    flags = clip.contact_flags[:, j]
    if flags[t]:
        return "during", 0
    ahead = flags[t + 1: t + 1 + W_PRE]
    hit = np.flatnonzero(ahead)
    if len(hit):
        return "pre", int(hit[0]) + 1
    back = flags[max(0, t - W_POST): t][::-1]
    last = np.flatnonzero(back)
    if len(last):
        # back[i] = flags[t-1-i]; last flagged frame at t-1-last[0], so the
        # release frame is t-last[0] and tau = t - release = last[0]
        return "post", int(last[0])
    return "none", 0


def phase_table(clip: MotionClip) -> np.ndarray:
    """(T, 11) int8 phase codes: 0 none, 1 pre, 2 during, 3 post."""
    codes = {"none": 0, "pre": 1, "during": 2, "post": 3}
    out = np.zeros((len(clip), NUM_BODIES), dtype=np.int8)
    for j in range(NUM_BODIES):
        if not clip.contact_flags[:, j].any():
            continue
        for t in range(len(clip)):
            out[t, j] = codes[contact_phase(clip, t, j)[0]]
    return out


@dataclass
class RewardBreakdown:
    r_ht: float
    r_hr: float
    r_hv: float
    r_hw: float
    r_ot: float
    r_or: float
    r_pow: float
    r_pen: float
    r_pre: float
    r_dur: float
    r_post: float
    r_pose: float
    r_contact: float
    r_energy: float
    r_interaction: float
    total: float


def reward(world: WorldState, report: ContactReport, clip: MotionClip,
           t: int, shape: ObjectShape | None = None,
           phases: np.ndarray | None = None) -> RewardBreakdown:
    if shape is None:
        shape = default_shapes()[clip.shape_id]
    sim_pos = world.pos[:NUM_BODIES]
    sim_th = world.theta[:NUM_BODIES]
    ref_pos = clip.body_pos[t]
    ref_th = clip.body_theta[t]

    p_err = float(np.mean(np.linalg.norm(sim_pos - ref_pos, axis=1)))
    r_ht = _clamp01(math.exp(-100.0 * p_err))
    th_err = float(np.mean(np.abs([wrap_angle(a - b)
                                   for a, b in zip(sim_th, ref_th)])))
    r_hr = _clamp01(math.exp(-2.0 * th_err))
    v_err = float(np.mean(np.linalg.norm(world.vel[:NUM_BODIES]
                                         - clip.body_vel[t], axis=1)))
    r_hv = _clamp01(math.exp(-0.2 * v_err))
    w_err = float(np.mean(np.abs(world.omega[:NUM_BODIES] - clip.body_omega[t])))
    r_hw = _clamp01(math.exp(-0.02 * w_err))

    o_err = float(np.linalg.norm(world.pos[OBJ] - clip.obj_pos[t]))
    r_ot = _clamp01(math.exp(-100.0 * o_err))
    r_or = _clamp01(math.exp(-1.0 * abs(wrap_angle(world.theta[OBJ]
                                                   - clip.obj_theta[t]))))

    dof_vel = np.concatenate([[world.vel[0, 0]],
                              joint_velocities_from_bodies(world.omega)])
    power = float(np.sum(np.abs(report.joint_torque * dof_vel)))
    r_pow = _clamp01(math.exp(-2e-5 * power))

    pen_force = float(np.sum(report.force[list(FINGER_BODIES)]))
    r_pen = _clamp01(math.exp(-1e-5 * pen_force))

    ref_obj_pose = Pose2(clip.obj_pos[t, 0], clip.obj_pos[t, 1],
                         clip.obj_theta[t])
    ref_pads = None
    r_pre = r_dur = r_post = 1.0
    codes = {0: "none", 1: "pre", 2: "during", 3: "post"}
    for j in range(NUM_BODIES):
        phase = (codes[int(phases[t, j])] if phases is not None
                 else contact_phase(clip, t, j)[0])
        if phase == "none":
            continue
        if phase == "during":
            r_dur *= _clamp01(math.exp(-2.0 * float(report.distance[j])))
            continue
        # approach / release: track the body and its distance to the object,
        # and keep the surface normal direction aligned with the reference
        dp = float(np.linalg.norm(sim_pos[j] - ref_pos[j]))
        ref_rel = float(np.linalg.norm(ref_pos[j] - clip.obj_pos[t]))
        sim_rel = float(np.linalg.norm(sim_pos[j] - world.pos[OBJ]))
        term = math.exp(-100.0 * (dp + abs(ref_rel - sim_rel)))
        if ref_pads is None:
            ref_pads = pad_world(clip.morphology,
                                 np.column_stack([ref_pos, ref_th]))
        _, n_ref, _ = closest_point(shape, ref_obj_pose, tuple(ref_pads[j]))
        cosang = float(np.dot(n_ref, report.closest_normal[j]))
        term *= 0.5 * (1.0 + cosang)
        if phase == "pre":
            r_pre *= _clamp01(term)
        else:
            r_post *= _clamp01(term)

    r_pose = r_ht * r_hr * r_hv * r_hw * r_ot * r_or
    r_contact = r_pre * r_dur * r_post
    r_energy = r_pow
    r_interaction = r_pen
    total = r_pose * r_contact * r_energy * r_interaction
    return RewardBreakdown(
        r_ht=r_ht, r_hr=r_hr, r_hv=r_hv, r_hw=r_hw, r_ot=r_ot, r_or=r_or,
        r_pow=r_pow, r_pen=r_pen, r_pre=r_pre, r_dur=r_dur, r_post=r_post,
        r_pose=r_pose, r_contact=r_contact, r_energy=r_energy,
        r_interaction=r_interaction, total=total)


# --- termination ------------------------------------------------------------

@dataclass
class ContactHistory:
    """Consecutive-frame counters for reference/actual contact mismatch."""

    loss: np.ndarray = field(default_factory=lambda: np.zeros(NUM_BODIES, dtype=int))
    hold: np.ndarray = field(default_factory=lambda: np.zeros(NUM_BODIES, dtype=int))

    def update(self, ref_flags: np.ndarray, actual: np.ndarray) -> None:
        for j in range(NUM_BODIES):
            self.loss[j] = self.loss[j] + 1 if (ref_flags[j] and not actual[j]) else 0
            self.hold[j] = self.hold[j] + 1 if (actual[j] and not ref_flags[j]) else 0

    def reset(self) -> None:
        self.loss[:] = 0
        self.hold[:] = 0


def check_termination(world: WorldState, clip: MotionClip, t: int,
                      history: ContactHistory) -> tuple[bool, str]:
    body_err = np.linalg.norm(world.pos[:NUM_BODIES] - clip.body_pos[t], axis=1)
    if float(body_err.max()) > TERM_BODY_DEV:
        return True, "body_dev"
    if float(np.linalg.norm(world.pos[OBJ] - clip.obj_pos[t])) > TERM_OBJ_DEV:
        return True, "obj_dev"
    if int(history.loss.max()) > CONTACT_LOSS_FRAMES:
        return True, "contact_loss"
    if int(history.hold.max()) > LATE_RELEASE_FRAMES:
        return True, "late_release"
    return False, ""


# --- prioritized clip sampling ----------------------------------------------

@dataclass
class SamplerState:
    clip_ids: list
    weights: np.ndarray = None
    failed: dict = None
    episodes: int = 0

    def __post_init__(self):
        if not self.clip_ids:
            raise ValueError("sampler needs at least one clip")
        if self.weights is None:
            self.weights = np.ones(len(self.clip_ids))
        if self.failed is None:
            self.failed = {cid: False for cid in self.clip_ids}

    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()


def sample_clip(sampler: SamplerState, rng: RngStream) -> str:
    idx = int(rng.choice(len(sampler.clip_ids), p=sampler.probabilities()))
    sampler.episodes += 1
    return sampler.clip_ids[idx]


def update_priorities(sampler: SamplerState, results: dict) -> None:
    """Reweight from the latest evaluation: failed clips draw more often."""
    for cid, success in results.items():
        if cid in sampler.failed:
            sampler.failed[cid] = not success
    sampler.weights = np.array(
        [1.0 + LAMBDA_FAIL * float(sampler.failed[cid])
         for cid in sampler.clip_ids])
    sampler.episodes = 0


def refresh_due(sampler: SamplerState) -> bool:
    return sampler.episodes >= REFRESH_EPISODES


# --- episode log and metrics ------------------------------------------------

@dataclass
class EpisodeLog:
    clip_id: str
    start_frame: int
    frames: list = field(default_factory=list)
    sim_body: list = field(default_factory=list)      # (11, 3) per frame
    ref_body: list = field(default_factory=list)
    sim_obj: list = field(default_factory=list)       # (3,)
    ref_obj: list = field(default_factory=list)
    actual_contact: list = field(default_factory=list)
    breakdowns: list = field(default_factory=list)    # None on the reset frame
    term_reason: str = ""

    def append(self, frame: int, world: WorldState, clip: MotionClip,
               report: ContactReport | None,
               breakdown: RewardBreakdown | None) -> None:
        self.frames.append(frame)
        self.sim_body.append(np.column_stack(
            [world.pos[:NUM_BODIES], world.theta[:NUM_BODIES]]))
        self.ref_body.append(np.column_stack(
            [clip.body_pos[frame], clip.body_theta[frame]]))
        self.sim_obj.append(np.array([*world.pos[OBJ], world.theta[OBJ]]))
        self.ref_obj.append(np.array([*clip.obj_pos[frame],
                                      clip.obj_theta[frame]]))
        self.actual_contact.append(
            report.object_contact.copy() if report is not None
            else np.zeros(NUM_BODIES, dtype=bool))
        self.breakdowns.append(breakdown)

    def __len__(self) -> int:
        return len(self.frames)


def metrics(log: EpisodeLog, clip: MotionClip) -> dict:
    if len(log) == 0:
        raise ValueError("cannot compute metrics for an empty episode log")
    sim_b = np.array(log.sim_body)
    ref_b = np.array(log.ref_body)
    sim_o = np.array(log.sim_obj)
    ref_o = np.array(log.ref_obj)
    body_err = np.linalg.norm(sim_b[:, :, :2] - ref_b[:, :, :2], axis=2)
    obj_err = np.linalg.norm(sim_o[:, :2] - ref_o[:, :2], axis=1)
    violated = (body_err.max(axis=1) > EVAL_BODY_DEV) | (obj_err > EVAL_OBJ_DEV)

    reached_end = log.frames[-1] == len(clip) - 1
    full_success = bool(reached_end and not violated.any())

    onsets = clip.contact_onsets()
    if len(onsets) >= 2:
        cutoff = onsets[1]
        in_window = np.array(log.frames) <= cutoff
        covered = bool(np.any(np.array(log.frames) >= cutoff))
        first_success = bool(covered and not violated[in_window].any())
    else:
        first_success = full_success

    if violated.any():
        clean = int(np.argmax(violated))
    else:
        clean = len(log)
    return {
        "clip_id": log.clip_id,
        "full_success": full_success,
        "first_success": first_success,
        "mpjpe_mm": float(body_err.mean() * 1000.0),
        "length_s": clean / clip.fps,
    }


def export_metrics_csv(rows: list, path: str) -> None:
    cols = ["clip_id", "full_success", "first_success", "mpjpe_mm", "length_s"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in cols})


# --- environment ------------------------------------------------------------

def default_basis(n: int = 32) -> BasisSet:
    """Shared fixed basis so codes are comparable across runs."""
    return sample_basis(RngStream(0, 17), n=n)


class TrackingEnv:
    """Single-clip tracking episode driver.

    envelope "train" applies the tight feasibility thresholds and the
    contact mismatch counters; "eval" cuts episodes only at the loose
    evaluation thresholds, for protocols where the policy is not required
    to mirror the reference contacts.
    """

    def __init__(self, clip: MotionClip, cfg: SimConfig | None = None,
                 basis: BasisSet | None = None, object_mass: float = 1.0,
                 envelope: str = "train"):
        if envelope not in ("train", "eval"):
            raise ValueError(f"unknown envelope {envelope!r}")
        self.clip = clip
        self.shape = default_shapes()[clip.shape_id]
        self.sim = Sim(morph=clip.morphology, shape=self.shape, cfg=cfg,
                       object_mass=object_mass)
        self.basis = basis if basis is not None else default_basis()
        self.phases = phase_table(clip)
        self.envelope = envelope
        self.world: WorldState | None = None
        self.t = 0
        self.history = ContactHistory()
        self.log: EpisodeLog | None = None

    def reset(self, start_frame: int = 0) -> tuple[Observation, TrackGoal]:
        if not 0 <= start_frame < len(self.clip):
            raise ValueError(f"start frame {start_frame} outside clip")
        f = self.clip.frame(start_frame)
        self.world = self.sim.reset_from_poses(f.body_poses, f.body_vels,
                                               f.obj_pose, f.obj_vel)
        self.t = start_frame
        self.history.reset()
        self.log = EpisodeLog(self.clip.clip_id, start_frame)
        self.log.append(start_frame, self.world, self.clip, None, None)
        return (build_obs(self.world, self.shape, self.basis),
                build_track_goal(self.clip, self.t, self.world))

    def _eval_termination(self) -> tuple[bool, str]:
        """Past the loose thresholds the episode can never recover a full
        success, so there is no point simulating the tail."""
        body_err = np.linalg.norm(
            self.world.pos[:NUM_BODIES] - self.clip.body_pos[self.t], axis=1)
        if float(body_err.max()) > EVAL_BODY_DEV:
            return True, "body_dev"
        if float(np.linalg.norm(self.world.pos[OBJ]
                                - self.clip.obj_pos[self.t])) > EVAL_OBJ_DEV:
            return True, "obj_dev"
        return False, ""

    def reference_action(self) -> np.ndarray:
        """Normalized action whose PD targets reproduce the next reference
        frame; learned policies act as residuals around it."""
        from .physics.morphology import joint_angles_from_poses
        tk = min(self.t + 1, len(self.clip) - 1)
        a = np.empty(11)
        a[0] = self.clip.body_pos[tk, 0, 0] / CART_LIMIT
        q = joint_angles_from_poses(self.clip.body_theta[tk])
        lo, hi = self.sim.jt.lo, self.sim.jt.hi
        a[1:] = 2.0 * (q - lo) / (hi - lo) - 1.0
        return np.clip(a, -1.0, 1.0)

    def step(self, action: np.ndarray):
        if self.world is None:
            raise RuntimeError("reset() before step()")
        self.world, report = self.sim.step(self.world, action)
        self.t += 1
        rb = reward(self.world, report, self.clip, self.t, self.shape,
                    self.phases)
        self.history.update(self.clip.contact_flags[self.t],
                            report.object_contact)
        if self.envelope == "train":
            done, reason = check_termination(self.world, self.clip, self.t,
                                             self.history)
        else:
            done, reason = self._eval_termination()
        if not done and self.t == len(self.clip) - 1:
            done, reason = True, "clip_end"
        self.log.append(self.t, self.world, self.clip, report, rb)
        if done:
            self.log.term_reason = reason
        obs = build_obs(self.world, self.shape, self.basis)
        goal = build_track_goal(self.clip, self.t, self.world)
        return obs, goal, rb, done, reason
