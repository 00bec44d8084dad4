"""World state container and the stepping front end around the impulse kernel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Pose2
from ..geometry import ObjectShape, boundary_points_local
from . import kernel
from .config import SimConfig, static_polys
from .morphology import (ACTION_DIM, BODY_MASS, CART_LIMIT, NUM_ARM_JOINTS,
                         NUM_BODIES, OBJ, TORSO_HEIGHT, JointTable, Morphology,
                         build_joint_table, canonical, forward_kinematics,
                         joint_angles_from_poses, pad_world)

# collision-free rest pose used by default_state (hands raised above the table)
HOME_Q = np.array([-2.5, 1.98, -1.05, 0.2, 0.2,
                   -0.64, -1.98, 1.05, 0.2, 0.2])


@dataclass
class WorldState:
    """Maximal-coordinate state: 11 character bodies + object at index 11."""

    pos: np.ndarray      # (12, 2)
    theta: np.ndarray    # (12,)
    vel: np.ndarray      # (12, 2)
    omega: np.ndarray    # (12,)
    time: float = 0.0

    def copy(self) -> "WorldState":
        return WorldState(self.pos.copy(), self.theta.copy(),
                          self.vel.copy(), self.omega.copy(), self.time)

    def body_poses(self) -> np.ndarray:
        """(11, 3) [x, y, theta] for the character bodies."""
        return np.column_stack([self.pos[:NUM_BODIES], self.theta[:NUM_BODIES]])

    def body_vels(self) -> np.ndarray:
        """(11, 3) [vx, vy, omega]."""
        return np.column_stack([self.vel[:NUM_BODIES], self.omega[:NUM_BODIES]])

    def object_pose(self) -> Pose2:
        return Pose2(float(self.pos[OBJ, 0]), float(self.pos[OBJ, 1]),
                     float(self.theta[OBJ]))

    def object_vel(self) -> np.ndarray:
        return np.array([self.vel[OBJ, 0], self.vel[OBJ, 1], self.omega[OBJ]])


@dataclass
class ContactReport:
    object_contact: np.ndarray       # (11,) bool, any substep this control step
    force: np.ndarray                # (11,) max over substeps of contact force sum, N
    joint_torque: np.ndarray         # (11,) cart force then 10 joint torques
    closest_point: np.ndarray        # (11, 2) object surface point nearest each pad
    closest_normal: np.ndarray       # (11, 2) outward object normal at that point
    distance: np.ndarray             # (11,) pad-to-surface distance, m


@dataclass
class StepDiagnostics:
    """Per-substep contact impulse dumps for solver validation."""
    normal_impulse: list = field(default_factory=list)
    tangent_impulse: list = field(default_factory=list)
    body_a: list = field(default_factory=list)
    body_b: list = field(default_factory=list)


def _joint_inertia_about(m: Morphology, jt: JointTable) -> np.ndarray:
    """Subtree inertia about each joint axis at the straightened pose,
    used to scale derivative gains."""
    poses = forward_kinematics(m, 0.0, np.zeros(NUM_ARM_JOINTS))
    inertia = m.body_inertia()
    subtree = {0: [1, 2, 3, 4, 5], 1: [2, 3, 4, 5], 2: [3, 4, 5], 3: [4], 4: [5],
               5: [6, 7, 8, 9, 10], 6: [7, 8, 9, 10], 7: [8, 9, 10], 8: [9], 9: [10]}
    out = np.zeros(NUM_ARM_JOINTS)
    for k in range(NUM_ARM_JOINTS):
        p = jt.parent[k]
        c, s = np.cos(poses[p, 2]), np.sin(poses[p, 2])
        ax = poses[p, 0] + c * jt.anchor_parent[k, 0] - s * jt.anchor_parent[k, 1]
        ay = poses[p, 1] + s * jt.anchor_parent[k, 0] + c * jt.anchor_parent[k, 1]
        total = 0.0
        bodies = [jt.child[k]] + [b for b in subtree[k] if b != jt.child[k]]
        for b in set(bodies):
            d2 = (poses[b, 0] - ax) ** 2 + (poses[b, 1] - ay) ** 2
            total += inertia[b] + BODY_MASS[b] * d2
        out[k] = total
    return out


class Sim:
    """Binds a morphology, object shape, and config into steppable dynamics."""

    def __init__(self, morph: Morphology | None = None,
                 shape: ObjectShape | None = None,
                 cfg: SimConfig | None = None,
                 object_mass: float = 1.0):
        from ..geometry import default_shapes
        self.morph = morph if morph is not None else canonical()
        self.shape = shape if shape is not None else default_shapes()["sq6"]
        self.cfg = cfg if cfg is not None else SimConfig()
        self.object_mass = float(object_mass)
        m, cfg_ = self.morph, self.cfg

        self.jt = build_joint_table(m)
        self.inv_m = np.zeros((12, 2))
        self.inv_i = np.zeros(12)
        inertia = m.body_inertia()
        for b in range(NUM_BODIES):
            self.inv_m[b] = 1.0 / BODY_MASS[b]
            self.inv_i[b] = 1.0 / inertia[b]
        self.inv_m[0, 1] = 0.0   # torso rides the rail
        self.inv_i[0] = 0.0
        self.inv_m[OBJ] = 1.0 / self.object_mass
        self.inv_i[OBJ] = 1.0 / (self.object_mass * self.shape.moment_per_mass())

        self.gmask = np.zeros(12)
        self.gmask[OBJ] = 1.0
        if not cfg_.arm_gravity_comp:
            self.gmask[1:NUM_BODIES] = 1.0

        self.j_kp = np.array([cfg_.kp_by_kind[k] for k in self.jt.kind])
        self.j_tau = np.array([cfg_.tau_by_kind[k] for k in self.jt.kind])
        self.j_kd = np.sqrt(self.j_kp * _joint_inertia_about(m, self.jt))
        self.cart_kd = np.sqrt(cfg_.cart_kp * BODY_MASS[:NUM_BODIES].sum())

        # hand collider spheres: tip + midpoint on each palm and finger
        from .morphology import FINGER_BODIES, FINGER_RADIUS, PALM_BODIES, PALM_RADIUS
        lengths = m.link_lengths()
        sph = []
        for b in list(PALM_BODIES) + list(FINGER_BODIES):
            r = PALM_RADIUS if b in PALM_BODIES else FINGER_RADIUS
            sph.append((b, (lengths[b] / 2.0, 0.0), r))
            sph.append((b, (0.0, 0.0), r))
        self.sph_body = np.array([s[0] for s in sph], dtype=np.int64)
        self.sph_local = np.array([s[1] for s in sph])
        self.sph_r = np.array([s[2] for s in sph])

        statics = static_polys()
        self.st_verts = np.stack(statics)
        self.st_norms = np.zeros_like(self.st_verts)
        for s, poly in enumerate(statics):
            nv = len(poly)
            for e in range(nv):
                edge = poly[(e + 1) % nv] - poly[e]
                edge /= np.linalg.norm(edge)
                self.st_norms[s, e] = [edge[1], -edge[0]]

        self.obj_verts = np.ascontiguousarray(self.shape.vertices, dtype=np.float64)
        mv = len(self.obj_verts)
        self._ow = np.zeros((mv, 2))
        self._onrm = np.zeros((mv, 2))
        mc = kernel.MAXC
        self._c = dict(
            a=np.zeros(mc, dtype=np.int64), b=np.zeros(mc, dtype=np.int64),
            p=np.zeros((mc, 2)), n=np.zeros((mc, 2)),
            ra=np.zeros((mc, 2)), rb=np.zeros((mc, 2)),
            kn=np.zeros(mc), kt=np.zeros(mc), vt=np.zeros(mc),
            jn=np.zeros(mc), jt=np.zeros(mc), depth=np.zeros(mc))
        self._pads = m.pad_local()

    # ---- state construction -------------------------------------------------

    def state_from_config(self, cart_x: float, q: np.ndarray,
                          obj_pose: Pose2, obj_vel=(0.0, 0.0, 0.0)) -> WorldState:
        poses = forward_kinematics(self.morph, cart_x, np.asarray(q, dtype=float))
        pos = np.zeros((12, 2))
        theta = np.zeros(12)
        pos[:NUM_BODIES] = poses[:, :2]
        theta[:NUM_BODIES] = poses[:, 2]
        pos[OBJ] = [obj_pose.x, obj_pose.y]
        theta[OBJ] = obj_pose.theta
        vel = np.zeros((12, 2))
        omega = np.zeros(12)
        vel[OBJ] = obj_vel[:2]
        omega[OBJ] = obj_vel[2]
        return WorldState(pos, theta, vel, omega, 0.0)

    def default_state(self, cart_x: float = 0.0, obj_x: float = 0.25,
                      obj_theta: float = 0.0) -> WorldState:
        from .config import TABLE_TOP
        rest = -float(np.min(self.shape.vertices[:, 1]))
        return self.state_from_config(
            cart_x, HOME_Q, Pose2(obj_x, TABLE_TOP + rest, obj_theta))

    def reset_from_poses(self, body_poses: np.ndarray, body_vels: np.ndarray,
                         obj_pose, obj_vel, time: float = 0.0) -> WorldState:
        """Build a state from recorded body poses, validating kinematic
        consistency against the joint structure."""
        if isinstance(body_poses, (list, tuple)) and body_poses \
                and isinstance(body_poses[0], Pose2):
            body_poses = np.array([p.as_array() for p in body_poses])
        body_poses = np.asarray(body_poses, dtype=float)
        body_vels = np.asarray(body_vels, dtype=float)
        if body_poses.shape != (NUM_BODIES, 3):
            raise ValueError(f"expected (11, 3) body poses, got {body_poses.shape}")
        if abs(body_poses[0, 1] - TORSO_HEIGHT) > 1e-6 or abs(body_poses[0, 2]) > 1e-6:
            raise ValueError("torso must sit on the rail with zero heading")
        q = joint_angles_from_poses(body_poses[:, 2])
        tol = 1e-6
        for k in range(NUM_ARM_JOINTS):
            if not self.jt.lo[k] - tol <= q[k] <= self.jt.hi[k] + tol:
                raise ValueError(
                    f"joint {k} angle {q[k]:.4f} outside "
                    f"[{self.jt.lo[k]:.3f}, {self.jt.hi[k]:.3f}]")
        fk = forward_kinematics(self.morph, float(body_poses[0, 0]), q)
        err = np.linalg.norm(fk[:, :2] - body_poses[:, :2], axis=1)
        worst = int(np.argmax(err))
        if err[worst] > 1e-3:
            from .morphology import BODY_NAMES
            raise ValueError(
                f"body poses inconsistent with joint structure: "
                f"{BODY_NAMES[worst]} off by {err[worst]:.4f} m")
        pos = np.zeros((12, 2))
        theta = np.zeros(12)
        vel = np.zeros((12, 2))
        omega = np.zeros(12)
        pos[:NUM_BODIES] = body_poses[:, :2]
        theta[:NUM_BODIES] = body_poses[:, 2]
        vel[:NUM_BODIES] = body_vels[:, :2]
        omega[:NUM_BODIES] = body_vels[:, 2]
        op = np.asarray([obj_pose[0], obj_pose[1], obj_pose[2]], dtype=float) \
            if not isinstance(obj_pose, Pose2) else np.array(obj_pose.as_array())
        pos[OBJ] = op[:2]
        theta[OBJ] = op[2]
        ov = np.asarray(obj_vel, dtype=float)
        vel[OBJ] = ov[:2]
        omega[OBJ] = ov[2]
        return WorldState(pos, theta, vel, omega, time)

    # ---- stepping -----------------------------------------------------------

    def action_to_targets(self, action: np.ndarray) -> tuple[float, np.ndarray]:
        a = np.asarray(action, dtype=float)
        if a.shape != (ACTION_DIM,):
            raise ValueError(f"action must have shape ({ACTION_DIM},), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("action contains NaN or inf")
        a = np.clip(a, -1.0, 1.0)
        cart_t = float(a[0]) * CART_LIMIT
        qt = self.jt.lo + (a[1:] + 1.0) * 0.5 * (self.jt.hi - self.jt.lo)
        return cart_t, qt

    def pd_torques(self, state: WorldState, action: np.ndarray) -> np.ndarray:
        """Clamped PD outputs [cart force, 10 joint torques] at the current state."""
        from .morphology import joint_velocities_from_bodies
        cart_t, qt = self.action_to_targets(action)
        q = joint_angles_from_poses(state.theta[:NUM_BODIES])
        qd = joint_velocities_from_bodies(state.omega[:NUM_BODIES])
        tau = np.clip(self.j_kp * (qt - q) - self.j_kd * qd, -self.j_tau, self.j_tau)
        f = np.clip(self.cfg.cart_kp * (cart_t - state.pos[0, 0])
                    - self.cart_kd * state.vel[0, 0],
                    -self.cfg.cart_fmax, self.cfg.cart_fmax)
        return np.concatenate([[f], tau])

    def step(self, state: WorldState, action: np.ndarray,
             diagnostics: StepDiagnostics | None = None
             ) -> tuple[WorldState, ContactReport]:
        cfg = self.cfg
        cart_t, qt = self.action_to_targets(action)
        if not (np.all(np.isfinite(state.pos)) and np.all(np.isfinite(state.vel))
                and np.all(np.isfinite(state.theta)) and np.all(np.isfinite(state.omega))):
            raise ValueError("world state contains NaN or inf")
        ns = state.copy()
        flag = np.zeros(NUM_BODIES, dtype=np.int64)
        force = np.zeros(NUM_BODIES)
        sub_flag = np.zeros(NUM_BODIES, dtype=np.int64)
        sub_force = np.zeros(NUM_BODIES)
        applied = np.zeros(ACTION_DIM)
        c = self._c
        for _ in range(cfg.decimation):
            sub_flag[:] = 0
            sub_force[:] = 0
            n = kernel.substep(
                ns.pos, ns.theta, ns.vel, ns.omega,
                self.inv_m, self.inv_i, self.gmask, cfg.gravity, cfg.substep_dt,
                self.jt.parent, self.jt.child, self.jt.sign,
                self.jt.anchor_parent, self.jt.anchor_child,
                self.jt.lo, self.jt.hi, self.j_kp, self.j_kd, self.j_tau, qt,
                cfg.cart_kp, self.cart_kd, cfg.cart_fmax, cart_t, CART_LIMIT,
                self.obj_verts, self.sph_body, self.sph_local, self.sph_r,
                self.st_verts, self.st_norms,
                cfg.friction, cfg.restitution, cfg.restitution_threshold,
                cfg.baumgarte, cfg.contact_slop, cfg.max_depenetration_speed,
                cfg.solver_iters, cfg.joint_projection_passes,
                c["a"], c["b"], c["p"], c["n"], c["ra"], c["rb"],
                c["kn"], c["kt"], c["vt"], c["jn"], c["jt"], c["depth"],
                self._ow, self._onrm,
                sub_flag, sub_force, applied)
            flag |= sub_flag
            force = np.maximum(force, sub_force)
            if diagnostics is not None:
                diagnostics.normal_impulse.append(c["jn"][:n].copy())
                diagnostics.tangent_impulse.append(c["jt"][:n].copy())
                diagnostics.body_a.append(c["a"][:n].copy())
                diagnostics.body_b.append(c["b"][:n].copy())
        ns.time = state.time + cfg.control_dt
        report = ContactReport(
            object_contact=flag.astype(bool),
            force=force,
            joint_torque=applied.copy(),
            **self._closest_from_pads(ns))
        return ns, report

    def _closest_from_pads(self, state: WorldState) -> dict:
        pads = pad_world(self.morph, state.body_poses())
        obj = state.object_pose()
        c, s = np.cos(obj.theta), np.sin(obj.theta)
        rel = pads - [obj.x, obj.y]
        local = np.column_stack([c * rel[:, 0] + s * rel[:, 1],
                                 -s * rel[:, 0] + c * rel[:, 1]])
        pts, nrm, dist, inside = boundary_points_local(self.shape, local)
        dist = np.where(inside, 0.0, dist)
        world_pts = np.column_stack([
            obj.x + c * pts[:, 0] - s * pts[:, 1],
            obj.y + s * pts[:, 0] + c * pts[:, 1]])
        world_nrm = np.column_stack([c * nrm[:, 0] - s * nrm[:, 1],
                                     s * nrm[:, 0] + c * nrm[:, 1]])
        return dict(closest_point=world_pts, closest_normal=world_nrm,
                    distance=dist)
