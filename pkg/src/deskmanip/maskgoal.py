"""Sparse goal construction for the versatile student.

A mask picks which entities are constrained at which future frames; each
surviving slot becomes an 11-number token with explicit validity flags, so
a policy can consume any subset of {torso, palms, object} targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream, wrap_angle
from .motion.clip import MotionClip
from .physics import OBJ, WorldState

ENTITIES = ("torso", "left_palm", "right_palm", "object")
ENTITY_BODY = {"torso": 0, "left_palm": 3, "right_palm": 8, "object": OBJ}
MAX_DT = 60
TOKEN_DIM = 11
SCHEMES = ("random", "teleop", "objgoal", "unconditioned")
SCHEME_WEIGHTS = {"random": 0.7, "teleop": 0.1, "objgoal": 0.1,
                  "unconditioned": 0.1}


@dataclass(frozen=True)
class GoalSlot:
    entity: str
    dt: int
    use_position: bool = True
    use_rotation: bool = True

    def __post_init__(self):
        if self.entity not in ENTITIES:
            raise ValueError(f"unknown entity {self.entity!r}")
        if not 1 <= self.dt <= MAX_DT:
            raise ValueError(f"dt {self.dt} outside [1, {MAX_DT}]")


@dataclass
class GoalMask:
    slots: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for s in self.slots:
            key = (s.entity, s.dt)
            if key in seen:
                raise ValueError(f"duplicate slot for {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.slots)


@dataclass
class GoalToken:
    """One constrained (entity, future time) pair.

    vector layout: entity one-hot x4, dt/60, position delta x2,
    heading delta cos/sin x2, validity flags x2. Masked sub-fields are
    zeroed and their validity flag is 0.
    """

    entity: str
    dt: int
    pos_delta: np.ndarray      # (2,) in the root frame
    rot_delta: np.ndarray      # (2,) cos/sin, zeroed when masked
    use_position: bool
    use_rotation: bool

    def vector(self) -> np.ndarray:
        onehot = np.zeros(len(ENTITIES))
        onehot[ENTITIES.index(self.entity)] = 1.0
        return np.concatenate([
            onehot, [self.dt / MAX_DT], self.pos_delta, self.rot_delta,
            [float(self.use_position), float(self.use_rotation)]])


@dataclass
class VersatileGoal:
    tokens: list = field(default_factory=list)

    def matrix(self) -> np.ndarray:
        """(n_tokens, 11); (0, 11) when unconditioned."""
        if not self.tokens:
            return np.zeros((0, TOKEN_DIM))
        return np.stack([t.vector() for t in self.tokens])


def draw_scheme(rng: RngStream) -> str:
    names = list(SCHEME_WEIGHTS)
    p = np.array([SCHEME_WEIGHTS[n] for n in names])
    return str(rng.choice(names, p=p))


def sample_mask(rng: RngStream, scheme: str) -> GoalMask:
    if scheme == "unconditioned":
        return GoalMask([])
    if scheme == "teleop":
        return GoalMask([GoalSlot(e, 1) for e in ENTITIES])
    if scheme == "objgoal":
        return GoalMask([GoalSlot("object", MAX_DT)])
    if scheme != "random":
        raise ValueError(f"unknown scheme {scheme!r}")
    dts = []
    while len(dts) < 2:
        d = int(rng.integers(1, MAX_DT + 1))
        if d not in dts:
            dts.append(d)
    slots = []
    for dt in sorted(dts):
        for e in ENTITIES:
            if rng.uniform() < 0.5:
                slots.append(GoalSlot(e, dt, use_position=True,
                                      use_rotation=bool(rng.uniform() < 0.5)))
    return GoalMask(slots)


def _entity_pose(body_pos, body_theta, obj_pos, obj_theta, entity):
    if entity == "object":
        return np.asarray(obj_pos, dtype=float), float(obj_theta)
    b = ENTITY_BODY[entity]
    return np.asarray(body_pos[b], dtype=float), float(body_theta[b])


def _delta_token(world: WorldState, entity: str, dt: int,
                 target_xy, target_theta,
                 use_position: bool, use_rotation: bool) -> GoalToken:
    cur_xy, cur_th = _entity_pose(world.pos, world.theta,
                                  world.pos[OBJ], world.theta[OBJ], entity)
    root_th = float(world.theta[0])
    c, s = math.cos(-root_th), math.sin(-root_th)
    if use_position:
        d = np.asarray(target_xy, dtype=float) - cur_xy
        pos = np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]])
    else:
        pos = np.zeros(2)
    if use_rotation and target_theta is not None:
        dth = wrap_angle(float(target_theta) - cur_th)
        rot = np.array([math.cos(dth), math.sin(dth)])
    else:
        rot = np.zeros(2)
        use_rotation = False
    return GoalToken(entity=entity, dt=dt, pos_delta=pos, rot_delta=rot,
                     use_position=use_position, use_rotation=use_rotation)


def build_versatile_goal(clip: MotionClip, t: int, world: WorldState,
                         mask: GoalMask) -> VersatileGoal:
    """Read each slot's reference pose at its future frame (clamped to the
    clip end) and encode the delta from the current simulated pose."""
    tokens = []
    for slot in mask.slots:
        tk = min(t + slot.dt, len(clip) - 1)
        if slot.entity == "object":
            target_xy = clip.obj_pos[tk]
            target_th = clip.obj_theta[tk]
        else:
            b = ENTITY_BODY[slot.entity]
            target_xy = clip.body_pos[tk, b]
            target_th = clip.body_theta[tk, b]
        tokens.append(_delta_token(world, slot.entity, slot.dt,
                                   target_xy, target_th,
                                   slot.use_position, slot.use_rotation))
    return VersatileGoal(tokens)


def token_from_world_target(world: WorldState, entity: str, dt: int,
                            x: float, y: float,
                            theta: float | None = None) -> GoalToken:
    """Token for an absolute world-space target, as sent by a live client."""
    if entity not in ENTITIES:
        raise ValueError(f"unknown entity {entity!r}")
    dt = int(np.clip(dt, 1, MAX_DT))
    return _delta_token(world, entity, dt, (x, y), theta,
                        use_position=True, use_rotation=theta is not None)
