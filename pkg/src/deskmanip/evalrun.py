"""Evaluation protocols for trained policies.

Teleop conditions the student on next-frame targets for torso, palms, and
object every control step; objgoal issues only a far object target,
re-issued each time its horizon elapses. Both run on the loose evaluation
envelope and report the same per-episode metrics as tracking evaluation.
A perturbation variant teleports the object mid-episode to expose the
recovery gap between online and offline distillation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import torch

from .core import RngStream
from .learn.checkpoint import checkpoint_load
from .learn.nets import StudentPolicy, TrackerPolicy, student_act
from .learn.train import evaluate_tracker
from .maskgoal import ENTITIES, MAX_DT, GoalMask, GoalSlot, build_versatile_goal
from .motion.clip import Dataset
from .physics import OBJ
from .trackenv import TrackingEnv, build_obs, default_basis, metrics, table_code

TASKS = ("teleop", "objgoal")
EVAL_CSV_COLUMNS = ("clip_id", "full_success", "first_success",
                    "mpjpe_mm", "length_s")


@dataclass
class EvalTaskSpec:
    """task and checkpoint to drive; count is the number of passes over
    the chosen split."""

    task: str
    ckpt: str
    split: str = "train"
    count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.count < 1:
            raise ValueError("count must be >= 1")


def teleop_mask() -> GoalMask:
    return GoalMask([GoalSlot(e, 1) for e in ENTITIES])


class ObjGoalSchedule:
    """Sparse object targets: a fixed future reference frame is the goal
    until the simulation reaches it, then the next one is issued; the
    goal frame never extends past the clip end."""

    def __init__(self, clip):
        self.clip = clip
        self.goal_frame = -1

    def mask(self, t: int) -> GoalMask:
        if t >= self.goal_frame:
            self.goal_frame = min(t + MAX_DT, len(self.clip) - 1)
        return GoalMask([GoalSlot("object", self.goal_frame - t)])


def student_episode(student: StudentPolicy, env: TrackingEnv, task: str,
                    gen: torch.Generator | None,
                    start_frame: int = 0,
                    nudge: tuple | None = None) -> dict:
    """One protocol episode; nudge = (frame, dx, dy) teleports the object
    when the simulation reaches that frame."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    obs, _ = env.reset(start_frame)
    sched = ObjGoalSchedule(env.clip) if task == "objgoal" else None
    while True:
        mask = teleop_mask() if task == "teleop" else sched.mask(env.t)
        vg = build_versatile_goal(env.clip, env.t, env.world, mask)
        s = torch.from_numpy(np.concatenate(
            [obs.vector(), table_code(env.world, env.basis)]))[None]
        tokens = torch.from_numpy(vg.matrix())[None]
        a = student_act(student, s, tokens, gen)[0].numpy()
        obs, _, _, done, _ = env.step(a)
        if done:
            break
        if nudge is not None and env.t == nudge[0]:
            env.world.pos[OBJ] += [nudge[1], nudge[2]]
            obs = build_obs(env.world, env.shape, env.basis)
    return metrics(env.log, env.clip)


def run_eval(spec: EvalTaskSpec, dataset: Dataset,
             out_csv: str | None = None) -> list:
    """Protocol evaluation over a dataset split; teacher checkpoints are
    driven by full tracking goals instead of sparse tokens."""
    policy = checkpoint_load(spec.ckpt)
    clips = dataset.split(spec.split)
    if not clips:
        raise ValueError(f"split {spec.split!r} has no clips")
    basis = default_basis()
    rows = []
    if isinstance(policy, TrackerPolicy):
        for _ in range(spec.count):
            rows += evaluate_tracker(policy, clips, basis)
    elif isinstance(policy, StudentPolicy):
        gen = torch.Generator().manual_seed(spec.seed)
        envs = {c.clip_id: TrackingEnv(c, basis=basis, envelope="eval")
                for c in clips}
        for _ in range(spec.count):
            for clip in clips:
                rows.append(student_episode(policy, envs[clip.clip_id],
                                            spec.task, gen))
    else:
        raise ValueError(f"cannot evaluate a {type(policy).__name__}")
    if out_csv:
        write_eval_csv(rows, out_csv)
    return rows


def summarize(rows: list) -> dict:
    return {
        "clip_id": "summary",
        "full_success": round(float(np.mean([r["full_success"]
                                             for r in rows])), 4),
        "first_success": round(float(np.mean([r["first_success"]
                                              for r in rows])), 4),
        "mpjpe_mm": round(float(np.mean([r["mpjpe_mm"] for r in rows])), 3),
        "length_s": round(float(np.mean([r["length_s"] for r in rows])), 3),
    }


def write_eval_csv(rows: list, path: str) -> None:
    """Per-episode rows plus one aggregate row with clip_id `summary`."""
    if not rows:
        raise ValueError("no evaluation rows to write")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(EVAL_CSV_COLUMNS))
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in EVAL_CSV_COLUMNS})
        w.writerow(summarize(rows))


def perturbation_recovery_eval(student: StudentPolicy, clips: list,
                               n_rollouts: int = 64, seed: int = 0,
                               nudge_dist: float = 0.05) -> float:
    """Objgoal success rate when the object is teleported mid-episode.

    The nudge direction is drawn from the upper half-plane so the object
    is never pushed into the table; its magnitude stays well inside the
    evaluation envelope, so failures measure recovery, not the nudge.
    """
    if not clips:
        raise ValueError("need at least one clip")
    rng = RngStream(seed, 31)
    gen = torch.Generator().manual_seed(seed)
    basis = default_basis()
    envs = {c.clip_id: TrackingEnv(c, basis=basis, envelope="eval")
            for c in clips}
    wins = 0
    for k in range(n_rollouts):
        clip = clips[k % len(clips)]
        ang = float(rng.uniform(0.0, math.pi))
        nudge = (len(clip) // 2, nudge_dist * math.cos(ang),
                 nudge_dist * math.sin(ang))
        row = student_episode(student, envs[clip.clip_id], "objgoal", gen,
                              nudge=nudge)
        wins += int(row["full_success"])
    return wins / n_rollouts
