"""Teacher-student distillation of the tracker into the masked student.

DAgger mode lets the student drive and the teacher label every visited
state with its full-goal action; offline mode fits the same losses on
states the teacher itself visited. The gap between the two on recovery
situations is the point of the comparison.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass

import numpy as np
import torch

from ..core import RngStream
from ..maskgoal import (GoalMask, VersatileGoal, build_versatile_goal,
                        draw_scheme, sample_mask)
from ..motion.clip import Dataset
from ..trackenv import TrackingEnv, default_basis, table_code
from .nets import StudentPolicy, TrackerPolicy, student_act
from .train import apply_residual

MAX_TOKENS = 8   # the random scheme draws at most 4 entities x 2 offsets


@dataclass
class DistillConfig:
    lr: float = 1e-3
    batch: int = 256
    env_steps: int = 30_000
    collect_chunk: int = 256
    grad_per_collect: int = 8
    buffer_cap: int = 60_000
    sigma_dec: float = 0.1
    beta: float = 0.01
    time_budget_s: float | None = None


def pad_tokens(goal: VersatileGoal, cap: int = MAX_TOKENS):
    """(cap, 11) token matrix plus a validity mask."""
    m = goal.matrix()
    n = min(len(m), cap)
    out = np.zeros((cap, m.shape[1] if m.size else 11))
    mask = np.zeros(cap, dtype=bool)
    out[:n] = m[:n]
    mask[:n] = True
    return out, mask


def gaussian_kl(mu_q, log_sigma_q, mu_p, log_sigma_p):
    """KL(q || p) for diagonal Gaussians, summed over the latent."""
    var_ratio = torch.exp(2.0 * (log_sigma_q - log_sigma_p))
    mean_term = ((mu_q - mu_p) / log_sigma_p.exp()) ** 2
    return 0.5 * (var_ratio + mean_term - 1.0
                  + 2.0 * (log_sigma_p - log_sigma_q)).sum(-1)


def head_loss(student: StudentPolicy, batch: dict, cfg: DistillConfig,
              gen: torch.Generator) -> torch.Tensor:
    s = batch["s"]
    tokens = batch["tokens"]
    tmask = batch["tmask"]
    a = batch["actions"]
    if student.head == "deterministic":
        pred = student.deterministic_action(s, tokens, tmask)
        return ((pred - a) ** 2).mean()
    if student.head == "cvae":
        mu_p, ls_p = student.prior(s, tokens, tmask)
        mu_q, ls_q = student.posterior(s, batch["track_goal"], mu_p, ls_p)
        eps = torch.empty_like(mu_q).normal_(generator=gen)
        z = mu_q + ls_q.exp() * eps
        pred = student.decode(s, tokens, z, tmask)
        recon = ((pred - a) ** 2).sum(-1).mean() / (2.0 * cfg.sigma_dec ** 2)
        kl = gaussian_kl(mu_q, ls_q, mu_p, ls_p).mean()
        return recon + cfg.beta * kl
    n = student.diffusion_steps
    j = torch.randint(1, n + 1, (s.shape[0],), generator=gen)
    ab = student.alpha_bar[j][:, None]
    eps = torch.empty_like(a).normal_(generator=gen)
    noisy = torch.sqrt(ab) * a + torch.sqrt(1.0 - ab) * eps
    pred = student.predict_noise(s, tokens, noisy, j, tmask)
    return ((pred - eps) ** 2).mean()


class _Buffer:
    def __init__(self, cap: int, obs_dim: int, goal_dim: int, act_dim: int):
        self.cap = cap
        self.s = np.zeros((cap, obs_dim))
        self.tokens = np.zeros((cap, MAX_TOKENS, 11))
        self.tmask = np.zeros((cap, MAX_TOKENS), dtype=bool)
        self.track_goal = np.zeros((cap, goal_dim))
        self.actions = np.zeros((cap, act_dim))
        self.n = 0
        self.head = 0

    def add(self, s, tokens, tmask, track_goal, action):
        i = self.head
        self.s[i] = s
        self.tokens[i] = tokens
        self.tmask[i] = tmask
        self.track_goal[i] = track_goal
        self.actions[i] = action
        self.head = (i + 1) % self.cap
        self.n = min(self.n + 1, self.cap)

    def sample(self, batch: int, rng: RngStream) -> dict:
        idx = rng.integers(0, self.n, size=min(batch, self.n))
        return {
            "s": torch.from_numpy(self.s[idx]),
            "tokens": torch.from_numpy(self.tokens[idx]),
            "tmask": torch.from_numpy(self.tmask[idx]),
            "track_goal": torch.from_numpy(self.track_goal[idx]),
            "actions": torch.from_numpy(self.actions[idx]),
        }


def distill(teacher: TrackerPolicy, student: StudentPolicy,
            dataset: Dataset, mode: str, cfg: DistillConfig,
            rng: RngStream, out_dir: str | None = None) -> StudentPolicy:
    if teacher is None:
        raise ValueError("distillation needs a trained teacher")
    if mode not in ("dagger", "offline"):
        raise ValueError(f"unknown mode {mode!r}")
    clips = {c.clip_id: c for c in dataset.clips}
    train_clips = [clips[cid] for cid in dataset.train_ids]
    basis = default_basis()

    buffer = _Buffer(cfg.buffer_cap, student.obs_dim, teacher.goal_dim,
                     student.act_dim)
    optimizer = torch.optim.Adam(student.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(
        int(rng.split(1).integers(0, 2 ** 31 - 1)))
    mask_rng = rng.split(2)
    pick_rng = rng.split(3)
    batch_rng = rng.split(4)

    envs = {c.clip_id: TrackingEnv(c, basis=basis) for c in train_clips}
    log_rows = []
    t0 = time.time()

    state = {"env": None, "obs": None, "goal": None, "mask": None}

    def new_episode():
        clip = train_clips[int(pick_rng.integers(0, len(train_clips)))]
        env = envs[clip.clip_id]
        start = int(pick_rng.integers(0, len(clip) - 1))
        obs, goal = env.reset(start)
        mask = sample_mask(mask_rng, draw_scheme(mask_rng))
        state.update(env=env, obs=obs, goal=goal, mask=mask)

    def collect(n_steps: int, driver: str) -> None:
        for _ in range(n_steps):
            if state["env"] is None:
                new_episode()
            env, obs, goal = state["env"], state["obs"], state["goal"]
            s_student = np.concatenate(
                [obs.vector(), table_code(env.world, basis)])
            vg = build_versatile_goal(env.clip, env.t, env.world,
                                      state["mask"])
            tokens, tmask = pad_tokens(vg)
            teacher_x = torch.from_numpy(
                np.concatenate([obs.vector(), goal.vector()]))[None]
            with torch.no_grad():
                a_label, _ = teacher.act(teacher_x, None)
            # the student has no reference clip at inference time, so it is
            # supervised on the engine-level action, not the teacher's
            # residual parameterization
            buffer.add(s_student, tokens, tmask, goal.vector(),
                       apply_residual(env, a_label[0].numpy()))
            if driver == "student":
                ts = torch.from_numpy(s_student)[None]
                tk = torch.from_numpy(tokens[tmask])[None]
                a = student_act(student, ts, tk, gen)[0].numpy()
            else:
                with torch.no_grad():
                    a, _ = teacher.act(teacher_x, gen)
                a = apply_residual(env, a[0].numpy())
            next_obs, next_goal, _, done, _ = env.step(a)
            if done:
                state["env"] = None
            else:
                state["obs"], state["goal"] = next_obs, next_goal

    def grad_steps(n: int, step_base: int) -> None:
        for k in range(n):
            batch = buffer.sample(cfg.batch, batch_rng)
            loss = head_loss(student, batch, cfg, gen)
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite distillation loss")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            log_rows.append({"step": step_base + k,
                             "loss": float(loss.item()),
                             "time_s": round(time.time() - t0, 2)})

    steps_done = 0
    grads_done = 0
    if mode == "offline":
        while steps_done < cfg.env_steps:
            if cfg.time_budget_s and time.time() - t0 > cfg.time_budget_s / 2:
                break
            collect(cfg.collect_chunk, driver="teacher")
            steps_done += cfg.collect_chunk
        total_grads = (steps_done // cfg.collect_chunk) * cfg.grad_per_collect
        chunk = 64
        while grads_done < total_grads:
            if cfg.time_budget_s and time.time() - t0 > cfg.time_budget_s:
                break
            grad_steps(min(chunk, total_grads - grads_done), grads_done)
            grads_done += min(chunk, total_grads - grads_done)
    else:
        while steps_done < cfg.env_steps:
            if cfg.time_budget_s and time.time() - t0 > cfg.time_budget_s:
                break
            collect(cfg.collect_chunk, driver="student")
            steps_done += cfg.collect_chunk
            grad_steps(cfg.grad_per_collect, grads_done)
            grads_done += cfg.grad_per_collect

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"distill_{student.head}_{mode}.csv")
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["step", "loss", "time_s"])
            w.writeheader()
            w.writerows(log_rows)
    student.distill_history = log_rows
    return student
