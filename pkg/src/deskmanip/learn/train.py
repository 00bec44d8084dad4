"""PPO training of the tracking policy over a clip dataset.

Episodes start at random reference frames, terminate on the feasibility
envelope, and draw clips with failure-weighted priorities refreshed by
periodic deterministic evaluations.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..core import RngStream
from ..motion.clip import Dataset, MotionClip
from ..trackenv import (REFRESH_EPISODES, SamplerState, TrackingEnv,
                        default_basis, metrics, refresh_due, sample_clip,
                        update_priorities)
from .checkpoint import checkpoint_save
from .nets import TrackerPolicy
from .ppo import PpoConfig, gae, ppo_update


@dataclass
class TrainConfig:
    ppo: PpoConfig = field(default_factory=PpoConfig)
    updates: int = 2000
    time_budget_s: float | None = None
    checkpoint_every: int = 100
    log_every: int = 1


class _Slot:
    """One rollout worker: owns a cached env per clip and episode state."""

    def __init__(self):
        self.envs: dict = {}
        self.env: TrackingEnv | None = None
        self.x: np.ndarray | None = None
        self.ep_reward = 0.0
        self.ep_len = 0

    def begin(self, clip: MotionClip, start: int, basis) -> None:
        env = self.envs.get(clip.clip_id)
        if env is None:
            env = TrackingEnv(clip, basis=basis)
            self.envs[clip.clip_id] = env
        self.env = env
        obs, goal = env.reset(start)
        self.x = np.concatenate([obs.vector(), goal.vector()])
        self.ep_reward = 0.0
        self.ep_len = 0


def apply_residual(env: TrackingEnv, residual: np.ndarray) -> np.ndarray:
    """Tracking policies output deltas around the action that reproduces
    the next reference frame; the sum is the engine-level action."""
    return np.clip(env.reference_action() + residual, -1.0, 1.0)


def rollout_episode(policy: TrackerPolicy, env: TrackingEnv,
                    start_frame: int = 0,
                    gen: torch.Generator | None = None,
                    max_steps: int | None = None):
    """Roll one episode (mean actions when gen is None); returns the
    episode's metrics row computed from the env log."""
    obs, goal = env.reset(start_frame)
    steps = 0
    while True:
        x = torch.from_numpy(
            np.concatenate([obs.vector(), goal.vector()]))[None]
        a, _ = policy.act(x, gen)
        obs, goal, _, done, _ = env.step(apply_residual(env, a[0].numpy()))
        steps += 1
        if done or (max_steps is not None and steps >= max_steps):
            break
    return metrics(env.log, env.clip)


def evaluate_tracker(policy: TrackerPolicy, clips: list, basis=None,
                     env_cache: dict | None = None) -> list:
    basis = basis if basis is not None else default_basis()
    rows = []
    for clip in clips:
        if env_cache is not None and clip.clip_id in env_cache:
            env = env_cache[clip.clip_id]
        else:
            env = TrackingEnv(clip, basis=basis)
            if env_cache is not None:
                env_cache[clip.clip_id] = env
        rows.append(rollout_episode(policy, env))
    return rows


def train_tracker(dataset: Dataset, cfg: TrainConfig, rng: RngStream,
                  out_dir: str | None = None) -> TrackerPolicy:
    clips = {c.clip_id: c for c in dataset.clips}
    train_clips = [clips[cid] for cid in dataset.train_ids]
    if not train_clips:
        raise ValueError("training needs a non-empty train split")

    basis = default_basis()
    policy = TrackerPolicy(seed=int(rng.split(1).integers(0, 2 ** 31 - 1)))
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.ppo.lr)
    act_gen = torch.Generator().manual_seed(
        int(rng.split(2).integers(0, 2 ** 31 - 1)))
    shuffle_gen = torch.Generator().manual_seed(
        int(rng.split(3).integers(0, 2 ** 31 - 1)))
    clip_rng = rng.split(4)
    start_rng = rng.split(5)

    sampler = SamplerState(list(dataset.train_ids))
    slots = [_Slot() for _ in range(cfg.ppo.n_envs)]
    eval_cache: dict = {}

    def fresh_episode(slot: _Slot):
        cid = sample_clip(sampler, clip_rng)
        clip = clips[cid]
        start = int(start_rng.integers(0, len(clip) - 1))
        slot.begin(clip, start, basis)

    for s in slots:
        fresh_episode(s)

    t0 = time.time()
    history = []
    log_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.csv")
        with open(log_path, "w", newline="") as f:
            csv.writer(f).writerow(
                ["update", "time_s", "mean_reward", "mean_ep_len",
                 "policy_loss", "value_loss", "clip_fraction", "approx_kl",
                 "success_rate"])

    success_rate = 0.0
    best_success = -1.0
    best_state = None
    e = cfg.ppo.n_envs
    t_steps = cfg.ppo.rollout
    for update in range(1, cfg.updates + 1):
        if cfg.time_budget_s is not None and time.time() - t0 > cfg.time_budget_s:
            break

        xs = np.zeros((t_steps, e, policy.obs_dim + policy.goal_dim))
        acts = np.zeros((t_steps, e, policy.act_dim))
        logps = np.zeros((t_steps, e))
        rews = np.zeros((t_steps, e))
        terms = np.zeros((t_steps, e), dtype=bool)
        vals = np.zeros((t_steps + 1, e))
        ep_rewards, ep_lens = [], []

        for t in range(t_steps):
            x = torch.from_numpy(np.stack([s.x for s in slots]))
            with torch.no_grad():
                a, logp = policy.act(x, act_gen)
                vals[t] = policy.value(x).numpy()
            xs[t] = x.numpy()
            acts[t] = a.numpy()
            logps[t] = logp.numpy()
            for i, slot in enumerate(slots):
                obs, goal, rb, done, _ = slot.env.step(
                    apply_residual(slot.env, a[i].numpy()))
                rews[t, i] = rb.total
                terms[t, i] = done
                slot.ep_reward += rb.total
                slot.ep_len += 1
                if done:
                    ep_rewards.append(slot.ep_reward)
                    ep_lens.append(slot.ep_len)
                    fresh_episode(slot)
                else:
                    slot.x = np.concatenate([obs.vector(), goal.vector()])
        with torch.no_grad():
            vals[t_steps] = policy.value(
                torch.from_numpy(np.stack([s.x for s in slots]))).numpy()

        adv, ret = gae(rews, vals, terms, cfg.ppo.gamma, cfg.ppo.lam)
        batch = {
            "inputs": torch.from_numpy(xs.reshape(t_steps * e, -1)),
            "actions": torch.from_numpy(acts.reshape(t_steps * e, -1)),
            "logp": torch.from_numpy(logps.reshape(-1)),
            "advantages": torch.from_numpy(adv.reshape(-1)),
            "returns": torch.from_numpy(ret.reshape(-1)),
            "shuffle_gen": shuffle_gen,
        }
        stats = ppo_update(batch, policy, optimizer, cfg.ppo)

        if refresh_due(sampler):
            rows = evaluate_tracker(policy, train_clips, basis, eval_cache)
            update_priorities(sampler,
                              {r["clip_id"]: r["full_success"] for r in rows})
            success_rate = float(np.mean([r["full_success"] for r in rows]))
            # mean-action success can flicker between updates; remember the
            # best weights so the returned policy is never a transient dip
            if success_rate > best_success:
                best_success = success_rate
                best_state = {k: v.clone()
                              for k, v in policy.state_dict().items()}

        row = {
            "update": update, "time_s": round(time.time() - t0, 2),
            "mean_reward": float(np.mean(ep_rewards)) if ep_rewards else 0.0,
            "mean_ep_len": float(np.mean(ep_lens)) if ep_lens else 0.0,
            "policy_loss": stats["policy_loss"],
            "value_loss": stats["value_loss"],
            "clip_fraction": stats["clip_fraction"],
            "approx_kl": stats["approx_kl"],
            "success_rate": success_rate,
        }
        history.append(row)
        if log_path and update % cfg.log_every == 0:
            with open(log_path, "a", newline="") as f:
                csv.writer(f).writerow([row[k] for k in row])
        if out_dir and update % cfg.checkpoint_every == 0:
            checkpoint_save(policy, os.path.join(out_dir, "tracker.ckpt"),
                            meta={"update": update})

    rows = evaluate_tracker(policy, train_clips, basis, eval_cache)
    final_success = float(np.mean([r["full_success"] for r in rows]))
    if best_state is not None and best_success > final_success:
        policy.load_state_dict(best_state)
        final_success = best_success
    policy.train_history = history
    policy.final_success_rate = final_success
    if out_dir:
        checkpoint_save(policy, os.path.join(out_dir, "tracker.ckpt"),
                        meta={"update": len(history),
                              "success_rate": final_success})
    return policy
