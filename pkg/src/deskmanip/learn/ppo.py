"""Generalized advantage estimation and the clipped-surrogate update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .nets import TrackerPolicy


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    n_envs: int = 64
    rollout: int = 32
    epochs: int = 4
    minibatches: int = 4
    vf_coef: float = 0.5
    max_grad_norm: float = 1.0
    kl_limit: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0 or not 0.0 < self.lam < 1.0:
            raise ValueError("gamma and lam must lie in (0, 1)")
        for name in ("clip", "lr", "n_envs", "rollout", "epochs",
                     "minibatches", "vf_coef", "max_grad_norm", "kl_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def gae(rewards: np.ndarray, values: np.ndarray, terminals: np.ndarray,
        gamma: float, lam: float):
    """Advantage recursion over a (T,) or (T, E) batch of aligned arrays.

    values carries one extra trailing row: the bootstrap value of the state
    after the last step (ignored where the last step terminated). Returns
    unnormalized advantages and returns = advantages + values[:-1].
    """
    rewards = np.asarray(rewards, dtype=float)
    terminals = np.asarray(terminals, dtype=bool)
    values = np.asarray(values, dtype=float)
    t = rewards.shape[0]
    if terminals.shape != rewards.shape or values.shape[0] != t + 1:
        raise ValueError("rewards (T,...), terminals (T,...), values (T+1,...)")
    adv = np.zeros_like(rewards)
    carry = np.zeros_like(rewards[0] if rewards.ndim > 1 else rewards[:1][0])
    for i in range(t - 1, -1, -1):
        live = ~terminals[i]
        delta = rewards[i] + gamma * values[i + 1] * live - values[i]
        carry = delta + gamma * lam * live * carry
        adv[i] = carry
    return adv, adv + values[:-1]


def ppo_update(batch: dict, policy: TrackerPolicy,
               optimizer: torch.optim.Optimizer, cfg: PpoConfig) -> dict:
    """Runs cfg.epochs x cfg.minibatches clipped-surrogate steps on one
    rollout batch; aborts remaining epochs when the approximate KL to the
    rollout policy exceeds cfg.kl_limit.

    batch: inputs (N, obs+goal), actions (N, act), logp (N,),
    advantages (N,), returns (N,) as float64 tensors.
    """
    inputs = batch["inputs"]
    actions = batch["actions"]
    logp_old = batch["logp"]
    returns = batch["returns"]
    adv = batch["advantages"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = inputs.shape[0]
    stats = {"policy_loss": [], "value_loss": [], "clip_fraction": [],
             "approx_kl": []}
    aborted = False
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=batch.get("shuffle_gen"))
        for mb in torch.chunk(perm, cfg.minibatches):
            dist = policy.dist(inputs[mb])
            logp = dist.log_prob(actions[mb]).sum(-1)
            ratio = torch.exp(logp - logp_old[mb])
            clipped = torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
            a = adv[mb]
            policy_loss = -torch.min(ratio * a, clipped * a).mean()
            value = policy.value(inputs[mb])
            value_loss = ((value - returns[mb]) ** 2).mean()
            loss = policy_loss + cfg.vf_coef * value_loss
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite PPO loss")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(),
                                           cfg.max_grad_norm)
            optimizer.step()
            with torch.no_grad():
                kl = (logp_old[mb] - logp).mean().item()
                frac = ((ratio - 1.0).abs() > cfg.clip).double().mean().item()
            stats["policy_loss"].append(policy_loss.item())
            stats["value_loss"].append(value_loss.item())
            stats["clip_fraction"].append(frac)
            stats["approx_kl"].append(kl)
            if kl > cfg.kl_limit:
                aborted = True
                break
        if aborted:
            break
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["aborted"] = aborted
    return out
