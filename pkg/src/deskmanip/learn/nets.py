"""Policy networks: the Gaussian tracker and the token-attention student
with its three heads (deterministic, C-VAE, diffusion).

Everything runs in float64: the nets are small, CPU matmuls are cheap at
this scale, and it keeps finite-difference gradient checks and the
token-permutation property well below their tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..maskgoal import TOKEN_DIM
from ..physics import ACTION_DIM
from ..trackenv import GOAL_DIM, K_FAR, K_NEAR, OBS_DIM

STUDENT_OBS_DIM = OBS_DIM + 32   # observation plus the table's surface code
LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
LATENT_DIM = 32
DIFFUSION_STEPS = 16
STUDENT_WIDTH = 128
STUDENT_HEADS = 4
HEAD_KINDS = ("deterministic", "cvae", "diffusion")


def mlp(sizes, out_bias=True):
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1],
                                bias=out_bias or i < len(sizes) - 2))
        if i < len(sizes) - 2:
            layers.append(nn.Tanh())
    return nn.Sequential(*layers)


def init_params(module: nn.Module, gen: torch.Generator,
                out_scale: float = 1.0) -> None:
    """Deterministic fan-in uniform init from an explicit generator; the
    last linear layer of the module is scaled down by out_scale."""
    linears = [m for m in module.modules() if isinstance(m, nn.Linear)]
    for i, m in enumerate(linears):
        bound = 1.0 / math.sqrt(m.in_features)
        if i == len(linears) - 1:
            bound *= out_scale
        m.weight.data.uniform_(-bound, bound, generator=gen)
        if m.bias is not None:
            m.bias.data.zero_()


def _goal_scale() -> torch.Tensor:
    """Per-entry input scaling for tracking goals: positional deltas are
    multiplied by fps/k so both horizons arrive in velocity units instead
    of k-dependent magnitudes."""
    s = torch.ones(GOAL_DIM, dtype=torch.float64)
    off = 0
    for k in (K_NEAR, K_FAR):
        block = s[off:off + 59]
        block[0:44].view(11, 4)[:, :2] = 30.0 / k
        block[44:46] = 30.0 / k
        off += 59
    return s


class TrackerPolicy(nn.Module):
    """Gaussian policy 272 -> 512 -> 256 -> 11 with a state-independent
    log standard deviation, plus a value trunk of the same shape."""

    def __init__(self, obs_dim: int = OBS_DIM, goal_dim: int = GOAL_DIM,
                 act_dim: int = ACTION_DIM, seed: int = 0):
        super().__init__()
        self.obs_dim = obs_dim
        self.goal_dim = goal_dim
        self.act_dim = act_dim
        self.seed = seed
        in_dim = obs_dim + goal_dim
        self.trunk = mlp([in_dim, 512, 256])
        self.mean_head = nn.Linear(256, act_dim)
        # exploration noise rides on top of a reference-reproducing action;
        # the multiplicative tracking reward collapses once noise alone
        # pushes mean body error past a few centimetres
        self.log_std = nn.Parameter(torch.full((act_dim,), -3.5,
                                               dtype=torch.float64))
        self.v_trunk = mlp([in_dim, 512, 256])
        self.v_head = nn.Linear(256, 1)
        scale = _goal_scale() if goal_dim == GOAL_DIM \
            else torch.ones(goal_dim, dtype=torch.float64)
        self.register_buffer("goal_scale", scale)
        self.double()
        gen = torch.Generator().manual_seed(seed)
        init_params(self.trunk, gen)
        init_params(self.mean_head, gen, out_scale=0.01)
        init_params(self.v_trunk, gen)
        init_params(self.v_head, gen)

    def _scale(self, x: torch.Tensor) -> torch.Tensor:
        x = x.clone()
        x[..., self.obs_dim:] = x[..., self.obs_dim:] * self.goal_scale
        return x

    def forward(self, x: torch.Tensor):
        x = self._scale(x)
        h = torch.tanh(self.trunk(x))
        mean = self.mean_head(h)
        log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std.expand_as(mean)

    def value(self, x: torch.Tensor) -> torch.Tensor:
        x = self._scale(x)
        return self.v_head(torch.tanh(self.v_trunk(x))).squeeze(-1)

    def dist(self, x: torch.Tensor) -> torch.distributions.Normal:
        mean, log_std = self(x)
        return torch.distributions.Normal(mean, log_std.exp())

    @torch.no_grad()
    def act(self, x: torch.Tensor, gen: torch.Generator | None = None):
        """Sampled action with its log-probability; mean action when no
        generator is given."""
        mean, log_std = self(x)
        if gen is None:
            return mean, None
        std = log_std.exp()
        eps = torch.empty_like(mean).normal_(generator=gen)
        a = mean + std * eps
        logp = (-0.5 * ((a - mean) / std) ** 2 - log_std
                - 0.5 * math.log(2.0 * math.pi)).sum(-1)
        return a, logp

    def descriptor(self) -> dict:
        return {"kind": "tracker", "obs_dim": self.obs_dim,
                "goal_dim": self.goal_dim, "act_dim": self.act_dim}


class AttnBlock(nn.Module):
    """One multi-head attention block with a learned pooling query.

    The query attends over the token set and a feed-forward stage refines
    the pooled vector; with no positional encoding the output is invariant
    to token order.
    """

    def __init__(self, dim: int = STUDENT_WIDTH, heads: int = STUDENT_HEADS):
        super().__init__()
        if dim % heads:
            raise ValueError("width must divide evenly across heads")
        self.dim = dim
        self.heads = heads
        self.query = nn.Parameter(torch.zeros(dim, dtype=torch.float64))
        self.wk = nn.Linear(dim, dim)
        self.wv = nn.Linear(dim, dim)
        self.wq = nn.Linear(dim, dim)
        self.wo = nn.Linear(dim, dim)
        self.ff = mlp([dim, 2 * dim, dim])

    def forward(self, tokens: torch.Tensor,
                mask: torch.Tensor | None = None) -> torch.Tensor:
        """tokens (B, n, dim), mask (B, n) with True = valid -> (B, dim)."""
        b, n, d = tokens.shape
        hd = d // self.heads
        q = self.wq(self.query).view(self.heads, hd)
        k = self.wk(tokens).view(b, n, self.heads, hd)
        v = self.wv(tokens).view(b, n, self.heads, hd)
        logits = torch.einsum("hd,bnhd->bhn", q, k) / math.sqrt(hd)
        if mask is not None:
            logits = logits.masked_fill(~mask[:, None, :], -torch.inf)
        attn = torch.softmax(logits, dim=-1)
        pooled = torch.einsum("bhn,bnhd->bhd", attn, v).reshape(b, d)
        h = self.query + self.wo(pooled)
        return h + self.ff(torch.tanh(h))


def cosine_alpha_bar(n: int = DIFFUSION_STEPS, s: float = 0.008) -> np.ndarray:
    """(n+1,) cumulative signal fractions; index 0 is exactly 1.

    Per-step noise fractions derived from the cosine curve are capped at
    0.999 so the final cumulative value stays bounded away from zero, then
    re-accumulated. Below the cap this reproduces the raw cosine values.
    """
    j = np.arange(n + 1, dtype=float)
    f = np.cos((j / n + s) / (1.0 + s) * math.pi / 2.0) ** 2
    raw = f / f[0]
    betas = np.clip(1.0 - raw[1:] / raw[:-1], 0.0, 0.999)
    out = np.ones(n + 1)
    out[1:] = np.cumprod(1.0 - betas)
    return out


class StudentPolicy(nn.Module):
    """Token-attention student: shared state and goal-token encoders feed
    one attention block; the pooled vector drives the selected head."""

    def __init__(self, head: str, obs_dim: int = STUDENT_OBS_DIM,
                 act_dim: int = ACTION_DIM, width: int = STUDENT_WIDTH,
                 latent_dim: int = LATENT_DIM,
                 diffusion_steps: int = DIFFUSION_STEPS, seed: int = 0):
        super().__init__()
        if head not in HEAD_KINDS:
            raise ValueError(f"unknown head {head!r}")
        self.head = head
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.width = width
        self.latent_dim = latent_dim
        self.diffusion_steps = diffusion_steps
        self.seed = seed

        self.state_enc = mlp([obs_dim, width, width])
        self.goal_enc = mlp([TOKEN_DIM, width, width])
        self.block = AttnBlock(width)
        gen = torch.Generator().manual_seed(seed)

        if head == "deterministic":
            self.action_head = mlp([width, width, act_dim])
        elif head == "cvae":
            self.prior_net = mlp([width, width, 2 * latent_dim])
            enc_in = obs_dim + GOAL_DIM + 2 * latent_dim
            self.encoder_net = mlp([enc_in, 256, 2 * latent_dim])
            self.decoder_net = mlp([width + latent_dim, width, act_dim])
            self.register_buffer("track_goal_scale", _goal_scale())
        else:
            self.action_token = mlp([act_dim, width])
            self.time_token = mlp([1, width])
            self.noise_head = mlp([width, width, act_dim])
            ab = cosine_alpha_bar(diffusion_steps)
            self.register_buffer("alpha_bar",
                                 torch.tensor(ab, dtype=torch.float64))
        self.double()
        init_params(self, gen)
        for last in ("action_head", "decoder_net", "noise_head"):
            if hasattr(self, last):
                init_params(getattr(self, last), gen, out_scale=0.1)

    def encode(self, s: torch.Tensor, tokens: torch.Tensor,
               token_mask: torch.Tensor | None = None,
               extra: list | None = None) -> torch.Tensor:
        """s (B, obs_dim), tokens (B, n, 11) -> pooled (B, width)."""
        b = s.shape[0]
        parts = [self.state_enc(s)[:, None, :]]
        valid = [torch.ones(b, 1, dtype=torch.bool, device=s.device)]
        if tokens.shape[1]:
            parts.append(self.goal_enc(tokens))
            if token_mask is None:
                token_mask = torch.ones(b, tokens.shape[1], dtype=torch.bool,
                                        device=s.device)
            valid.append(token_mask)
        if extra:
            for e in extra:
                parts.append(e[:, None, :])
                valid.append(torch.ones(b, 1, dtype=torch.bool,
                                        device=s.device))
        return self.block(torch.cat(parts, dim=1), torch.cat(valid, dim=1))

    # --- heads ---------------------------------------------------------

    def deterministic_action(self, s, tokens, token_mask=None):
        return self.action_head(self.encode(s, tokens, token_mask))

    def prior(self, s, tokens, token_mask=None):
        h = self.encode(s, tokens, token_mask)
        mu, log_sigma = self.prior_net(h).chunk(2, dim=-1)
        return mu, log_sigma.clamp(-5.0, 2.0)

    def posterior(self, s, track_goal, mu_prior, log_sigma_prior):
        """Residual encoder over the full tracking goal; the posterior mean
        is an offset from the prior's."""
        g = track_goal * self.track_goal_scale
        x = torch.cat([s, g, mu_prior, log_sigma_prior], dim=-1)
        d_mu, log_sigma = self.encoder_net(x).chunk(2, dim=-1)
        return mu_prior + d_mu, log_sigma.clamp(-5.0, 2.0)

    def decode(self, s, tokens, z, token_mask=None):
        h = self.encode(s, tokens, token_mask)
        return self.decoder_net(torch.cat([h, z], dim=-1))

    def predict_noise(self, s, tokens, noisy_action, j, token_mask=None):
        """j: (B,) integer timesteps in [1, N]."""
        tj = j.to(torch.float64)[:, None] / self.diffusion_steps
        extra = [self.action_token(noisy_action), self.time_token(tj)]
        h = self.encode(s, tokens, token_mask, extra=extra)
        return self.noise_head(h)

    def descriptor(self) -> dict:
        return {"kind": "student", "head": self.head,
                "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "width": self.width, "latent_dim": self.latent_dim,
                "diffusion_steps": self.diffusion_steps}


def build_from_descriptor(desc: dict) -> nn.Module:
    kind = desc.get("kind")
    if kind == "tracker":
        return TrackerPolicy(obs_dim=desc["obs_dim"],
                             goal_dim=desc["goal_dim"],
                             act_dim=desc["act_dim"])
    if kind == "student":
        return StudentPolicy(head=desc["head"], obs_dim=desc["obs_dim"],
                             act_dim=desc["act_dim"], width=desc["width"],
                             latent_dim=desc["latent_dim"],
                             diffusion_steps=desc["diffusion_steps"])
    raise ValueError(f"unknown architecture kind {kind!r}")


def cvae_act(student: StudentPolicy, s: torch.Tensor, tokens: torch.Tensor,
             gen: torch.Generator | None = None,
             token_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Draw z from the learned prior and decode; mean-z when no generator."""
    mu, log_sigma = student.prior(s, tokens, token_mask)
    if gen is None:
        z = mu
    else:
        eps = torch.empty_like(mu).normal_(generator=gen)
        z = mu + log_sigma.exp() * eps
    return student.decode(s, tokens, z, token_mask)


def ddpm_sample(student: StudentPolicy, s: torch.Tensor,
                tokens: torch.Tensor, gen: torch.Generator,
                n_steps: int | None = None,
                token_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Ancestral sampling from pure noise down to a clean action."""
    n = student.diffusion_steps if n_steps is None else int(n_steps)
    if not 1 <= n <= student.diffusion_steps:
        raise ValueError(f"need 1 <= steps <= {student.diffusion_steps}")
    ab = student.alpha_bar
    b = s.shape[0]
    a = torch.empty(b, student.act_dim, dtype=torch.float64)
    a.normal_(generator=gen)
    for j in range(n, 0, -1):
        beta = 1.0 - ab[j] / ab[j - 1]
        alpha = 1.0 - beta
        jj = torch.full((b,), j, dtype=torch.long)
        eps_hat = student.predict_noise(s, tokens, a, jj, token_mask)
        mean = (a - beta / torch.sqrt(1.0 - ab[j]) * eps_hat) \
            / torch.sqrt(alpha)
        if j > 1:
            var = (1.0 - ab[j - 1]) / (1.0 - ab[j]) * beta
            z = torch.empty_like(a).normal_(generator=gen)
            a = mean + torch.sqrt(var) * z
        else:
            a = mean
    return a.clamp(-1.0, 1.0)


@torch.no_grad()
def student_act(student: StudentPolicy, s: torch.Tensor,
                tokens: torch.Tensor, gen: torch.Generator | None = None,
                token_mask: torch.Tensor | None = None,
                diffusion_steps: int | None = None) -> torch.Tensor:
    """Head-appropriate action for rollouts, clamped to the action box."""
    if student.head == "deterministic":
        a = student.deterministic_action(s, tokens, token_mask)
    elif student.head == "cvae":
        a = cvae_act(student, s, tokens, gen, token_mask)
    else:
        if gen is None:
            raise ValueError("diffusion sampling needs a generator")
        a = ddpm_sample(student, s, tokens, gen, n_steps=diffusion_steps,
                        token_mask=token_mask)
    return a.clamp(-1.0, 1.0)
