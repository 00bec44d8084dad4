"""Finite-difference validation of analytic gradients.

The nets are small enough that probing a subsample of coordinates per
tensor against central differences catches wiring mistakes (wrong
transpose, detached path, stale buffer) with near certainty.
"""

from __future__ import annotations

import numpy as np
import torch


def grad_check(net: torch.nn.Module, loss_fn, eps: float = 1e-5,
               samples_per_tensor: int = 8) -> float:
    """Max over parameter tensors of the relative disagreement between the
    analytic gradient and central differences.

    loss_fn() must return a scalar tensor computed from net's current
    parameters. For each tensor the coordinates with the largest analytic
    gradient are probed (they carry the tensor's gradient norm, so a wiring
    bug cannot hide in them) and compared as a vector:
    ||g_a - g_fd|| / max(1e-8, ||g_a|| + ||g_fd||).
    Raises on non-finite losses or gradients.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-3]")
    params = [p for p in net.parameters() if p.requires_grad]
    if not params:
        return 0.0
    net.zero_grad()
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise ValueError("loss is not finite")
    loss.backward()

    worst = 0.0
    with torch.no_grad():
        for p in params:
            g = p.grad
            if g is None:
                g = torch.zeros_like(p)
            if not torch.all(torch.isfinite(g)):
                raise ValueError("non-finite gradient")
            flat = p.view(-1)
            gflat = g.reshape(-1)
            k = min(samples_per_tensor, flat.numel())
            idxs = torch.argsort(gflat.abs(), descending=True)[:k]
            ga = np.array([gflat[i].item() for i in idxs])
            gfd = np.zeros(k)
            for out, i in enumerate(idxs):
                old = flat[i].item()
                flat[i] = old + eps
                lp = float(loss_fn())
                flat[i] = old - eps
                lm = float(loss_fn())
                flat[i] = old
                gfd[out] = (lp - lm) / (2.0 * eps)
            num = float(np.linalg.norm(ga - gfd))
            den = max(1e-8, float(np.linalg.norm(ga))
                      + float(np.linalg.norm(gfd)))
            worst = max(worst, num / den)
    net.zero_grad()
    return worst
