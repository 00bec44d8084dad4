"""Static summary plots for the CSV artifacts the pipeline writes.

The input kind is sniffed from the header: PPO training logs, distillation
loss logs, and per-episode evaluation tables each get their own figures.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be set first

TRAIN_COLUMNS = {"update", "mean_reward", "mean_ep_len", "success_rate"}
DISTILL_COLUMNS = {"step", "loss"}
EVAL_COLUMNS = {"clip_id", "full_success", "mpjpe_mm"}


def _read_rows(path: str) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path} has no data rows")
    return rows


def _save(fig, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_training(rows: list[dict], out_dir: str) -> list[str]:
    u = [int(r["update"]) for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(u, [float(r["mean_reward"]) for r in rows])
    axes[0].set_title("episode reward")
    axes[1].plot(u, [float(r["mean_ep_len"]) for r in rows])
    axes[1].set_title("episode length (frames)")
    axes[2].plot(u, [float(r["success_rate"]) for r in rows])
    axes[2].set_ylim(-0.05, 1.05)
    axes[2].set_title("train clip success")
    for ax in axes:
        ax.set_xlabel("update")
        ax.grid(alpha=0.3)
    out = [_save(fig, out_dir, "training_curves.png")]

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, col in zip(axes, ("policy_loss", "value_loss", "approx_kl")):
        ax.plot(u, [float(r[col]) for r in rows])
        ax.set_title(col.replace("_", " "))
        ax.set_xlabel("update")
        ax.grid(alpha=0.3)
    out.append(_save(fig, out_dir, "training_losses.png"))
    return out


def _plot_distill(rows: list[dict], out_dir: str) -> list[str]:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([int(r["step"]) for r in rows],
            [float(r["loss"]) for r in rows])
    ax.set_xlabel("gradient step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.set_title("distillation loss")
    return [_save(fig, out_dir, "distill_loss.png")]


def _plot_eval(rows: list[dict], out_dir: str) -> list[str]:
    episodes = [r for r in rows if r["clip_id"] != "summary"]
    if not episodes:
        raise ValueError("evaluation table holds only the summary row")
    ids = sorted({r["clip_id"] for r in episodes})

    def rate(cid, col):
        vals = [r[col] == "True" for r in episodes if r["clip_id"] == cid]
        return sum(vals) / len(vals)

    x = range(len(ids))
    fig, axes = plt.subplots(1, 2, figsize=(max(8, len(ids)), 3.8))
    w = 0.38
    axes[0].bar([i - w / 2 for i in x], [rate(c, "full_success")
                                         for c in ids], w, label="full")
    axes[0].bar([i + w / 2 for i in x], [rate(c, "first_success")
                                         for c in ids], w,
                label="first interaction")
    axes[0].set_ylim(0, 1.05)
    axes[0].set_ylabel("success rate")
    axes[0].legend()
    mpjpe = [[float(r["mpjpe_mm"]) for r in episodes if r["clip_id"] == c]
             for c in ids]
    axes[1].bar(x, [sum(v) / len(v) for v in mpjpe])
    axes[1].set_ylabel("MPJPE (mm)")
    for ax in axes:
        ax.set_xticks(list(x))
        ax.set_xticklabels(ids, rotation=60, ha="right", fontsize=7)
        ax.grid(alpha=0.3, axis="y")
    return [_save(fig, out_dir, "eval_summary.png")]


def render_metrics(csv_path: str, out_dir: str) -> list[str]:
    """Write figures for a recognized CSV; returns the created paths."""
    rows = _read_rows(csv_path)
    cols = set(rows[0])
    os.makedirs(out_dir, exist_ok=True)
    if TRAIN_COLUMNS <= cols:
        return _plot_training(rows, out_dir)
    if EVAL_COLUMNS <= cols:
        return _plot_eval(rows, out_dir)
    if DISTILL_COLUMNS <= cols:
        return _plot_distill(rows, out_dir)
    raise ValueError(f"unrecognized metrics header: {sorted(cols)}")
