"""Command-line entry points for the pipeline: demonstration generation,
retargeting, tracker training, distillation, evaluation, goal serving,
and metrics plots.

Heavy imports happen inside the commands so `--help` stays instant.
"""

from __future__ import annotations

import os

import click

SMOKE_BUDGET_S = 360.0
DATASET_FILE = "dataset.json"


@click.group()
def main():
    """Desk-scale planar loco-manipulation toolkit."""


def _dataset_path(data_dir: str) -> str:
    path = os.path.join(data_dir, DATASET_FILE)
    if not os.path.isfile(path):
        raise click.ClickException(f"no {DATASET_FILE} in {data_dir}")
    return path


def _load_dataset(data_dir: str):
    from .motion import load_dataset
    try:
        return load_dataset(_dataset_path(data_dir))
    except ValueError as e:
        raise click.ClickException(str(e))


def _load_checkpoint(path: str):
    from .learn import checkpoint_load
    try:
        return checkpoint_load(path)
    except (OSError, ValueError) as e:
        raise click.ClickException(f"cannot load checkpoint {path}: {e}")


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="output directory for dataset.json")
@click.option("--clips", default=80, show_default=True,
              help="total clip count, split evenly across templates")
@click.option("--seed", default=0, show_default=True)
def gen_data(out_dir: str, clips: int, seed: int):
    """Generate scripted demonstrations with held-out test windows."""
    from .motion import TEMPLATES, build_dataset, save_dataset
    per = clips // len(TEMPLATES)
    if per < 2:
        raise click.BadParameter(
            f"need at least {2 * len(TEMPLATES)} clips "
            f"(2 per template)", param_hint="--clips")
    n_test = max(1, round(per / 5))
    ds = build_dataset(seed, n_train_per_template=per - n_test,
                       n_test_per_template=n_test)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, DATASET_FILE)
    save_dataset(ds, path)
    click.echo(f"wrote {len(ds.clips)} clips ({len(ds.train_ids)} train, "
               f"{len(ds.test_ids)} test) to {path}")


@main.command()
@click.option("--in", "in_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="source dataset.json")
@click.option("--morph-scale", required=True, type=float,
              help="link-length scale in percent (100 = unchanged)")
@click.option("--out", "out_path", required=True, type=click.Path())
def retarget(in_path: str, morph_scale: float, out_path: str):
    """Replay a dataset on a rescaled morphology, shifting each object so
    the recorded contacts line up with the new fingertips."""
    from .motion import (Dataset, filter_clip, load_dataset, retarget_object,
                         save_dataset)
    from .physics.morphology import canonical
    if morph_scale <= 0:
        raise click.BadParameter("must be positive",
                                 param_hint="--morph-scale")
    try:
        ds = load_dataset(in_path)
    except ValueError as e:
        raise click.ClickException(str(e))
    target = canonical().scaled(morph_scale / 100.0)
    kept, train_ids, test_ids = [], [], []
    for clip in ds.clips:
        rc = retarget_object(clip, target).clip
        ok, reason = filter_clip(rc)
        if not ok:
            click.echo(f"dropped {clip.clip_id}: {reason}", err=True)
            continue
        kept.append(rc)
        if clip.clip_id in ds.train_ids:
            train_ids.append(rc.clip_id)
        else:
            test_ids.append(rc.clip_id)
    if not kept:
        raise click.ClickException("every clip was rejected by the filter")
    save_dataset(Dataset(clips=kept, train_ids=train_ids,
                         test_ids=test_ids), out_path)
    click.echo(f"wrote {len(kept)} retargeted clips to {out_path}")


@main.command("train-tracker")
@click.option("--data", "data_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_ckpt", required=True, type=click.Path())
@click.option("--smoke", is_flag=True,
              help=f"budgeted run ({SMOKE_BUDGET_S:.0f} s)")
@click.option("--budget-s", type=float, default=None,
              help="wall-clock budget override in seconds")
@click.option("--seed", default=0, show_default=True)
def train_tracker_cmd(data_dir: str, out_ckpt: str, smoke: bool,
                      budget_s: float | None, seed: int):
    """Train the tracking policy with PPO over a demonstration dataset."""
    from .core import RngStream
    from .learn import TrainConfig, train_tracker
    ds = _load_dataset(data_dir)
    cfg = TrainConfig()
    if smoke or budget_s is not None:
        cfg = TrainConfig(updates=10 ** 9,
                          time_budget_s=budget_s if budget_s is not None
                          else SMOKE_BUDGET_S)
    out_dir = os.path.dirname(os.path.abspath(out_ckpt)) or "."
    os.makedirs(out_dir, exist_ok=True)
    policy = train_tracker(ds, cfg, RngStream(seed, 7000), out_dir=out_dir)
    default = os.path.join(out_dir, "tracker.ckpt")
    if os.path.abspath(default) != os.path.abspath(out_ckpt):
        os.replace(default, out_ckpt)
    click.echo(f"wrote {out_ckpt} after {len(policy.train_history)} updates, "
               f"train success {policy.final_success_rate:.2f}")


_ARCH_HEADS = {"det": "deterministic", "cvae": "cvae",
               "diffusion": "diffusion"}


@main.command("distill")
@click.option("--teacher", "teacher_ckpt", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--arch", required=True,
              type=click.Choice(sorted(_ARCH_HEADS)))
@click.option("--offline", is_flag=True,
              help="fit on teacher-visited states instead of student-visited")
@click.option("--data", "data_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_ckpt", required=True, type=click.Path())
@click.option("--budget-s", type=float, default=None)
@click.option("--seed", default=0, show_default=True)
def distill_cmd(teacher_ckpt: str, arch: str, offline: bool, data_dir: str,
                out_ckpt: str, budget_s: float | None, seed: int):
    """Distill the tracker into a masked goal-conditioned student."""
    from .core import RngStream
    from .learn import (DistillConfig, StudentPolicy, TrackerPolicy,
                        checkpoint_save, distill)
    teacher = _load_checkpoint(teacher_ckpt)
    if not isinstance(teacher, TrackerPolicy):
        raise click.ClickException(
            f"{teacher_ckpt} holds a {type(teacher).__name__}, "
            "expected a tracking policy")
    ds = _load_dataset(data_dir)
    student = StudentPolicy(_ARCH_HEADS[arch], seed=seed)
    cfg = DistillConfig(time_budget_s=budget_s)
    mode = "offline" if offline else "dagger"
    out_dir = os.path.dirname(os.path.abspath(out_ckpt)) or "."
    os.makedirs(out_dir, exist_ok=True)
    student = distill(teacher, student, ds, mode, cfg,
                      RngStream(seed, 8000), out_dir=out_dir)
    checkpoint_save(student, out_ckpt,
                    meta={"mode": mode, "teacher": teacher_ckpt})
    click.echo(f"wrote {out_ckpt} ({_ARCH_HEADS[arch]}, {mode})")


@main.command("eval")
@click.option("--task", required=True,
              type=click.Choice(["teleop", "objgoal"]))
@click.option("--ckpt", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--split", default="train", show_default=True,
              type=click.Choice(["train", "test"]))
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--count", default=1, show_default=True,
              help="passes over the split")
@click.option("--seed", default=0, show_default=True)
def eval_cmd(task: str, ckpt: str, data_dir: str, split: str, out_csv: str,
             count: int, seed: int):
    """Run a goal protocol over a dataset split and write metrics CSV."""
    from .evalrun import EvalTaskSpec, run_eval, summarize
    ds = _load_dataset(data_dir)
    try:
        spec = EvalTaskSpec(task, ckpt, split, count, seed)
        rows = run_eval(spec, ds, out_csv)
    except ValueError as e:
        raise click.ClickException(str(e))
    s = summarize(rows)
    click.echo(f"wrote {out_csv}: {len(rows)} episodes, "
               f"success {s['full_success']:.2f}, "
               f"mpjpe {s['mpjpe_mm']:.1f} mm")


@main.command()
@click.option("--ckpt", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--port", default=8765, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data", "data_dir", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="dataset for named-clip resets")
def serve(ckpt: str, port: int, host: str, data_dir: str | None):
    """Serve the live goal console backend over a WebSocket."""
    from .service import run_service
    policy = _load_checkpoint(ckpt)
    dataset = _load_dataset(data_dir) if data_dir else None
    run_service(policy, host=host, port=port, dataset=dataset)


@main.command()
@click.option("--metrics", "metrics_csv", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
def plot(metrics_csv: str, out_dir: str):
    """Render summary plots from a training log or evaluation CSV."""
    from .plotting import render_metrics
    try:
        paths = render_metrics(metrics_csv, out_dir)
    except ValueError as e:
        raise click.ClickException(str(e))
    for p in paths:
        click.echo(f"wrote {p}")


if __name__ == "__main__":
    main()
