"""Headless driver for experiments and pre-computation.

Subcommands: run-batch (seeded GP runs under a chosen interpretability
scorer, with an oracle standing in for the user in learned mode), run-toy
(the estimator learning-curve experiment), compare (pairwise ranking
misalignment between scorers), report (tables from existing run
directories), and serve (the session API).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
failure. Every table is also written as machine-readable records.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import __version__
from .datasets import DataError, front_at_percentile, load_dataset, load_run, save_run
from .estimator import load_snapshot, make_reference
from .evolution import read_front
from .loop import RunConfig, RunError, run_session
from .simulate import (
    METHODS,
    OracleUser,
    ToyConfig,
    compare_estimators,
    run_toy_experiment,
    summarize_curves,
)

REPORT_TAUS = (0, 10, 30, 50)
EXAMPLE_TAUS = (10, 50, 90)


class ConfigCliError(click.ClickException):
    exit_code = 2


class DataCliError(click.ClickException):
    exit_code = 3


class RuntimeCliError(click.ClickException):
    exit_code = 4


def _wrap_errors(fn):
    import functools

    @functools.wraps(fn)
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except DataError as exc:
            raise DataCliError(str(exc)) from exc
        except RunError as exc:
            raise ConfigCliError(str(exc)) from exc
        except OSError as exc:
            raise RuntimeCliError(str(exc)) from exc
        except Exception as exc:  # anything else is a runtime failure
            raise RuntimeCliError(f"{type(exc).__name__}: {exc}") from exc

    return inner


@click.group()
@click.version_option(__version__)
def cli():
    """Preference-steered symbolic regression experiments."""


def _make_oracle(spec: str | None, noise_p: float):
    if spec is None:
        return None
    if spec == "size":
        return OracleUser(make_reference("size"), noise_p)
    if spec == "phi":
        return OracleUser(make_reference("phi"), noise_p)
    if spec.startswith("snapshot:"):
        return OracleUser(load_snapshot(spec.split(":", 1)[1]), noise_p)
    raise ConfigCliError(f"unknown oracle {spec!r} (size | phi | snapshot:<path>)")


def aggregate_runs(fronts: list, taus=REPORT_TAUS) -> dict:
    """Mean front size plus mean train/test errors at each percentile."""
    rows = {
        "front_size": float(np.mean([len(f) for f in fronts])),
        "n_runs": len(fronts),
        "taus": list(taus),
        "train": [], "test": [],
    }
    for tau in taus:
        entries = [front_at_percentile(front, tau) for front in fronts]
        rows["train"].append(float(np.mean([e.err_train for e in entries])))
        rows["test"].append(float(np.mean([e.err_test for e in entries])))
    return rows


def format_aggregate_table(agg: dict, title: str) -> str:
    lines = [title,
             "tau    " + "".join(f"{t:>10d}" for t in agg["taus"]),
             f"Front  {agg['front_size']:.1f} (mean size over {agg['n_runs']} runs)",
             "Train  " + "".join(f"{v:>10.2f}" for v in agg["train"]),
             "Test   " + "".join(f"{v:>10.2f}" for v in agg["test"])]
    return "\n".join(lines)


@cli.command("run-batch")
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=click.Choice(["regression", "binary_classification"]),
              default="regression", show_default=True)
@click.option("--estimator", type=click.Choice(["learned", "phi", "size"]),
              default="size", show_default=True)
@click.option("--runs", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pop", "pop_size", default=256, show_default=True)
@click.option("--gens", "generations", default=50, show_default=True)
@click.option("--oracle", default=None,
              help="size | phi | snapshot:<path>; required with --estimator learned")
@click.option("--noise-p", default=0.0, show_default=True,
              help="oracle answer flip probability")
@click.option("--queries-per-gen", default=4, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_wrap_errors
def run_batch(dataset_path, task, estimator, runs, seed, pop_size, generations,
              oracle, noise_p, queries_per_gen, out_dir):
    """Seeded GP runs; per-run directories plus an aggregate table."""
    user = _make_oracle(oracle, noise_p)
    if estimator == "learned" and user is None:
        raise ConfigCliError("--estimator learned needs --oracle (no human in batch mode)")
    os.makedirs(out_dir, exist_ok=True)

    fronts = []
    for i in range(runs):
        run_seed = seed + i
        dataset = load_dataset(dataset_path, task, run_seed)
        config = RunConfig(task=task, estimator=estimator, pop_size=pop_size,
                           generations=generations, seed=run_seed,
                           oracle_queries_per_generation=queries_per_gen)
        result = run_session(dataset, config, user=user)
        run_dir = os.path.join(out_dir, f"run_{i:03d}")
        save_run(run_dir,
                 config=config.to_dict() | {"dataset": os.path.abspath(dataset_path),
                                            "oracle": oracle, "noise_p": noise_p},
                 events=result.events,
                 front=result.front,
                 telemetry_rows=[r.to_dict() for r in result.telemetry.rows],
                 snapshot=result.snapshot)
        fronts.append(result.front)
        click.echo(f"run {i}: front size {len(result.front)}")

    agg = aggregate_runs(fronts)
    with open(os.path.join(out_dir, "aggregate.json"), "w") as fh:
        json.dump(agg, fh, indent=2)
    table = format_aggregate_table(agg, f"{estimator} on {os.path.basename(dataset_path)}")
    with open(os.path.join(out_dir, "aggregate.txt"), "w") as fh:
        fh.write(table + "\n")
    click.echo(table)


@cli.command("run-toy")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seeds", "repetitions", default=30, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--checkpoints", default=24, show_default=True)
@click.option("--answers-per-checkpoint", default=25, show_default=True)
@click.option("--pool-size", default=1000, show_default=True)
@click.option("--test-size", default=1000, show_default=True)
@_wrap_errors
def run_toy(out_dir, repetitions, seed, checkpoints, answers_per_checkpoint,
            pool_size, test_size):
    """Estimator learning curves (ranking vs classic, uncertainty vs random)."""
    cfg = ToyConfig(repetitions=repetitions, seed=seed, checkpoints=checkpoints,
                    answers_per_checkpoint=answers_per_checkpoint,
                    pool_size=pool_size, test_size=test_size)
    os.makedirs(out_dir, exist_ok=True)
    points = run_toy_experiment(cfg)
    with open(os.path.join(out_dir, "curves.jsonl"), "w") as fh:
        for p in points:
            fh.write(json.dumps({"method": p.method, "seed": p.seed,
                                 "checkpoint": p.checkpoint, "feedback": p.feedback,
                                 "footrule": p.footrule}) + "\n")
    summary = summarize_curves(points)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({"repetitions": cfg.repetitions, "seed": cfg.seed,
                   "checkpoints": cfg.checkpoints,
                   "answers_per_checkpoint": cfg.answers_per_checkpoint,
                   "pool_size": cfg.pool_size, "test_size": cfg.test_size}, fh, indent=2)
    click.echo(f"{'method':<18}{'feedback':>9}{'median':>9}{'mean':>9}"
               f"{'iqr25':>9}{'iqr75':>9}")
    for row in summary:
        if row["checkpoint"] in (0, checkpoints):
            click.echo(f"{row['method']:<18}{row['feedback']:>9d}"
                       f"{row['median']:>9.3f}{row['mean']:>9.3f}"
                       f"{row['iqr_low']:>9.3f}{row['iqr_high']:>9.3f}")


@cli.command("compare")
@click.option("--snapshot", "snapshots", multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="estimator checkpoint (repeatable)")
@click.option("--reference", "references", multiple=True,
              type=click.Choice(["size", "phi"]), help="reference index (repeatable)")
@click.option("--models", "models_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="front file supplying the model set")
@click.option("--out", "out_path", default="-", show_default=True)
@_wrap_errors
def compare(snapshots, references, models_path, out_path):
    """Pairwise ranking-misalignment matrix between scorers."""
    scorers = [(f"snapshot:{os.path.basename(p)}", load_snapshot(p)) for p in snapshots]
    scorers += [(name, make_reference(name)) for name in references]
    if len(scorers) < 2:
        raise ConfigCliError("need at least two scorers (snapshots and/or references)")
    entries = read_front(models_path)
    seen = set()
    keys, feats = [], []
    for e in entries:
        if e.expression not in seen:
            seen.add(e.expression)
            keys.append(e.expression)
            feats.append(e.features)
    if len(keys) < 2:
        raise DataCliError(f"{models_path}: need at least two distinct models")
    names, matrix = compare_estimators(scorers, np.array(feats, float), keys)
    payload = {"names": names, "footrule": matrix.tolist(), "n_models": len(keys)}
    text = json.dumps(payload, indent=2)
    if out_path == "-":
        click.echo(text)
    else:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")


@cli.command("report")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--seed", default=0, show_default=True,
              help="sampling seed for the example-model table")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
@_wrap_errors
def report(run_dirs, seed, out_dir):
    """Error summaries and example models from existing run directories."""
    runs = [load_run(d) for d in run_dirs]
    fronts = [r["front"] for r in runs]
    if not fronts:
        raise DataCliError("no runs given")

    agg = aggregate_runs(fronts)
    table = format_aggregate_table(agg, f"aggregate over {len(fronts)} runs")

    rng = np.random.default_rng(seed)
    examples = []
    for tau in EXAMPLE_TAUS:
        front = fronts[int(rng.integers(len(fronts)))]
        e = front_at_percentile(front, tau)
        examples.append({"tau": tau, "train": e.err_train, "test": e.err_test,
                         "model": e.expression})
    example_lines = ["", "example models (sampled from the run fronts)",
                     f"{'tau':>4}  {'train':>8}  {'test':>8}  model"]
    example_lines += [f"{x['tau']:>4}  {x['train']:>8.2f}  {x['test']:>8.2f}  {x['model']}"
                      for x in examples]
    text = table + "\n" + "\n".join(example_lines)
    click.echo(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump({"aggregate": agg, "examples": examples}, fh, indent=2)
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(text + "\n")


@cli.command("serve")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@_wrap_errors
def serve(config_path, host, port):
    """Run the session API for the web frontend."""
    import uvicorn

    from .service import create_app, load_service_config

    app = create_app(load_service_config(config_path))
    uvicorn.run(app, host=host, port=port)


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    return 0
