"""Dataset ingestion, error metrics, front percentiles, survey pairing, and
run-directory persistence.

Input tables are plain numeric CSV with the label in the last column
(optional header). Features are z-scored with statistics fit on the training
split only; binary classification expects exactly two label values, mapped to
{0, 1}, and is evolved as regression on those labels with predictions
thresholded at 0.5 for the reported inaccuracy.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

TASKS = ("regression", "binary_classification")


class DataError(ValueError):
    """Malformed input table or inconsistent request."""


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    task: str
    seed: int
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_features(self) -> int:
        return self.X_train.shape[1]


def _parse_table(path, header) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataError(f"{path}: empty table")
    start = 0
    if header == "auto":
        try:
            [float(cell) for cell in rows[0]]
        except ValueError:
            start = 1
    elif header:
        start = 1
    body = rows[start:]
    if len(body) < 10:
        raise DataError(f"{path}: need at least 10 data rows, got {len(body)}")
    width = len(body[0])
    if width < 2:
        raise DataError(f"{path}: need at least one feature column plus a label")
    out = np.empty((len(body), width))
    for r, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path}: ragged row {r + start}")
        try:
            out[r] = [float(cell) for cell in row]
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric cell in row {r + start}: {exc}") from None
    return out


def load_dataset(path, task: str, seed: int, header="auto") -> Dataset:
    """Load a CSV (last column = label), split 70/30, z-score the features.

    Scaling statistics come from the training rows only; a constant training
    column maps to all zeros on both splits.
    """
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    table = _parse_table(path, header)
    X, y = table[:, :-1], table[:, -1]
    if task == "binary_classification":
        values = np.unique(y)
        if len(values) != 2:
            raise DataError(f"binary task needs exactly two label values, got {len(values)}")
        y = (y == values[1]).astype(float)

    n = len(X)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(0.7 * n))
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    mu = X[train_idx].mean(axis=0)
    sd = X[train_idx].std(axis=0)
    constant = sd < 1e-12
    sd_safe = np.where(constant, 1.0, sd)
    Xs = (X - mu) / sd_safe
    Xs[:, constant] = 0.0

    return Dataset(Xs[train_idx], y[train_idx], Xs[test_idx], y[test_idx],
                   task, seed, train_idx, test_idx)


def error_metric(task: str, pred_scaled, y) -> float:
    """Regression: MSE of the (already scaled) predictions. Binary
    classification: fraction misclassified after thresholding at 0.5."""
    pred = np.asarray(pred_scaled, dtype=float)
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise DataError("prediction/label length mismatch")
    if task == "regression":
        return float(np.mean((pred - y) ** 2))
    if task == "binary_classification":
        return float(np.mean((pred >= 0.5).astype(float) != y))
    raise DataError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# front reporting

def front_at_percentile(entries: Sequence, tau: int):
    """Entry at interpretability percentile tau: 0 = most accurate extreme
    (lowest score), 100 = most interpretable."""
    if not entries:
        raise DataError("empty front")
    if not 0 <= tau <= 100:
        raise DataError(f"tau must be in [0, 100], got {tau}")
    ordered = sorted(entries, key=lambda e: (e.psi_hat, e.expression))
    index = int(round(tau / 100 * (len(ordered) - 1)))
    return ordered[index]


@dataclass(frozen=True)
class SurveyPair:
    """A learned-run model matched against an accuracy-close competitor."""

    learned: object
    competitor: object
    kind: str  # which index produced the competitor run: "phi" | "size"
    tau: int
    gap: float  # |test error difference|


def build_survey_pairs(learned_front: Sequence, pools: Mapping[str, Sequence[Sequence]],
                       taus: Sequence[int] = (30, 50)) -> list[SurveyPair]:
    """For each tau and competitor kind, match the learned-front entry to the
    candidate with the smallest absolute test-error gap (first wins ties)."""
    if not pools or any(not fronts for fronts in pools.values()):
        raise DataError("need at least one precomputed front per competitor kind")
    out = []
    for tau in taus:
        anchor = front_at_percentile(learned_front, tau)
        for kind, fronts in pools.items():
            best = None
            best_gap = np.inf
            for front in fronts:
                for entry in front:
                    gap = abs(anchor.err_test - entry.err_test)
                    if gap < best_gap:
                        best, best_gap = entry, gap
            out.append(SurveyPair(anchor, best, kind, tau, float(best_gap)))
    return out


# ---------------------------------------------------------------------------
# run persistence

FRONT_FILE = "front.jsonl"
EVENTS_FILE = "events.jsonl"
TELEMETRY_FILE = "telemetry.jsonl"
CONFIG_FILE = "config.json"
ESTIMATOR_FILE = "estimator.npz"


def _write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_run(run_dir, *, config: dict, events: Sequence[dict], front,
             telemetry_rows: Sequence[dict], snapshot=None) -> None:
    """Write the standard run directory: config snapshot, event log, front,
    telemetry, and (when present) the estimator checkpoint."""
    from .estimator import save_snapshot
    from .evolution import write_front

    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, CONFIG_FILE), "w") as fh:
        json.dump(config, fh, indent=2)
    _write_jsonl(os.path.join(run_dir, EVENTS_FILE), events)
    write_front(front, os.path.join(run_dir, FRONT_FILE))
    _write_jsonl(os.path.join(run_dir, TELEMETRY_FILE), telemetry_rows)
    if snapshot is not None:
        save_snapshot(snapshot, os.path.join(run_dir, ESTIMATOR_FILE))


def load_run(run_dir) -> dict:
    from .evolution import read_front

    out = {
        "config": json.load(open(os.path.join(run_dir, CONFIG_FILE))),
        "front": read_front(os.path.join(run_dir, FRONT_FILE)),
        "events": _read_jsonl(os.path.join(run_dir, EVENTS_FILE)),
        "telemetry": _read_jsonl(os.path.join(run_dir, TELEMETRY_FILE)),
    }
    est = os.path.join(run_dir, ESTIMATOR_FILE)
    if os.path.exists(est):
        from .estimator import load_snapshot
        out["snapshot"] = load_snapshot(est)
    return out


def load_front_pool(pool_dir) -> list[list]:
    """All fronts found under a directory of run directories."""
    from .evolution import read_front

    fronts = []
    for name in sorted(os.listdir(pool_dir)):
        candidate = os.path.join(pool_dir, name, FRONT_FILE)
        if os.path.isfile(candidate):
            fronts.append(read_front(candidate))
    if not fronts:
        raise DataError(f"no run fronts under {pool_dir}")
    return fronts
