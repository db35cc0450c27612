"""Simulated users and ranking-comparison machinery.

An oracle user answers queries from a fixed target scorer (a reference index
or a frozen network snapshot), optionally flipping answers with some
probability, which makes every interactive experiment runnable headless. The
Spearman footrule measures misalignment between two rankings: 0 identical,
about 1 for unrelated orders, exactly 1.5 for reversals.

The toy experiment trains fresh ranking networks against a linear ground
truth after a size-index warm-up and compares uncertainty-driven pair
selection with random selection, plus a classic regression baseline at half
the answer budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exprs
from .estimator import (
    DEFAULT_PHI,
    SIZE_INDEX,
    EstimatorSnapshot,
    FeedforwardNet,
    ReferenceIndex,
    warmup,
    warmup_regression,
)


def target_score(target, features) -> np.ndarray:
    """Deterministic scores from either a reference index or a snapshot."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if isinstance(target, ReferenceIndex):
        return target.score(F)
    if isinstance(target, EstimatorSnapshot):
        return target.predict_deterministic(F)
    if hasattr(target, "score"):
        return np.asarray(target.score(F))
    raise TypeError(f"cannot score with {type(target).__name__}")


@dataclass(frozen=True)
class OracleUser:
    """Answers queries according to a target scorer; noise_p flips answers."""

    target: object
    noise_p: float = 0.0


def oracle_answer(user: OracleUser, query, rng: np.random.Generator) -> str:
    left = float(target_score(user.target, query.left.features)[0])
    right = float(target_score(user.target, query.right.features)[0])
    choice = "left" if left >= right else "right"  # ties go left
    if user.noise_p > 0 and rng.random() < user.noise_p:
        choice = "right" if choice == "left" else "left"
    return choice


# ---------------------------------------------------------------------------
# rankings

def rank_by_score(keys: Sequence[str], scores) -> dict[str, int]:
    """Ranks 1..r by score descending; ties broken by key for determinism."""
    scores = np.asarray(scores, dtype=float)
    if len(keys) != len(scores):
        raise ValueError("keys/scores length mismatch")
    if len(set(keys)) != len(keys):
        raise ValueError("ranking keys must be unique")
    order = sorted(range(len(keys)), key=lambda i: (-scores[i], keys[i]))
    return {keys[i]: rank for rank, i in enumerate(order, start=1)}


def spearman_footrule(ranking_a: dict[str, int], ranking_b: dict[str, int]) -> float:
    """(3 / q(r)) * sum |R(f) - S(f)| with q(r) = r*r for even r, else
    r*r - 1. Expectation ~1 for random orders, 0 identical, 1.5 reversed."""
    if set(ranking_a) != set(ranking_b):
        raise ValueError("rankings cover different model sets")
    r = len(ranking_a)
    if r < 2:
        raise ValueError("need at least two models")
    q = r * r if r % 2 == 0 else r * r - 1
    displacement = sum(abs(ranking_a[k] - ranking_b[k]) for k in ranking_a)
    return 3.0 * displacement / q


def footrule_from_scores(keys: Sequence[str], scores_a, scores_b) -> float:
    return spearman_footrule(rank_by_score(keys, scores_a),
                             rank_by_score(keys, scores_b))


def compare_estimators(scorers: Sequence[tuple[str, object]], features,
                       keys: Sequence[str]) -> tuple[list[str], np.ndarray]:
    """Pairwise footrule matrix between the rankings each scorer induces
    over the same model set (deterministic prediction mode)."""
    names = [name for name, _ in scorers]
    rankings = [rank_by_score(keys, target_score(target, features))
                for _, target in scorers]
    m = len(scorers)
    matrix = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            matrix[i, j] = matrix[j, i] = spearman_footrule(rankings[i], rankings[j])
    return names, matrix


# ---------------------------------------------------------------------------
# toy experiment

# Ground truth for the learning-curve experiment: a linear index that, unlike
# plain size, is dominated by non-arithmetic structure (composition chains),
# on the percentage-like value scale such scores are naturally reported on.
# The ranking loss only ever sees the ordering; the value-label baseline has
# to cope with the raw scale, which is the point of comparing them.
TOY_GROUND_TRUTH = ReferenceIndex(
    "phi", (85.0, -0.2, 0.0, -4.0, -4.0, -1.6, -1.6))


@dataclass
class ToyConfig:
    n_features: int = 13
    pool_size: int = 1000
    test_size: int = 1000
    repetitions: int = 30
    checkpoints: int = 24
    answers_per_checkpoint: int = 25  # ranking answers between measurements
    answer_steps: int = 5  # SGD steps spent on each answer / value label
    k_dropout: int = 10
    noise_p: float = 0.0
    seed: int = 0
    depths: tuple[int, ...] = (1, 2, 3, 4)
    ground_truth: ReferenceIndex = field(default_factory=lambda: TOY_GROUND_TRUTH)

    @property
    def total_ranking_answers(self) -> int:
        return self.checkpoints * self.answers_per_checkpoint


@dataclass(frozen=True)
class CurvePoint:
    method: str
    seed: int
    checkpoint: int
    feedback: int  # answers consumed by this method so far
    footrule: float


METHODS = ("rank_uncertainty", "rank_random", "classic")


def _unique_random_models(count, n_features, depths, rng):
    """Random trees deduplicated by canonical form (rank keys must be unique)."""
    seen: dict[str, np.ndarray] = {}
    while len(seen) < count:
        batch = exprs.ramped_half_and_half(count, n_features, rng, depths=depths)
        for tree in batch:
            key = exprs.render(tree)
            if key not in seen:
                seen[key] = exprs.extract_features(tree).as_array()
            if len(seen) == count:
                break
    keys = list(seen.keys())
    return keys, np.stack([seen[k] for k in keys])


def _footrule_vs_truth(net, keys, F, truth_scores):
    return footrule_from_scores(keys, net.predict(F, None), truth_scores)


def _label_for(scores, i, j, noise_p, rng):
    label = -1 if scores[i] >= scores[j] else 1
    if noise_p > 0 and rng.random() < noise_p:
        label = -label
    return label


def run_toy_repetition(cfg: ToyConfig, rep: int) -> list[CurvePoint]:
    """One seed of the toy experiment: three methods on shared model sets."""
    ss = np.random.SeedSequence([cfg.seed, rep])
    rng_models, rng_unc, rng_rand, rng_classic = [
        np.random.default_rng(child) for child in ss.spawn(4)]

    pool_keys, pool_F = _unique_random_models(
        cfg.pool_size, cfg.n_features, cfg.depths, rng_models)
    test_keys, test_F = _unique_random_models(
        cfg.test_size, cfg.n_features, cfg.depths, rng_models)
    truth_pool = cfg.ground_truth.score(pool_F)
    truth_test = cfg.ground_truth.score(test_F)

    net_unc = FeedforwardNet(rng_unc)
    net_rand = FeedforwardNet(rng_rand)
    net_classic = FeedforwardNet(rng_classic, output="linear")

    warmup(net_unc, SIZE_INDEX, pool_F, rng_unc, k=cfg.k_dropout)
    warmup(net_rand, SIZE_INDEX, pool_F, rng_rand, k=cfg.k_dropout)
    warmup_regression(net_classic, SIZE_INDEX.score(pool_F) / exprs.MAX_NODES,
                      pool_F, rng_classic, k=cfg.k_dropout)

    points = []
    for method, net in (("rank_uncertainty", net_unc), ("rank_random", net_rand),
                        ("classic", net_classic)):
        points.append(CurvePoint(method, rep, 0, 0,
                                 _footrule_vs_truth(net, test_keys, test_F, truth_test)))

    apc = cfg.answers_per_checkpoint
    steps = cfg.answer_steps
    classic_labeled: set[int] = set()
    for checkpoint in range(1, cfg.checkpoints + 1):
        # uncertainty selection: pair off the currently most uncertain models
        _, sigma = net_unc.predict_with_uncertainty(pool_F, cfg.k_dropout, rng=rng_unc)
        order = sorted(range(len(pool_keys)), key=lambda i: (-sigma[i], pool_keys[i]))
        for p in range(apc):
            i, j = order[2 * p], order[2 * p + 1]
            label = _label_for(truth_pool, i, j, cfg.noise_p, rng_unc)
            for _ in range(steps):
                net_unc.pair_step(pool_F[i], pool_F[j], label, rng_unc)

        for _ in range(apc):
            i = int(rng_rand.integers(len(pool_keys)))
            j = int(rng_rand.integers(len(pool_keys) - 1))
            if j >= i:
                j += 1
            label = _label_for(truth_pool, i, j, cfg.noise_p, rng_rand)
            for _ in range(steps):
                net_rand.pair_step(pool_F[i], pool_F[j], label, rng_rand)

        # classic gets half the answers (a value label costs a full answer);
        # labels go to the most uncertain models not labeled yet
        classic_total = round(checkpoint * apc / 2)
        n_new = classic_total - len(classic_labeled)
        if n_new > 0:
            _, csigma = net_classic.predict_with_uncertainty(
                pool_F, cfg.k_dropout, rng=rng_classic)
            candidates = sorted(
                (i for i in range(len(pool_keys)) if i not in classic_labeled),
                key=lambda i: (-csigma[i], pool_keys[i]))
            for i in candidates[:n_new]:
                classic_labeled.add(i)
                for _ in range(steps):
                    net_classic.value_step(pool_F[i], truth_pool[i], rng_classic)

        for method, net, consumed in (
                ("rank_uncertainty", net_unc, checkpoint * apc),
                ("rank_random", net_rand, checkpoint * apc),
                ("classic", net_classic, classic_total)):
            points.append(CurvePoint(method, rep, checkpoint, consumed,
                                     _footrule_vs_truth(net, test_keys, test_F, truth_test)))
    return points


def run_toy_experiment(cfg: ToyConfig) -> list[CurvePoint]:
    points = []
    for rep in range(cfg.repetitions):
        points.extend(run_toy_repetition(cfg, rep))
    return points


def summarize_curves(points: Sequence[CurvePoint]) -> list[dict]:
    """Per (method, checkpoint): median/mean/IQR of the footrule across seeds."""
    grouped: dict[tuple[str, int], list[CurvePoint]] = {}
    for p in points:
        grouped.setdefault((p.method, p.checkpoint), []).append(p)
    out = []
    for (method, checkpoint), pts in sorted(grouped.items()):
        values = np.array([p.footrule for p in pts])
        q1, med, q3 = np.percentile(values, [25, 50, 75])
        out.append({
            "method": method,
            "checkpoint": checkpoint,
            "feedback": max(p.feedback for p in pts),
            "median": float(med),
            "mean": float(values.mean()),
            "iqr_low": float(q1),
            "iqr_high": float(q3),
            "n": len(values),
        })
    return out
