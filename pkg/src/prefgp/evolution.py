"""Bi-objective generational evolution over expression trees.

NSGA-II with two minimization objectives, training error (after per-model
linear scaling) and negated interpretability score. Behavioral duplicates are
demoted below every non-duplicate both in tournaments and in survivor
selection; variation applies subtree crossover, subtree mutation, or
one-point mutation with equal probability to size-2 tournament winners.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exprs
from .datasets import error_metric


@dataclass(eq=False)
class Individual:
    tree: exprs.Node
    expression: str
    features: exprs.Features
    mse_train: float
    scale_a: float
    scale_b: float
    pred_train: np.ndarray = field(repr=False)
    psi_hat: float = 0.0
    psi_sigma: float = 0.0
    is_duplicate: bool = False
    nsga_rank: int = 0
    crowding: float = 0.0
    generation_found: int = 0


@dataclass
class Population:
    individuals: list[Individual]
    generation: int = 0
    # every individual the scorer saw while this generation was formed
    # (parents + offspring); the survivors are a subset
    scored: list[Individual] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.individuals)


class Evaluator:
    """Binds a dataset split and caches evaluations by canonical expression
    (trees are immutable, so behavior is a function of the rendered form)."""

    def __init__(self, dataset):
        self.dataset = dataset
        self._cache: dict[str, tuple] = {}

    def individual(self, tree: exprs.Node, generation: int) -> Individual:
        expression = exprs.render(tree)
        hit = self._cache.get(expression)
        if hit is None:
            pred = exprs.evaluate(tree, self.dataset.X_train)
            a, b, mse = exprs.linear_scale(pred, self.dataset.y_train)
            hit = (pred, a, b, mse, exprs.extract_features(tree))
            self._cache[expression] = hit
        pred, a, b, mse, features = hit
        return Individual(tree=tree, expression=expression, features=features,
                          mse_train=mse, scale_a=a, scale_b=b, pred_train=pred,
                          generation_found=generation)

    def train_error(self, ind: Individual) -> float:
        scaled = ind.scale_a + ind.scale_b * ind.pred_train
        return error_metric(self.dataset.task, scaled, self.dataset.y_train)

    def test_error(self, ind: Individual) -> float:
        pred = exprs.evaluate(ind.tree, self.dataset.X_test)
        scaled = ind.scale_a + ind.scale_b * pred
        return error_metric(self.dataset.task, scaled, self.dataset.y_test)


# ---------------------------------------------------------------------------
# NSGA-II machinery

def objectives(individuals: Sequence[Individual]) -> np.ndarray:
    """(mse_train, -psi_hat), both minimized."""
    return np.array([[ind.mse_train, -ind.psi_hat] for ind in individuals])


def fast_nondominated_sort(objs: np.ndarray) -> np.ndarray:
    """Rank per point; rank 0 is the non-dominated set. p dominates q iff
    p <= q in both objectives and < in at least one."""
    objs = np.asarray(objs, dtype=float)
    m = len(objs)
    f0, f1 = objs[:, 0], objs[:, 1]
    le = (f0[:, None] <= f0[None, :]) & (f1[:, None] <= f1[None, :])
    lt = (f0[:, None] < f0[None, :]) | (f1[:, None] < f1[None, :])
    dominates = le & lt
    n_dominators = dominates.sum(axis=0)
    ranks = np.full(m, -1, dtype=int)
    rank = 0
    while (ranks < 0).any():
        current = (n_dominators == 0) & (ranks < 0)
        if not current.any():  # defensive; cannot happen with a strict partial order
            current = ranks < 0
        ranks[current] = rank
        n_dominators = n_dominators - dominates[current].sum(axis=0)
        rank += 1
    return ranks


def crowding_distance(objs: np.ndarray) -> np.ndarray:
    """Crowding distances within one front; boundary points get +inf and a
    zero-range objective contributes nothing."""
    objs = np.asarray(objs, dtype=float)
    m = len(objs)
    if m <= 2:
        return np.full(m, np.inf)
    dist = np.zeros(m)
    for col in range(objs.shape[1]):
        order = np.argsort(objs[:, col], kind="stable")
        values = objs[order, col]
        span = values[-1] - values[0]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            gaps = (values[2:] - values[:-2]) / span
            dist[order[1:-1]] += gaps
    return dist


def assign_ranks_and_crowding(individuals: Sequence[Individual]) -> None:
    """NSGA-II ranks with duplicate demotion: duplicates are re-ranked among
    themselves and shifted past the worst non-duplicate rank."""
    nondup = [i for i, ind in enumerate(individuals) if not ind.is_duplicate]
    dup = [i for i, ind in enumerate(individuals) if ind.is_duplicate]
    objs = objectives(individuals)
    max_rank = -1
    if nondup:
        ranks = fast_nondominated_sort(objs[nondup])
        max_rank = int(ranks.max())
        for idx, rank in zip(nondup, ranks):
            individuals[idx].nsga_rank = int(rank)
    if dup:
        ranks = fast_nondominated_sort(objs[dup])
        for idx, rank in zip(dup, ranks):
            individuals[idx].nsga_rank = max_rank + 1 + int(rank)

    by_rank: dict[int, list[int]] = {}
    for i, ind in enumerate(individuals):
        by_rank.setdefault(ind.nsga_rank, []).append(i)
    for members in by_rank.values():
        for idx, d in zip(members, crowding_distance(objs[members])):
            individuals[idx].crowding = float(d)


def preferred(a: Individual, b: Individual) -> Individual:
    """Selection order: non-duplicate beats duplicate, then lower rank,
    then higher crowding, then the first argument."""
    if a.is_duplicate != b.is_duplicate:
        return b if a.is_duplicate else a
    if a.nsga_rank != b.nsga_rank:
        return a if a.nsga_rank < b.nsga_rank else b
    if b.crowding > a.crowding:
        return b
    return a


def tournament_select(individuals: Sequence[Individual],
                      rng: np.random.Generator) -> Individual:
    """Size-2 tournament between two uniform draws."""
    a = individuals[int(rng.integers(len(individuals)))]
    b = individuals[int(rng.integers(len(individuals)))]
    return preferred(a, b)


def mark_semantic_duplicates(individuals: Sequence[Individual],
                             rng: np.random.Generator) -> None:
    """Flag behavioral duplicates from the cached training predictions."""
    preds = np.stack([ind.pred_train for ind in individuals])
    flags = exprs.duplicate_flags(preds, rng)
    for ind, flag in zip(individuals, flags):
        ind.is_duplicate = bool(flag)


def score_individuals(individuals: Sequence[Individual], scorer,
                      rng: np.random.Generator) -> None:
    F = exprs.features_matrix([ind.features for ind in individuals])
    psi, sigma = scorer.score(F, rng)
    for ind, p, s in zip(individuals, psi, sigma):
        ind.psi_hat = float(p)
        ind.psi_sigma = float(s)


def init_population(evaluator: Evaluator, size: int, scorer,
                    rng: np.random.Generator) -> Population:
    trees = exprs.ramped_half_and_half(size, evaluator.dataset.n_features, rng)
    individuals = [evaluator.individual(tree, 0) for tree in trees]
    score_individuals(individuals, scorer, rng)
    mark_semantic_duplicates(individuals, rng)
    assign_ranks_and_crowding(individuals)
    return Population(individuals, generation=0, scored=list(individuals))


def evolve_generation(pop: Population, evaluator: Evaluator, scorer,
                      rng: np.random.Generator) -> Population:
    """One (mu + lambda) generation. Parents and offspring are re-scored with
    the current scorer snapshot so objectives are comparable, duplicates are
    re-marked on the union, and NSGA-II truncation (with demotion) keeps the
    population size constant."""
    parents = pop.individuals
    generation = pop.generation + 1
    n = len(parents)
    n_features = evaluator.dataset.n_features

    offspring = []
    for _ in range(n):
        choice = int(rng.integers(3))
        parent = tournament_select(parents, rng)
        if choice == 0:
            donor = tournament_select(parents, rng)
            child = exprs.subtree_crossover(parent.tree, donor.tree, rng)
        elif choice == 1:
            child = exprs.subtree_mutation(parent.tree, n_features, rng)
        else:
            child = exprs.one_point_mutation(parent.tree, n_features, rng)
        offspring.append(evaluator.individual(child, generation))

    combined = list(parents) + offspring
    score_individuals(combined, scorer, rng)
    mark_semantic_duplicates(combined, rng)
    assign_ranks_and_crowding(combined)

    order = sorted(range(len(combined)),
                   key=lambda i: (combined[i].nsga_rank, -combined[i].crowding, i))
    survivors = [combined[i] for i in order[:n]]
    assign_ranks_and_crowding(survivors)
    return Population(survivors, generation, scored=combined)


# ---------------------------------------------------------------------------
# trade-off front

@dataclass(frozen=True)
class FrontEntry:
    expression: str
    mse_train: float
    err_train: float
    err_test: float
    psi_hat: float
    features: tuple[int, ...]
    generation: int


def extract_front(pop: Population, evaluator: Evaluator) -> list[FrontEntry]:
    """Rank-0 non-duplicates of the final population, deduplicated by
    expression, sorted by training error."""
    if not pop.individuals:
        raise ValueError("empty population")
    candidates = [ind for ind in pop.individuals if not ind.is_duplicate]
    ranks = fast_nondominated_sort(objectives(candidates))
    front = [ind for ind, rank in zip(candidates, ranks) if rank == 0]
    front.sort(key=lambda ind: (ind.mse_train, ind.expression))
    entries = []
    seen = set()
    for ind in front:
        if ind.expression in seen:
            continue
        seen.add(ind.expression)
        entries.append(FrontEntry(
            expression=ind.expression,
            mse_train=ind.mse_train,
            err_train=evaluator.train_error(ind),
            err_test=evaluator.test_error(ind),
            psi_hat=ind.psi_hat,
            features=ind.features.as_tuple(),
            generation=ind.generation_found,
        ))
    return entries


def write_front(entries: Sequence[FrontEntry], path) -> None:
    """Line-delimited record per entry; floats round-trip bit-exactly."""
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps({
                "expression": e.expression,
                "mse_train": e.mse_train,
                "err_train": e.err_train,
                "err_test": e.err_test,
                "psi_hat": e.psi_hat,
                "features": list(e.features),
                "generation": e.generation,
            }) + "\n")


def read_front(path) -> list[FrontEntry]:
    entries = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            entries.append(FrontEntry(
                expression=rec["expression"],
                mse_train=rec["mse_train"],
                err_train=rec["err_train"],
                err_test=rec["err_test"],
                psi_hat=rec["psi_hat"],
                features=tuple(rec["features"]),
                generation=rec["generation"],
            ))
    return entries
