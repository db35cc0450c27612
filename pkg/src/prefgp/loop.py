"""The live run: evolution, estimator training, and feedback intake.

Three activities share state only through (a) immutable estimator snapshots,
(b) an append-only buffer of labeled pairs, and (c) an uncertainty tracker
guarded by a lock. Evolution never blocks on feedback: a run completes its
configured number of generations whether answers arrive or not. In oracle
mode everything runs on one thread in a fixed order, so a seeded session is
reproducible bit for bit.

Every state change is appended to an event log from which the session state
(progress, telemetry, buffered pairs) can be reconstructed.
"""

from __future__ import annotations

import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import exprs
from .datasets import Dataset
from .estimator import (
    DEFAULT_PHI,
    SIZE_INDEX,
    EstimatorSnapshot,
    FeedforwardNet,
    LabeledPair,
    ReferenceIndex,
    ReferenceScorer,
    SnapshotScorer,
    warmup,
)
from .evolution import (
    Evaluator,
    FrontEntry,
    Population,
    evolve_generation,
    extract_front,
    init_population,
)

ESTIMATOR_MODES = ("learned", "phi", "size")


class RunError(RuntimeError):
    """A live run could not start or aborted."""


class UnknownQueryError(KeyError):
    """Feedback for a query id this run never issued."""


class DuplicateFeedbackError(ValueError):
    """A query id that was already answered."""


class NoQueryAvailable(Exception):
    """Fewer than two tracked models; the caller should retry later."""


@dataclass
class RunConfig:
    task: str = "regression"
    estimator: str = "learned"
    pop_size: int = 256
    generations: int = 50
    seed: int = 0
    k_dropout: int = 10
    warmup_models: int = 100
    tracker_capacity: int = 64
    oracle_queries_per_generation: int = 4
    feedback_steps: int = 20  # SGD steps applied per answered pair
    phi_coeffs: tuple[float, ...] | None = None

    def reference(self) -> ReferenceIndex:
        if self.phi_coeffs is not None:
            return ReferenceIndex("phi", tuple(self.phi_coeffs))
        return DEFAULT_PHI

    def validate(self) -> None:
        if self.estimator not in ESTIMATOR_MODES:
            raise RunError(f"unknown estimator mode {self.estimator!r}")
        if self.pop_size < 2 or self.generations < 1:
            raise RunError("population size and generations must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class QuerySide:
    expression: str
    features: tuple[int, ...]


@dataclass(frozen=True)
class Query:
    id: int
    left: QuerySide
    right: QuerySide
    issued_at: int  # generation number


class UncertaintyTracker:
    """Bounded set of the most uncertainty-inducing models seen so far,
    deduplicated by canonical expression (the higher sigma wins)."""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._entries: dict[str, tuple[tuple[int, ...], float]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def observe(self, expression: str, features: tuple[int, ...], sigma: float) -> None:
        sigma = float(sigma)
        current = self._entries.get(expression)
        if current is not None:
            if sigma > current[1]:
                self._entries[expression] = (features, sigma)
            return
        if len(self._entries) < self.capacity:
            self._entries[expression] = (features, sigma)
            return
        min_key = min(self._entries, key=lambda k: (self._entries[k][1], k))
        if sigma > self._entries[min_key][1]:
            del self._entries[min_key]
            self._entries[expression] = (features, sigma)

    def pop_top_pair(self) -> tuple[QuerySide, QuerySide] | None:
        if len(self._entries) < 2:
            return None
        ordered = sorted(self._entries, key=lambda k: (-self._entries[k][1], k))
        sides = []
        for key in ordered[:2]:
            features, _ = self._entries.pop(key)
            sides.append(QuerySide(key, features))
        return sides[0], sides[1]


@dataclass
class GenerationStats:
    generation: int
    feedback: int
    mispredictions: int
    mean_sigma: float
    cumulative_feedback: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunTelemetry:
    rows: list[GenerationStats] = field(default_factory=list)

    def normalized_sigma(self) -> list[float]:
        """Mean sigma per generation divided by the first generation's."""
        if not self.rows:
            return []
        base = self.rows[0].mean_sigma
        if base <= 0:
            return [0.0 for _ in self.rows]
        return [row.mean_sigma / base for row in self.rows]

    def cumulative_feedback(self) -> int:
        return self.rows[-1].cumulative_feedback if self.rows else 0


@dataclass
class RunResult:
    front: list[FrontEntry]
    telemetry: RunTelemetry
    snapshot: EstimatorSnapshot | None
    events: list[dict]
    config: RunConfig
    population: Population


class ActiveRun:
    """One live session. Thread-safety contract: the evolution loop runs on
    a single worker (run_headless, possibly in a thread); next_query and
    submit_feedback may be called concurrently from other threads."""

    def __init__(self, dataset: Dataset, config: RunConfig):
        config.validate()
        if config.task != dataset.task:
            raise RunError(f"config task {config.task!r} != dataset task {dataset.task!r}")
        self.dataset = dataset
        self.config = config
        self.evaluator = Evaluator(dataset)

        seq = np.random.SeedSequence(config.seed)
        evo, warm, train, user = seq.spawn(4)
        self._rng_evo = np.random.default_rng(evo)
        self._rng_warm = np.random.default_rng(warm)
        self._rng_train = np.random.default_rng(train)
        self._rng_user = np.random.default_rng(user)

        self.state = "warming_up"
        self.generation = 0
        self.tracker = UncertaintyTracker(config.tracker_capacity)
        self.buffer: list[LabeledPair] = []
        self.telemetry = RunTelemetry()
        self.events: list[dict] = []
        self.population: Population | None = None
        self.front: list[FrontEntry] | None = None

        self._lock = threading.Lock()
        self._issued: dict[int, Query] = {}
        self._answered: set[int] = set()
        self._next_query_id = 0
        self._pending_feedback = 0
        self._pending_mispredictions = 0

        self.net: FeedforwardNet | None = None
        self.snapshot: EstimatorSnapshot | None = None
        if config.estimator == "learned":
            self.net = FeedforwardNet(self._rng_warm)
            self.snapshot = self.net.snapshot()
            self.scorer = SnapshotScorer(self.snapshot, k=config.k_dropout)
        elif config.estimator == "phi":
            self.scorer = ReferenceScorer(config.reference())
        else:
            self.scorer = ReferenceScorer(SIZE_INDEX)

        self._log("created", config=config.to_dict())

    @property
    def progress(self) -> float:
        return self.generation / self.config.generations

    # -- internals -----------------------------------------------------------

    def _log(self, event: str, **payload) -> None:
        self.events.append({"t": time.time(), "event": event, **payload})

    def _publish_snapshot(self) -> None:
        self.snapshot = self.net.snapshot()
        self.scorer.replace(self.snapshot)

    def _warm_up(self) -> None:
        if self.net is not None:
            trees = exprs.ramped_half_and_half(
                self.config.warmup_models, self.dataset.n_features, self._rng_warm)
            F = exprs.features_matrix([exprs.extract_features(t) for t in trees])
            epochs, pairs = warmup(self.net, self.config.reference(), F,
                                   self._rng_warm, k=self.config.k_dropout)
            self.buffer.extend(pairs)
            self._publish_snapshot()
            self._log("warmup", epochs=epochs,
                      pairs=[[list(p.f1), list(p.f2), p.label, p.source] for p in pairs],
                      snapshot_version=self.snapshot.version)
        self.state = "evolving"

    def _observe_population(self) -> None:
        if self.config.estimator != "learned":
            return
        with self._lock:
            for ind in self.population.scored:
                self.tracker.observe(ind.expression, ind.features.as_tuple(),
                                     ind.psi_sigma)

    def _emit_generation_row(self) -> None:
        with self._lock:
            feedback = self._pending_feedback
            mispred = self._pending_mispredictions
            self._pending_feedback = 0
            self._pending_mispredictions = 0
        sigma = float(np.mean([ind.psi_sigma for ind in self.population.scored]))
        cumulative = (self.telemetry.rows[-1].cumulative_feedback
                      if self.telemetry.rows else 0) + feedback
        row = GenerationStats(self.generation, feedback, mispred, sigma, cumulative)
        self.telemetry.rows.append(row)
        self._log("generation", **row.to_dict())

    def _train_round(self) -> None:
        """One training round per feedback, serialized by the caller's lock.

        The answered pair gets a fixed budget of SGD steps, enough to push
        the two scores decisively apart. Driving the queried (most
        uncertain) pairs into saturation is what makes the estimator's
        uncertainty fall and stay low as the run progresses; replaying the
        whole buffer instead destabilizes scores elsewhere and lets the
        uncertainty climb back up.
        """
        pair = self.buffer[-1]
        f1 = np.asarray(pair.f1, dtype=float)
        f2 = np.asarray(pair.f2, dtype=float)
        for _ in range(self.config.feedback_steps):
            self.net.pair_step(f1, f2, pair.label, self._rng_train)
        self._publish_snapshot()

    # -- public surface --------------------------------------------------------

    def next_query(self) -> Query:
        """Pop the two most uncertainty-inducing tracked models as a query."""
        with self._lock:
            pair = self.tracker.pop_top_pair()
            if pair is None:
                raise NoQueryAvailable()
            query = Query(self._next_query_id, pair[0], pair[1], self.generation)
            self._next_query_id += 1
            self._issued[query.id] = query
            self._log("query", id=query.id,
                      left=[query.left.expression, list(query.left.features)],
                      right=[query.right.expression, list(query.right.features)],
                      issued_at=query.issued_at)
            return query

    def submit_feedback(self, query_id: int, choice: str, source: str = "human") -> dict:
        """Record an answer, count mispredictions against the pre-answer
        snapshot, and run one training round."""
        if choice not in ("left", "right"):
            raise ValueError(f"choice must be left or right, got {choice!r}")
        with self._lock:
            if query_id not in self._issued:
                raise UnknownQueryError(query_id)
            if query_id in self._answered:
                raise DuplicateFeedbackError(query_id)
            self._answered.add(query_id)
            query = self._issued[query_id]

            psi = self.snapshot.predict_deterministic(
                np.array([query.left.features, query.right.features], dtype=float))
            psi_left, psi_right = float(psi[0]), float(psi[1])
            mispredicted = ((choice == "left" and psi_left < psi_right)
                            or (choice == "right" and psi_right < psi_left))

            label = -1 if choice == "left" else 1
            self.buffer.append(LabeledPair(query.left.features, query.right.features,
                                           label, source))
            self._pending_feedback += 1
            self._pending_mispredictions += int(mispredicted)
            self._train_round()
            self._log("feedback", query_id=query_id, choice=choice, label=label,
                      source=source, mispredicted=mispredicted, psi_left=psi_left,
                      psi_right=psi_right, snapshot_version=self.snapshot.version)
            return {"query_id": query_id, "mispredicted": mispredicted,
                    "snapshot_version": self.snapshot.version}

    def run_headless(self, user=None) -> RunResult:
        """Execute the whole session. With an oracle user, every issued query
        is answered immediately (single-threaded, reproducible); without one,
        evolution simply never waits."""
        from .simulate import oracle_answer  # local: simulate imports estimator only

        try:
            self._warm_up()
            self.population = init_population(
                self.evaluator, self.config.pop_size, self.scorer, self._rng_evo)
            self._observe_population()
            self._emit_generation_row()
            for _ in range(self.config.generations):
                self.population = evolve_generation(
                    self.population, self.evaluator, self.scorer, self._rng_evo)
                self.generation = self.population.generation
                self._observe_population()
                if user is not None and self.config.estimator == "learned":
                    for _ in range(self.config.oracle_queries_per_generation):
                        try:
                            query = self.next_query()
                        except NoQueryAvailable:
                            break
                        choice = oracle_answer(user, query, self._rng_user)
                        self.submit_feedback(query.id, choice, source="oracle")
                self._emit_generation_row()
        except (UnknownQueryError, DuplicateFeedbackError):
            raise
        except Exception as exc:
            self.state = "failed"
            self._log("failed", error=str(exc))
            raise RunError(f"run aborted: {exc}") from exc

        self.front = extract_front(self.population, self.evaluator)
        self.state = "finished"
        self._log("finished", front_size=len(self.front),
                  generations=self.generation)
        return RunResult(self.front, self.telemetry, self.snapshot, self.events,
                         self.config, self.population)


def run_session(dataset: Dataset, config: RunConfig, user=None) -> RunResult:
    """Convenience wrapper: build a run and execute it to completion."""
    return ActiveRun(dataset, config).run_headless(user)


# ---------------------------------------------------------------------------
# event-log replay

@dataclass
class ReplayState:
    state: str
    generation: int
    telemetry: RunTelemetry
    pairs: list[LabeledPair]
    cumulative_feedback: int
    snapshot_version: int | None


def replay_events(events: Sequence[dict]) -> ReplayState:
    """Reconstruct session state from the append-only event log alone."""
    state = "warming_up"
    generation = 0
    telemetry = RunTelemetry()
    pairs: list[LabeledPair] = []
    queries: dict[int, tuple[tuple[int, ...], tuple[int, ...]]] = {}
    snapshot_version = None
    for ev in events:
        kind = ev["event"]
        if kind == "created":
            state = "warming_up"
        elif kind == "warmup":
            for f1, f2, label, source in ev["pairs"]:
                pairs.append(LabeledPair(tuple(f1), tuple(f2), label, source))
            snapshot_version = ev["snapshot_version"]
            state = "evolving"
        elif kind == "generation":
            state = "evolving"
            generation = ev["generation"]
            telemetry.rows.append(GenerationStats(
                ev["generation"], ev["feedback"], ev["mispredictions"],
                ev["mean_sigma"], ev["cumulative_feedback"]))
        elif kind == "query":
            queries[ev["id"]] = (tuple(ev["left"][1]), tuple(ev["right"][1]))
        elif kind == "feedback":
            f1, f2 = queries[ev["query_id"]]
            pairs.append(LabeledPair(f1, f2, ev["label"], ev["source"]))
            snapshot_version = ev["snapshot_version"]
        elif kind == "finished":
            state = "finished"
        elif kind == "survey_built":
            state = "surveying"
        elif kind == "closed":
            state = "closed"
        elif kind == "failed":
            state = "failed"
    return ReplayState(state, generation, telemetry, pairs,
                       telemetry.cumulative_feedback(), snapshot_version)
