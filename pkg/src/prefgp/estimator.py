"""Interpretability scorers.

The central piece is a small feedforward network (6 -> 100 -> 100 -> 100 -> 1,
ReLU hidden layers with 0.25 dropout) trained purely from pairwise order
labels: the loss for a labeled pair is ``l * (psi1 - psi2)`` with l = -1 when
the first model was deemed more interpretable. A tanh output head keeps scores
in (-1, 1); only relative values matter. Prediction uncertainty comes from
dropout left active at prediction time: the score is the mean of k stochastic
passes and the uncertainty their standard deviation.

Also here: the same architecture with a linear head trained as a plain
regressor (baseline for experiments), and the deterministic reference indices
used for warm-up and headless runs (model size, and a configurable linear
index over the six features).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

N_FEATURES = 6
HIDDEN = (100, 100, 100)
FEATURE_SCALE = 25.0  # node cap; maps every feature into [0, 1]


class ConfigError(ValueError):
    """Missing or inconsistent scorer configuration."""


def pair_loss(psi1: float, psi2: float, label: float) -> float:
    """Two-point ranking loss: negative when the preferred model scores higher."""
    return label * (psi1 - psi2)


@dataclass(frozen=True)
class LabeledPair:
    """One unit of preference feedback. label: -1 = first model preferred."""

    f1: tuple[int, ...]
    f2: tuple[int, ...]
    label: int
    source: str  # human | warmup | oracle


# ---------------------------------------------------------------------------
# deterministic reference indices

@dataclass(frozen=True)
class ReferenceIndex:
    """Fixed interpretability index: higher score = more interpretable.

    kind "size" scores -(node count). kind "phi" is a linear index
    ``bias + w . features`` over the raw six-feature vector; coefficients are
    configuration (bias first, then six weights).
    """

    kind: str
    coeffs: tuple[float, ...] | None = None

    def score(self, features: np.ndarray) -> np.ndarray:
        F = np.atleast_2d(np.asarray(features, dtype=float))
        if self.kind == "size":
            return -F[:, 0]
        if self.kind == "phi":
            if self.coeffs is None or len(self.coeffs) != N_FEATURES + 1:
                raise ConfigError("phi index needs a bias plus six weights")
            w = np.asarray(self.coeffs, dtype=float)
            return w[0] + F @ w[1:]
        raise ConfigError(f"unknown reference index {self.kind!r}")


SIZE_INDEX = ReferenceIndex("size")

# Stand-in linear index, NOT a published model: -(0.5*size + nonarith + chain
# + 0.25*consts + 0.25*dims) expressed on features scaled by the node cap.
DEFAULT_PHI = ReferenceIndex(
    "phi", coeffs=(0.0, -0.5 / 25, 0.0, -1.0 / 25, -1.0 / 25, -0.25 / 25, -0.25 / 25)
)


def make_reference(kind: str, phi_coeffs: Sequence[float] | None = None) -> ReferenceIndex:
    if kind == "size":
        return SIZE_INDEX
    if kind == "phi":
        return ReferenceIndex("phi", tuple(phi_coeffs)) if phi_coeffs else DEFAULT_PHI
    raise ConfigError(f"unknown reference index {kind!r}")


def reference_score(index: ReferenceIndex, features) -> float:
    return float(index.score(np.asarray(features, dtype=float))[0])


# ---------------------------------------------------------------------------
# network

def _forward(W, b, output: str, dropout: float, F, rng):
    """Shared forward pass. rng=None disables dropout (deterministic)."""
    a = np.atleast_2d(np.asarray(F, dtype=float)) / FEATURE_SCALE
    zs, acts, masks = [], [a], []
    for i in range(len(W) - 1):
        z = a @ W[i] + b[i]
        a = np.maximum(z, 0.0)
        if rng is not None and dropout > 0.0:
            # inverted dropout: deterministic passes need no rescaling
            mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a = a * mask
        else:
            mask = None
        zs.append(z)
        masks.append(mask)
        acts.append(a)
    z_out = a @ W[-1] + b[-1]
    y = np.tanh(z_out) if output == "tanh" else z_out
    return y[:, 0], (zs, acts, masks, y)


class FeedforwardNet:
    """MLP trained one pair (or one sample) at a time with SGD + momentum.

    output="tanh" gives the ranking network; output="linear" the classic
    regression baseline.
    """

    def __init__(self, rng: np.random.Generator, *, output: str = "tanh",
                 lr: float = 0.001, momentum: float = 0.9, dropout: float = 0.25,
                 hidden: Sequence[int] = HIDDEN, n_inputs: int = N_FEATURES):
        if output not in ("tanh", "linear"):
            raise ConfigError(f"unknown output head {output!r}")
        self.output = output
        self.lr = lr
        self.momentum = momentum
        self.dropout = dropout
        dims = (n_inputs, *hidden, 1)
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.W.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))
        self.vW = [np.zeros_like(w) for w in self.W]
        self.vb = [np.zeros_like(v) for v in self.b]
        self.version = 0

    # -- forward ------------------------------------------------------------

    def predict(self, features, rng: np.random.Generator | None = None) -> np.ndarray:
        """One forward pass; stochastic iff an rng is given."""
        return _forward(self.W, self.b, self.output, self.dropout, features, rng)[0]

    def predict_with_uncertainty(self, features, k: int = 10, *,
                                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if k < 2:
            raise ValueError("need k >= 2 stochastic passes")
        F = np.atleast_2d(np.asarray(features, dtype=float))
        samples = np.stack([self.predict(F, rng) for _ in range(k)])
        return samples.mean(axis=0), samples.std(axis=0)

    # -- gradients ----------------------------------------------------------

    def _backward(self, cache, dy: np.ndarray):
        zs, acts, masks, y = cache
        dz = dy * (1.0 - y[:, 0] ** 2) if self.output == "tanh" else dy
        da = dz[:, None]
        gW = [np.empty(0)] * len(self.W)
        gb = [np.empty(0)] * len(self.b)
        gW[-1] = acts[-1].T @ da
        gb[-1] = da.sum(axis=0)
        da = da @ self.W[-1].T
        for i in range(len(zs) - 1, -1, -1):
            if masks[i] is not None:
                da = da * masks[i]
            dzi = da * (zs[i] > 0.0)
            gW[i] = acts[i].T @ dzi
            gb[i] = dzi.sum(axis=0)
            da = dzi @ self.W[i].T
        return gW, gb

    def pair_gradients(self, f1, f2, label: float,
                       rng: np.random.Generator | None = None):
        """Loss and parameter gradients for one labeled pair."""
        F = np.vstack([np.asarray(f1, float), np.asarray(f2, float)])
        y, cache = _forward(self.W, self.b, self.output, self.dropout, F, rng)
        loss = pair_loss(y[0], y[1], label)
        grads = self._backward(cache, np.array([label, -label], dtype=float))
        return loss, grads

    def value_gradients(self, f, target: float,
                        rng: np.random.Generator | None = None):
        """Squared-error loss and gradients for one regression sample."""
        y, cache = _forward(self.W, self.b, self.output, self.dropout,
                            np.atleast_2d(np.asarray(f, float)), rng)
        err = y[0] - target
        grads = self._backward(cache, np.array([2.0 * err]))
        return err * err, grads

    # -- updates ------------------------------------------------------------

    def _step(self, grads) -> None:
        gW, gb = grads
        for i in range(len(self.W)):
            self.vW[i] = self.momentum * self.vW[i] - self.lr * gW[i]
            self.W[i] += self.vW[i]
            self.vb[i] = self.momentum * self.vb[i] - self.lr * gb[i]
            self.b[i] += self.vb[i]
        self.version += 1

    def pair_step(self, f1, f2, label: float,
                  rng: np.random.Generator | None = None) -> float:
        loss, grads = self.pair_gradients(f1, f2, label, rng)
        self._step(grads)
        return loss

    def value_step(self, f, target: float,
                   rng: np.random.Generator | None = None) -> float:
        loss, grads = self.value_gradients(f, target, rng)
        self._step(grads)
        return loss

    def snapshot(self) -> "EstimatorSnapshot":
        return EstimatorSnapshot(self.W, self.b, self.output, self.dropout, self.version)


class EstimatorSnapshot:
    """Immutable copy of network weights, safe to read from any thread."""

    __slots__ = ("W", "b", "output", "dropout", "version")

    def __init__(self, W, b, output: str, dropout: float, version: int):
        self.W = tuple(np.array(w, dtype=float) for w in W)
        self.b = tuple(np.array(v, dtype=float) for v in b)
        for arr in self.W + self.b:
            arr.setflags(write=False)
        self.output = output
        self.dropout = dropout
        self.version = version

    def predict_deterministic(self, features) -> np.ndarray:
        return _forward(self.W, self.b, self.output, self.dropout, features, None)[0]

    def predict_with_uncertainty(self, features, k: int = 10, *,
                                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if k < 2:
            raise ValueError("need k >= 2 stochastic passes")
        F = np.atleast_2d(np.asarray(features, dtype=float))
        samples = np.stack([
            _forward(self.W, self.b, self.output, self.dropout, F, rng)[0]
            for _ in range(k)
        ])
        return samples.mean(axis=0), samples.std(axis=0)


def save_snapshot(snap: EstimatorSnapshot, path) -> None:
    meta = json.dumps({
        "output": snap.output,
        "dropout": snap.dropout,
        "version": snap.version,
        "n_layers": len(snap.W),
    })
    arrays = {f"W{i}": w for i, w in enumerate(snap.W)}
    arrays |= {f"b{i}": v for i, v in enumerate(snap.b)}
    np.savez(path, meta=np.array(meta), **arrays)


def load_snapshot(path) -> EstimatorSnapshot:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        W = [data[f"W{i}"] for i in range(meta["n_layers"])]
        b = [data[f"b{i}"] for i in range(meta["n_layers"])]
    return EstimatorSnapshot(W, b, meta["output"], meta["dropout"], meta["version"])


# ---------------------------------------------------------------------------
# warm-up

WARMUP_EPOCH_CAP = 20


def _sample_pair_indices(m: int, rng: np.random.Generator) -> tuple[int, int]:
    i = int(rng.integers(m))
    j = int(rng.integers(m - 1))
    if j >= i:
        j += 1
    return i, j


def _sigma_decreasing(history: list[float]) -> bool:
    # stop once the mean uncertainty of the last two epochs drops below
    # the mean of the previous two
    if len(history) < 4:
        return False
    return (history[-1] + history[-2]) / 2.0 < (history[-3] + history[-4]) / 2.0


def warmup(net: FeedforwardNet, reference: ReferenceIndex, features,
           rng: np.random.Generator, *, epoch_cap: int = WARMUP_EPOCH_CAP,
           k: int = 10) -> tuple[int, list[LabeledPair]]:
    """Pre-train the ranking net on pairs labeled by a reference index.

    One epoch is one pass over len(features) random pairs. Halts when the
    mean prediction uncertainty over the model set starts to decrease
    (uncertainty normally rises first while the small initial weights grow).
    Returns the epochs run and the generated pairs.
    """
    F = np.atleast_2d(np.asarray(features, dtype=float))
    scores = reference.score(F)
    m = len(F)
    sigma_history: list[float] = []
    pairs: list[LabeledPair] = []
    epoch = 0
    for epoch in range(1, epoch_cap + 1):
        for _ in range(m):
            i, j = _sample_pair_indices(m, rng)
            label = -1 if scores[i] >= scores[j] else 1
            net.pair_step(F[i], F[j], label, rng)
            pairs.append(LabeledPair(tuple(int(v) for v in F[i]),
                                     tuple(int(v) for v in F[j]), label, "warmup"))
        sigma_history.append(float(net.predict_with_uncertainty(F, k, rng=rng)[1].mean()))
        if _sigma_decreasing(sigma_history):
            break
    return epoch, pairs


def warmup_regression(net: FeedforwardNet, targets, features,
                      rng: np.random.Generator, *, epoch_cap: int = WARMUP_EPOCH_CAP,
                      k: int = 10) -> int:
    """Same halting heuristic for the classic baseline, with value targets."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    t = np.asarray(targets, dtype=float)
    sigma_history: list[float] = []
    epoch = 0
    for epoch in range(1, epoch_cap + 1):
        for i in rng.permutation(len(F)):
            net.value_step(F[i], t[i], rng)
        sigma_history.append(float(net.predict_with_uncertainty(F, k, rng=rng)[1].mean()))
        if _sigma_decreasing(sigma_history):
            break
    return epoch


def classic_train(net: FeedforwardNet, features, targets, epochs: int,
                  rng: np.random.Generator) -> None:
    """Plain per-sample SGD regression training for the baseline."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    t = np.asarray(targets, dtype=float)
    for _ in range(epochs):
        for i in rng.permutation(len(F)):
            net.value_step(F[i], t[i], rng)


def classic_predict(net: FeedforwardNet, features) -> np.ndarray:
    return net.predict(features, None)


# ---------------------------------------------------------------------------
# scorer adapters for the evolution loop

class ReferenceScorer:
    """Deterministic scorer (phi or size): zero uncertainty."""

    def __init__(self, index: ReferenceIndex):
        self.index = index

    def score(self, features, rng=None) -> tuple[np.ndarray, np.ndarray]:
        s = self.index.score(features)
        return s, np.zeros_like(s)


class SnapshotScorer:
    """Scores through an immutable snapshot; swap in new weights between
    generations via replace()."""

    def __init__(self, snapshot: EstimatorSnapshot, k: int = 10):
        self.snapshot = snapshot
        self.k = k

    def replace(self, snapshot: EstimatorSnapshot) -> None:
        self.snapshot = snapshot

    def score(self, features, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        return self.snapshot.predict_with_uncertainty(features, self.k, rng=rng)
