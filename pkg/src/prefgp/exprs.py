"""Symbolic expression trees: the models that get evolved.

A tree is built from three immutable node kinds: binary operators
``+ - * / max``, unary operators ``^3`` (cube) and ``log``, variables
``x<i>``, and constants on a fixed grid. Division and logarithm are
protected so that evaluation is total, and every node-level result is
clamped so nested cubes and products cannot overflow to inf/NaN.

Trees never exceed ``MAX_NODES`` nodes; the variation operators reject
oversize offspring by returning the first parent unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

MAX_NODES = 25
CONST_GRID = np.round(np.arange(-20, 21) * 0.25, 2)  # -5.00 .. 5.00 step 0.25

BINARY = ("add", "sub", "mul", "div", "max")
UNARY = ("cube", "log")
OPERATORS = BINARY + UNARY
NON_ARITHMETIC = frozenset({"cube", "log", "max"})
ARITY = {kind: 2 for kind in BINARY} | {kind: 1 for kind in UNARY}

_DIV_EPS = 1e-6
_CLAMP = 1e100  # per-node output bound; keeps any 25-node composition finite
_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


class ExpressionError(ValueError):
    """Structurally invalid tree (bad arity, variable index, constant)."""


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Op:
    kind: str
    args: tuple


Node = Op | Var | Const


def iter_nodes(tree: Node) -> Iterator[Node]:
    """Preorder traversal."""
    stack = [tree]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Op):
            stack.extend(reversed(node.args))


def node_count(tree: Node) -> int:
    return sum(1 for _ in iter_nodes(tree))


def tree_depth(tree: Node) -> int:
    """Longest root-to-leaf path, counted in edges."""
    if not isinstance(tree, Op):
        return 0
    return 1 + max(tree_depth(arg) for arg in tree.args)


def validate(tree: Node, n_features: int) -> None:
    for node in iter_nodes(tree):
        if isinstance(node, Op):
            if node.kind not in ARITY:
                raise ExpressionError(f"unknown operator {node.kind!r}")
            if len(node.args) != ARITY[node.kind]:
                raise ExpressionError(f"{node.kind} expects {ARITY[node.kind]} args")
        elif isinstance(node, Var):
            if not 0 <= node.index < n_features:
                raise ExpressionError(
                    f"variable x{node.index} out of range for {n_features} features"
                )
        elif isinstance(node, Const):
            if not np.isclose(CONST_GRID, node.value, atol=1e-9).any():
                raise ExpressionError(f"constant {node.value} off the 0.25 grid")
    if node_count(tree) > MAX_NODES:
        raise ExpressionError("tree exceeds the node cap")


def render(tree: Node) -> str:
    """Canonical fully-parenthesized infix form, e.g. ``(max(2.50, x1) + x2)``.

    This string is the identity used for deduplication, logging, and the UI.
    """
    if isinstance(tree, Var):
        return f"x{tree.index}"
    if isinstance(tree, Const):
        return f"{tree.value:.2f}"
    kind = tree.kind
    if kind in _INFIX:
        left, right = tree.args
        return f"({render(left)} {_INFIX[kind]} {render(right)})"
    if kind == "max":
        left, right = tree.args
        return f"max({render(left)}, {render(right)})"
    if kind == "log":
        return f"log({render(tree.args[0])})"
    return f"({render(tree.args[0])})^3"


def evaluate(tree: Node, X: np.ndarray) -> np.ndarray:
    """Evaluate on an (n, d) matrix, one output per row. Always finite."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]

    def rec(node: Node) -> np.ndarray:
        if isinstance(node, Var):
            if node.index >= X.shape[1]:
                raise ExpressionError(
                    f"variable x{node.index} out of range for {X.shape[1]} features"
                )
            return X[:, node.index]
        if isinstance(node, Const):
            return np.full(n, node.value)
        a = rec(node.args[0])
        kind = node.kind
        if kind == "add":
            out = a + rec(node.args[1])
        elif kind == "sub":
            out = a - rec(node.args[1])
        elif kind == "mul":
            out = a * rec(node.args[1])
        elif kind == "div":
            b = rec(node.args[1])
            # protected: a * sign(b) / max(|b|, eps), with sign(0) = +1
            out = a * np.where(b >= 0.0, 1.0, -1.0) / np.maximum(np.abs(b), _DIV_EPS)
        elif kind == "max":
            out = np.maximum(a, rec(node.args[1]))
        elif kind == "cube":
            out = a * a * a
        else:  # log, protected: ln|x| with log(0) = 0
            mag = np.abs(a)
            out = np.zeros_like(mag)
            np.log(mag, out=out, where=mag > 0.0)
        return np.clip(out, -_CLAMP, _CLAMP)

    return rec(tree)


# ---------------------------------------------------------------------------
# interpretability features

FEATURE_NAMES = ("size", "n_ops", "n_nonarith", "max_chain", "n_consts", "n_dims")


@dataclass(frozen=True)
class Features:
    """The six structural descriptors the interpretability scorers consume."""

    size: int
    n_ops: int
    n_nonarith: int
    max_chain: int
    n_consts: int
    n_dims: int

    def as_tuple(self) -> tuple[int, ...]:
        return (self.size, self.n_ops, self.n_nonarith,
                self.max_chain, self.n_consts, self.n_dims)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)


def extract_features(tree: Node) -> Features:
    size = n_ops = n_nonarith = max_chain = n_consts = 0
    dims: set[int] = set()
    # second element: length of the consecutive non-arithmetic run ending at the parent
    stack: list[tuple[Node, int]] = [(tree, 0)]
    while stack:
        node, run = stack.pop()
        size += 1
        if isinstance(node, Var):
            dims.add(node.index)
        elif isinstance(node, Const):
            n_consts += 1
        else:
            n_ops += 1
            if node.kind in NON_ARITHMETIC:
                n_nonarith += 1
                run += 1
                max_chain = max(max_chain, run)
            else:
                run = 0
            stack.extend((arg, run) for arg in node.args)
    return Features(size, n_ops, n_nonarith, max_chain, n_consts, len(dims))


def features_matrix(feature_list: Sequence[Features]) -> np.ndarray:
    return np.array([f.as_tuple() for f in feature_list], dtype=float)


# ---------------------------------------------------------------------------
# random generation

def random_terminal(n_features: int, rng: np.random.Generator) -> Node:
    if rng.random() < 0.5:
        return Var(int(rng.integers(n_features)))
    return Const(float(CONST_GRID[rng.integers(len(CONST_GRID))]))


def random_tree(max_depth: int, n_features: int, rng: np.random.Generator,
                *, method: str = "grow", root_terminal_ok: bool = False) -> Node:
    """Grow or full tree of at most ``max_depth`` edges.

    The root is an operator unless ``root_terminal_ok`` (used for mutation
    donors); grow may terminate early at any non-root position.
    """

    def build(depth: int, at_root: bool) -> Node:
        if depth == 0:
            return random_terminal(n_features, rng)
        if method == "grow" and (root_terminal_ok or not at_root) and rng.random() < 0.5:
            return random_terminal(n_features, rng)
        kind = OPERATORS[rng.integers(len(OPERATORS))]
        return Op(kind, tuple(build(depth - 1, False) for _ in range(ARITY[kind])))

    return build(max_depth, True)


def ramped_half_and_half(count: int, n_features: int, rng: np.random.Generator,
                         depths: Sequence[int] = (1, 2, 3)) -> list[Node]:
    """Alternate grow/full while cycling through the depth schedule."""
    trees = []
    for i in range(count):
        depth = depths[(i // 2) % len(depths)]
        method = "grow" if i % 2 == 0 else "full"
        trees.append(random_tree(depth, n_features, rng, method=method))
    return trees


# ---------------------------------------------------------------------------
# variation

def _subtree_at(tree: Node, index: int) -> Node:
    for i, node in enumerate(_preorder(tree)):
        if i == index:
            return node
    raise IndexError(index)


def _preorder(tree: Node) -> Iterator[Node]:
    yield tree
    if isinstance(tree, Op):
        for arg in tree.args:
            yield from _preorder(arg)


def _replace_at(tree: Node, index: int, replacement: Node) -> Node:
    counter = [-1]

    def rec(node: Node) -> Node:
        counter[0] += 1
        if counter[0] == index:
            return replacement
        if isinstance(node, Op) and counter[0] < index:
            return Op(node.kind, tuple(rec(arg) for arg in node.args))
        return node

    return rec(tree)


def subtree_crossover(a: Node, b: Node, rng: np.random.Generator) -> Node:
    """Splice a random subtree of ``b`` into a random position of ``a``.

    Oversize offspring are rejected: the first parent is returned unchanged.
    """
    i = int(rng.integers(node_count(a)))
    j = int(rng.integers(node_count(b)))
    child = _replace_at(a, i, _subtree_at(b, j))
    return child if node_count(child) <= MAX_NODES else a


def subtree_mutation(a: Node, n_features: int, rng: np.random.Generator) -> Node:
    donor = random_tree(int(rng.integers(1, 4)), n_features, rng,
                        method="grow", root_terminal_ok=True)
    i = int(rng.integers(node_count(a)))
    child = _replace_at(a, i, donor)
    return child if node_count(child) <= MAX_NODES else a


def one_point_mutation(a: Node, n_features: int, rng: np.random.Generator) -> Node:
    """Replace one node with an arity-compatible primitive (node count fixed)."""
    i = int(rng.integers(node_count(a)))
    target = _subtree_at(a, i)
    if isinstance(target, Op):
        pool = [k for k in OPERATORS if ARITY[k] == ARITY[target.kind] and k != target.kind]
        replacement: Node = Op(pool[int(rng.integers(len(pool)))], target.args)
    else:
        replacement = random_terminal(n_features, rng)
    return _replace_at(a, i, replacement)


# ---------------------------------------------------------------------------
# fitting helpers

def linear_scale(pred: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares intercept/slope of ``a + b*pred ~ y`` and the scaled MSE.

    Degenerate predictions (variance below 1e-12) fall back to the mean
    predictor (b = 0).
    """
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    var = float(pred.var())
    if var < 1e-12:
        b = 0.0
        a = float(y.mean())
    else:
        pm = pred.mean()
        ym = y.mean()
        b = float(((pred - pm) * (y - ym)).mean() / var)
        a = float(ym - b * pm)
    mse = float(np.mean((a + b * pred - y) ** 2))
    return a, b, mse


def duplicate_flags(preds: np.ndarray, rng: np.random.Generator,
                    tol: float = 1e-12) -> np.ndarray:
    """Flag rows whose prediction vector matches an earlier row elementwise.

    Rows are visited in a random order; the first representative of each
    behavior stays unflagged. Matching is exact-bytes first, then within
    ``tol`` against the representatives found so far.
    """
    P = np.asarray(preds, dtype=float)
    m = P.shape[0]
    flags = np.zeros(m, dtype=bool)
    seen: set[bytes] = set()
    reps = np.empty_like(P)
    n_reps = 0
    for i in rng.permutation(m):
        row = P[i]
        key = row.tobytes()
        if key in seen:
            flags[i] = True
            continue
        seen.add(key)
        if n_reps and (np.abs(reps[:n_reps] - row).max(axis=1) <= tol).any():
            flags[i] = True
            continue
        reps[n_reps] = row
        n_reps += 1
    return flags
