import os

import numpy as np
import pytest

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "data")


def write_linear_csv(path, seed=0, n=60, d=3, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = X[:, 0] + noise * rng.normal(size=n)
    with open(path, "w") as fh:
        for row, target in zip(X, y):
            fh.write(",".join(f"{v:.6f}" for v in row) + f",{target:.6f}\n")
    return str(path)


@pytest.fixture(scope="session")
def tiny_csv(tmp_path_factory):
    return write_linear_csv(tmp_path_factory.mktemp("data") / "tiny.csv")


@pytest.fixture(scope="session")
def nonlinear_csv(tmp_path_factory):
    """Target with no exact small-tree solution, so fronts keep several
    accuracy/interpretability trade-offs."""
    rng = np.random.default_rng(7)
    X = rng.normal(size=(80, 3))
    y = X[:, 0] * X[:, 1] + 0.5 * np.maximum(X[:, 2], 0.0) + 0.05 * rng.normal(size=80)
    path = tmp_path_factory.mktemp("data") / "nonlinear.csv"
    with open(path, "w") as fh:
        for row, target in zip(X, y):
            fh.write(",".join(f"{v:.6f}" for v in row) + f",{target:.6f}\n")
    return str(path)


@pytest.fixture(scope="session")
def boston_csv():
    path = os.path.join(DATA_DIR, "boston.csv")
    if not os.path.exists(path):
        pytest.skip("data/boston.csv not present")
    return path


@pytest.fixture(scope="session")
def german_csv():
    """The German credit table is not redistributable here; provide it as a
    pre-encoded numeric CSV (20 feature columns plus a binary label) at
    data/german.csv or via PREFGP_GERMAN_CSV to enable the dependent tests."""
    path = os.environ.get("PREFGP_GERMAN_CSV",
                          os.path.join(DATA_DIR, "german.csv"))
    if not os.path.exists(path):
        pytest.skip("pre-encoded German credit CSV not available")
    return path


@pytest.fixture(scope="session")
def pool_dirs(tmp_path_factory, tiny_csv):
    """Two tiny precomputed runs per competitor kind, as run-batch would
    produce them."""
    from prefgp.datasets import load_dataset, save_run
    from prefgp.loop import RunConfig, run_session

    root = tmp_path_factory.mktemp("pools")
    pools = {}
    for kind in ("phi", "size"):
        kind_dir = root / kind
        for i in range(2):
            dataset = load_dataset(tiny_csv, "regression", seed=i)
            config = RunConfig(task="regression", estimator=kind, pop_size=16,
                               generations=3, seed=i)
            result = run_session(dataset, config)
            save_run(kind_dir / f"run_{i:03d}",
                     config=config.to_dict(), events=result.events,
                     front=result.front,
                     telemetry_rows=[r.to_dict() for r in result.telemetry.rows])
        pools[kind] = str(kind_dir)
    return pools
