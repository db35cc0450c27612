import numpy as np
import pytest

from prefgp import datasets
from prefgp.datasets import DataError, build_survey_pairs, error_metric, front_at_percentile
from prefgp.evolution import FrontEntry


def write_csv(path, rows, header=None):
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return path


@pytest.fixture
def boston_path():
    import os
    path = os.path.join(os.path.dirname(__file__), "..", "data", "boston.csv")
    if not os.path.exists(path):
        pytest.skip("data/boston.csv not present")
    return path


class TestLoadDataset:
    def test_boston_shape(self, boston_path):
        ds = datasets.load_dataset(boston_path, "regression", seed=0)
        n = len(ds.y_train) + len(ds.y_test)
        assert n == 506
        assert ds.n_features == 13
        assert len(ds.y_train) == round(0.7 * 506)

    def test_train_columns_standardized(self, boston_path):
        ds = datasets.load_dataset(boston_path, "regression", seed=1)
        mu = ds.X_train.mean(axis=0)
        sd = ds.X_train.std(axis=0)
        assert np.abs(mu).max() < 1e-9
        assert np.allclose(sd, 1.0)

    def test_no_leakage(self, boston_path):
        # scaling fit on train only: test columns are generally off-center
        ds = datasets.load_dataset(boston_path, "regression", seed=2)
        assert np.abs(ds.X_test.mean(axis=0)).max() > 1e-6

    def test_split_determinism_and_disjointness(self, boston_path):
        a = datasets.load_dataset(boston_path, "regression", seed=3)
        b = datasets.load_dataset(boston_path, "regression", seed=3)
        assert np.array_equal(a.train_idx, b.train_idx)
        assert set(a.train_idx) & set(a.test_idx) == set()
        assert len(set(a.train_idx) | set(a.test_idx)) == 506

    def test_constant_column_zeroed(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [[7.0, float(v), float(y)] for v, y in
                zip(rng.normal(size=30), rng.normal(size=30))]
        ds = datasets.load_dataset(write_csv(tmp_path / "t.csv", rows),
                                   "regression", seed=0)
        assert np.array_equal(ds.X_train[:, 0], np.zeros(len(ds.y_train)))
        assert np.array_equal(ds.X_test[:, 0], np.zeros(len(ds.y_test)))

    def test_binary_labels_mapped(self, tmp_path):
        rows = [[float(i), 1.0 + (i % 2)] for i in range(20)]  # labels 1/2
        ds = datasets.load_dataset(write_csv(tmp_path / "b.csv", rows),
                                   "binary_classification", seed=0)
        assert set(np.concatenate([ds.y_train, ds.y_test])) == {0.0, 1.0}

    def test_header_detected(self, tmp_path):
        rows = [[float(i), float(i)] for i in range(12)]
        path = write_csv(tmp_path / "h.csv", rows, header=["a", "label"])
        ds = datasets.load_dataset(path, "regression", seed=0)
        assert len(ds.y_train) + len(ds.y_test) == 12

    def test_rejects_bad_tables(self, tmp_path):
        with pytest.raises(DataError):
            datasets.load_dataset(write_csv(tmp_path / "few.csv",
                                            [[1.0, 2.0]] * 5), "regression", 0)
        path = tmp_path / "ragged.csv"
        path.write_text("1,2,3\n1,2\n" + "1,2,3\n" * 10)
        with pytest.raises(DataError):
            datasets.load_dataset(path, "regression", 0)
        path = tmp_path / "text.csv"
        path.write_text("1,2,oops\n" * 12)
        with pytest.raises(DataError):
            datasets.load_dataset(path, "regression", 0)


class TestErrorMetric:
    def test_perfect_regression(self):
        y = np.array([1.0, 2.0, 3.0])
        assert error_metric("regression", y, y) == 0.0

    def test_all_zero_classifier(self):
        y = np.array([0.0, 1.0, 0.0, 1.0])
        assert error_metric("binary_classification", np.zeros(4), y) == 0.5

    def test_matches_definition_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pred = rng.normal(size=40)
            y = rng.normal(size=40)
            assert error_metric("regression", pred, y) == pytest.approx(
                float(sum((p - t) ** 2 for p, t in zip(pred, y)) / 40), abs=1e-12)
            yb = (rng.random(40) < 0.5).astype(float)
            wrong = sum(int((p >= 0.5) != bool(t)) for p, t in zip(pred, yb))
            assert error_metric("binary_classification", pred, yb) == pytest.approx(
                wrong / 40, abs=1e-12)


def entry(expr, err_test, psi):
    return FrontEntry(expression=expr, mse_train=err_test, err_train=err_test,
                      err_test=err_test, psi_hat=psi, features=(1, 0, 0, 0, 0, 1),
                      generation=0)


class TestPercentile:
    def test_singleton(self):
        e = entry("x0", 1.0, -1.0)
        for tau in (0, 10, 50, 100):
            assert front_at_percentile([e], tau) is e

    def test_eleven_entries_tau50(self):
        entries = [entry(f"e{i}", 10.0 - i, float(i)) for i in range(11)]
        assert front_at_percentile(entries, 50) is entries[5]  # the 6th entry

    def test_orientation_and_monotonicity(self):
        entries = [entry(f"e{i}", 10.0 - i, float(i)) for i in range(7)]
        assert front_at_percentile(entries, 0).psi_hat == 0.0
        assert front_at_percentile(entries, 100).psi_hat == 6.0
        last = -np.inf
        for tau in range(0, 101, 10):
            psi = front_at_percentile(entries, tau).psi_hat
            assert psi >= last
            last = psi

    def test_empty_front(self):
        with pytest.raises(DataError):
            front_at_percentile([], 50)


class TestSurveyPairs:
    def test_single_candidate(self):
        learned = [entry("a", 1.0, 0.0)]
        pools = {"size": [[entry("b", 1.3, 0.0)]]}
        pairs = build_survey_pairs(learned, pools, taus=(30,))
        assert len(pairs) == 1
        assert pairs[0].competitor.expression == "b"
        assert pairs[0].gap == pytest.approx(0.3)

    def test_argmin_gap(self):
        learned = [entry("a", 1.0, 0.0)]
        pool = [[entry("far", 1.3, 0.0), entry("near", 1.01, 0.0),
                 entry("mid", 1.2, 0.0)]]
        pairs = build_survey_pairs(learned, {"phi": pool}, taus=(50,))
        assert pairs[0].competitor.expression == "near"

    def test_tie_keeps_first(self):
        learned = [entry("a", 1.0, 0.0)]
        # exactly representable gaps of 0.25 on both sides
        pool = [[entry("first", 1.25, 0.0), entry("second", 0.75, 0.0)]]
        pairs = build_survey_pairs(learned, {"size": pool}, taus=(50,))
        assert pairs[0].competitor.expression == "first"

    def test_two_kinds_two_taus(self):
        learned = [entry(f"l{i}", float(i), float(i)) for i in range(5)]
        pools = {"phi": [[entry("p", 2.0, 0.0)]], "size": [[entry("s", 3.0, 0.0)]]}
        pairs = build_survey_pairs(learned, pools)
        assert len(pairs) == 4
        assert {(p.kind, p.tau) for p in pairs} == {
            ("phi", 30), ("phi", 50), ("size", 30), ("size", 50)}

    def test_empty_pool_rejected(self):
        with pytest.raises(DataError):
            build_survey_pairs([entry("a", 1.0, 0.0)], {})
        with pytest.raises(DataError):
            build_survey_pairs([entry("a", 1.0, 0.0)], {"size": []})
