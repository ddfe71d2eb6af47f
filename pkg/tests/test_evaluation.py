import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsgen.dataset import CATEGORICAL, CONTINUOUS, ColumnSchema, SampleTable
from tsgen.evaluation import (
    BenchmarkConfig,
    DecisionTree,
    MLPClassifier,
    MLPConfig,
    bin_histogram,
    classification_report,
    conditional_proportion_report,
    distance_report,
    downstream_benchmark,
    fit_decision_tree,
    fit_mlp_classifier,
    histogram_bounds,
    js_divergence,
    kl_divergence,
    marginal_wasserstein,
    pca_project,
    wasserstein_1d,
)
from tsgen.evaluation.mlp import NumericalError, gradient_check
from tsgen.evaluation.reports import (
    benchmark_lookup,
    benchmark_table_rows,
    format_csv,
    format_text,
    scores_from_predictions,
    stability_table_rows,
)
from tsgen.tds.scenario import LOAD_LEVELS, STABILITY_CLASSES


def labeled_schema(d):
    return tuple(ColumnSchema(f"f{i}", CONTINUOUS) for i in range(d)) + (
        ColumnSchema("stability", CATEGORICAL, STABILITY_CLASSES, role="label"),
        ColumnSchema("load_level", CATEGORICAL, LOAD_LEVELS, role="condition"),
    )


def labeled_table(X, y, levels=None):
    X = np.asarray(X, dtype=float)
    levels = np.zeros(len(y)) if levels is None else levels
    return SampleTable(labeled_schema(X.shape[1]), np.column_stack([X, y, levels]))


def blobs(n, seed, gap=6.0):
    rng = np.random.default_rng(seed)
    y = rng.integers(2, size=n)
    X = rng.normal(size=(n, 2)) + gap * y[:, None]
    return X, y


def direct_kl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


# --------------------------------------------------------------------------
# Divergences
# --------------------------------------------------------------------------

class TestDivergences:
    def test_identity(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        assert js_divergence(p, p) == 0.0
        assert kl_divergence(p, p) == 0.0
        assert wasserstein_1d(p, p) == 0.0

    def test_disjoint_supports(self):
        assert js_divergence([1, 0], [0, 1]) == pytest.approx(math.log(2), abs=1e-12)

    def test_direct_formula_oracle(self):
        p, q = [0.5, 0.5], [0.25, 0.75]
        m = [(a + b) / 2 for a, b in zip(p, q)]
        js = 0.5 * direct_kl(p, m) + 0.5 * direct_kl(q, m)
        assert abs(js_divergence(p, q) - js) < 1e-12
        assert abs(kl_divergence(p, q) - direct_kl(p, q)) < 1e-9
        assert wasserstein_1d(p, q) == pytest.approx(0.25, abs=1e-15)

    def test_kl_smoothing_keeps_finite(self):
        v = kl_divergence([1.0, 0.0], [0.0, 1.0])
        assert math.isfinite(v) and v > 20

    def test_point_masses(self):
        p, q = np.zeros(10), np.zeros(10)
        p[2], q[7] = 1, 1
        assert wasserstein_1d(p, q, bin_width=0.5) == pytest.approx(2.5, abs=1e-12)

    def test_marginal_wasserstein_shift(self):
        p, q = np.zeros((4, 4)), np.zeros((4, 4))
        p[0, 1], q[3, 1] = 1, 1
        # axis 0 moves three cells of width 2, axis 1 not at all
        assert marginal_wasserstein(p.ravel(), q.ravel(), (4, 4), (2.0, 1.0)) == pytest.approx(3.0)

    def test_errors(self):
        with pytest.raises(ValueError, match="size"):
            js_divergence([0.5, 0.5], [1.0, 0.0, 0.0])
        with pytest.raises(ValueError, match="probability"):
            js_divergence([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(ValueError):
            kl_divergence([1.5, -0.5], [0.5, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.integers(0, 10_000))
    def test_properties(self, raw, seed):
        p = np.array(raw) + 1e-3
        p /= p.sum()
        q = np.random.default_rng(seed).dirichlet(np.ones(len(p)))
        js = js_divergence(p, q)
        assert 0 <= js <= math.log(2)
        assert js == pytest.approx(js_divergence(q, p), abs=1e-12)
        assert kl_divergence(p, q) >= 0
        assert wasserstein_1d(p, q) >= 0


# --------------------------------------------------------------------------
# PCA and binning
# --------------------------------------------------------------------------

class TestPca:
    def test_eigenvalues_match_dense_oracle(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(5, 5))
        X = rng.normal(size=(800, 5)) @ A
        proj = pca_project(X, k=2)
        Z = (X - X.mean(0)) / X.std(0, ddof=1)
        sv = np.linalg.svd(Z, compute_uv=False)
        oracle = sv ** 2 / (len(Z) - 1)
        assert np.max(np.abs(proj.eigenvalues - oracle)) < 1e-9
        np.testing.assert_allclose(proj.explained_variance_ratio, oracle[:2] / oracle.sum(), atol=1e-12)

    def test_sign_convention(self):
        X = np.random.default_rng(1).normal(size=(300, 4)) @ np.diag([3, 2, 1, 0.5])
        proj = pca_project(X, k=3)
        for c in proj.components:
            assert c[np.argmax(np.abs(c))] > 0

    def test_identity_covariance_gives_signed_permutation(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(200, 2))
        # exact identity sample covariance with distinct column scales before standardizing
        X -= X.mean(0)
        q, _ = np.linalg.qr(X)
        X = np.sqrt(len(X) - 1) * q * [5.0, 0.2]
        comps = pca_project(X, k=2).components
        assert np.allclose(np.sort(np.abs(comps).ravel()), [0, 0, 1, 1], atol=1e-6)

    def test_rank_one(self):
        t = np.random.default_rng(3).normal(size=100)
        X = np.column_stack([t, 2 * t, -t])
        assert pca_project(X, k=1).explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-9)

    def test_full_rank_preserves_distances(self):
        X = np.random.default_rng(4).normal(size=(60, 4))
        proj = pca_project(X, k=4)
        Z = (X - proj.mean) / proj.scale
        d = lambda a: np.linalg.norm(a[:, None] - a[None], axis=2)
        assert np.max(np.abs(d(proj.reference) - d(Z))) < 1e-9

    def test_basis_applied_to_others(self):
        X = np.random.default_rng(5).normal(size=(50, 3))
        Y = np.random.default_rng(6).normal(size=(20, 3))
        proj = pca_project(X, [Y], k=2)
        np.testing.assert_allclose(proj.others[0], ((Y - proj.mean) / proj.scale) @ proj.components.T)

    def test_zero_variance_column_dropped(self):
        X = np.column_stack([np.random.default_rng(7).normal(size=(40, 2)), np.ones(40)])
        with pytest.warns(UserWarning, match="zero-variance"):
            proj = pca_project(X, k=2)
        assert proj.kept_columns.tolist() == [0, 1]

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            pca_project(np.random.default_rng(8).normal(size=(10, 2)), k=3)


class TestBinning:
    def test_single_cell(self):
        h = bin_histogram(np.full((30, 2), 0.5), 4, [[0, 1], [0, 1]])
        assert h.max() == 1.0 and h.sum() == 1.0

    def test_lattice_near_uniform(self):
        B, k = 5, 2
        g = (np.arange(20) + 0.5) / 20
        pts = np.array(np.meshgrid(g, g)).reshape(2, -1).T
        h = bin_histogram(pts, B, [[0, 1], [0, 1]])
        assert h.shape == (B ** k,)
        assert np.max(np.abs(h - 1 / B ** k)) < 2 / B ** k

    def test_out_of_bounds_clipped(self):
        h = bin_histogram(np.array([[-5.0], [5.0]]), 3, [[0, 1]])
        assert h.tolist() == [0.5, 0.0, 0.5]

    def test_empty(self):
        with pytest.raises(ValueError):
            bin_histogram(np.zeros((0, 2)), 4, [[0, 1], [0, 1]])

    def test_bounds_margin(self):
        b = histogram_bounds(np.array([[0.0, 1.0], [10.0, 1.0]]))
        np.testing.assert_allclose(b, [[-0.1, 10.1], [0.99, 1.01]])


class TestDistanceReport:
    def make_real(self, n, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 4)) @ rng.normal(size=(4, 4))
        return labeled_table(X, rng.integers(2, size=n))

    def test_pairs_and_ranges(self):
        real = self.make_real(600, 0)
        ab, ag = distance_report(real, self.make_real(300, 1), m=300, seed=0)
        assert (ab.pair, ag.pair) == ("real_A,real_B", "real_A,gen")
        for r in (ab, ag):
            assert 0 <= r.js <= math.log(2) and r.kl >= 0 and r.wasserstein >= 0
            assert r.bounds.shape == (2, 2)

    def test_self_comparison_calibration(self):
        base = self.make_real(6000, 11)
        ratios = []
        for seed in range(10):
            perm = np.random.default_rng(100 + seed).permutation(len(base))
            real, held = base.take(perm[:4000]), base.take(perm[4000:])
            ab, ag = distance_report(real, held, m=2000, seed=seed)
            ratios.append(ag.js / ab.js)
        assert 1 / 3 < np.median(ratios) < 3

    def test_insufficient_rows(self):
        with pytest.raises(ValueError, match="need"):
            distance_report(self.make_real(100, 0), self.make_real(100, 1), m=60)
        with pytest.raises(ValueError, match="generated"):
            distance_report(self.make_real(200, 0), self.make_real(50, 1), m=60)


# --------------------------------------------------------------------------
# Decision tree
# --------------------------------------------------------------------------

def _gini_cost(labels, n_classes):
    n = len(labels)
    counts = np.bincount(labels, minlength=n_classes)
    return n - (counts ** 2).sum() / n


def _oracle_tree(X, y, n_classes, depth, max_depth):
    """Plain exhaustive recursion used only as a reference."""
    majority = int(np.argmax(np.bincount(y, minlength=n_classes)))
    if depth >= max_depth or np.all(y == y[0]):
        return ("leaf", majority)
    best = None
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            t = 0.5 * (a + b)
            mask = X[:, f] <= t
            cost = _gini_cost(y[mask], n_classes) + _gini_cost(y[~mask], n_classes)
            if best is None or cost < best[0] - 1e-12 * max(1.0, abs(best[0])):
                best = (cost, f, t)
    if best is None:
        return ("leaf", majority)
    _, f, t = best
    mask = X[:, f] <= t
    return ("split", f, t, _oracle_tree(X[mask], y[mask], n_classes, depth + 1, max_depth),
            _oracle_tree(X[~mask], y[~mask], n_classes, depth + 1, max_depth))


def _oracle_predict(node, x):
    while node[0] == "split":
        node = node[3] if x[node[1]] <= node[2] else node[4]
    return node[1]


class TestDecisionTree:
    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        X = np.round(rng.normal(size=(200, 3)), 1)  # rounding creates repeated values
        y = rng.integers(2, size=200)
        for depth in (1, 3, 100):
            tree = DecisionTree(depth).fit(X, y, 2)
            oracle = _oracle_tree(X, y, 2, 0, depth)
            probe = np.vstack([X, rng.normal(size=(100, 3))])
            assert tree.predict(probe).tolist() == [_oracle_predict(oracle, x) for x in probe]

    def test_random_table_memorized(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(200, 4)), rng.integers(2, size=200)
        assert np.mean(DecisionTree(100).fit(X, y).predict(X) == y) == 1.0

    def test_threshold_separable(self):
        X = np.arange(20.0)[:, None]
        y = (X[:, 0] > 6).astype(int)
        tree = DecisionTree().fit(X, y)
        assert tree.threshold[0] == 6.5 and tree.depth == 1
        assert np.all(tree.predict(X) == y)

    def test_depth_zero_is_majority(self):
        y = np.array([1, 1, 0, 1, 0])
        tree = DecisionTree(0).fit(np.arange(5.0)[:, None], y)
        assert np.all(tree.predict(np.random.default_rng(0).normal(size=(9, 1))) == 1)

    def test_single_class_constant(self):
        tree = DecisionTree().fit(np.random.default_rng(0).normal(size=(30, 2)), np.zeros(30, int), 2)
        assert tree.depth == 0 and np.all(tree.predict(np.zeros((3, 2))) == 0)

    def test_tie_prefers_lowest_feature(self):
        X = np.column_stack([np.arange(10.0), np.arange(10.0)])
        tree = DecisionTree(1).fit(X, (np.arange(10) >= 5).astype(int))
        assert tree.feature[0] == 0

    def test_accuracy_monotone_in_depth(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(300, 3))
        y = ((X[:, 0] + 0.5 * rng.normal(size=300)) > 0).astype(int)
        acc = [np.mean(DecisionTree(d).fit(X, y).predict(X) == y) for d in range(12)]
        assert all(b >= a for a, b in zip(acc, acc[1:]))

    def test_fit_from_table(self):
        X, y = blobs(100, 0)
        tree = fit_decision_tree(labeled_table(X, y), max_depth=5)
        assert tree.n_classes == 2


# --------------------------------------------------------------------------
# MLP
# --------------------------------------------------------------------------

class TestMlp:
    def test_separable_blobs(self):
        X, y = blobs(400, 0, gap=10.0)
        Xt, yt = blobs(400, 1, gap=10.0)
        clf = fit_mlp_classifier(labeled_table(X, y), hidden=200, max_iter=500, seed=0)
        assert np.mean(clf.predict(Xt) == yt) == 1.0

    def test_gradient_check_small_net(self):
        assert gradient_check(hidden=4) < 1e-4
        assert gradient_check(n_in=2, hidden=4, n_classes=3, alpha=0.0, seed=3) < 1e-4

    def test_deterministic(self):
        X, y = blobs(300, 2, gap=1.5)
        cfg = MLPConfig(hidden=20, max_iter=30)
        a = MLPClassifier(cfg, seed=4).fit(X, y)
        b = MLPClassifier(cfg, seed=4).fit(X, y)
        assert np.array_equal(a.predict_proba(X), b.predict_proba(X))

    def test_probabilities_normalized(self):
        X, y = blobs(100, 3)
        p = MLPClassifier(MLPConfig(hidden=8, max_iter=5)).fit(X, y).predict_proba(X)
        assert np.allclose(p.sum(axis=1), 1.0) and np.all(p >= 0)

    def test_non_finite_input(self):
        X, y = blobs(20, 0)
        X[3, 0] = np.inf
        with pytest.raises(NumericalError):
            MLPClassifier(MLPConfig(hidden=4, max_iter=3)).fit(X, y)


# --------------------------------------------------------------------------
# Classification report and benchmark grid
# --------------------------------------------------------------------------

class _Constant:
    def __init__(self, label):
        self.label = label

    def predict(self, X):
        return np.full(len(X), self.label)


class _Oracle:
    def __init__(self, table):
        self.lookup = {tuple(r): l for r, l in zip(table.feature_matrix(), table.labels())}

    def predict(self, X):
        return np.array([self.lookup[tuple(r)] for r in X])


class TestClassificationReport:
    def test_perfect_predictor(self):
        X, y = blobs(50, 0)
        t = labeled_table(X, y)
        s = classification_report(_Oracle(t), t)
        assert (s.recall_p, s.recall_n, s.f1, s.accuracy) == (1.0, 1.0, 1.0, 1.0)

    def test_all_stable_on_81_19(self):
        y = np.r_[np.zeros(81), np.ones(19)].astype(int)
        t = labeled_table(np.arange(100.0)[:, None], y)
        s = classification_report(_Constant(0), t)
        assert s.recall_p == 1.0 and s.recall_n == 0.0
        assert s.accuracy == pytest.approx(0.81, abs=1e-12)
        assert s.f1 == pytest.approx(2 * 0.81 / 1.81, abs=1e-12)

    def test_missing_class_recall_undefined(self):
        t = labeled_table(np.arange(5.0)[:, None], np.zeros(5, int))
        s = classification_report(_Constant(0), t)
        assert s.recall_p == 1.0 and math.isnan(s.recall_n)

    def test_permutation_invariant(self):
        X, y = blobs(80, 1, gap=1.0)
        t = labeled_table(X, y)
        clf = DecisionTree(2).fit(X, y)
        perm = np.random.default_rng(0).permutation(80)
        assert classification_report(clf, t) == classification_report(clf, t.take(perm))

    def test_scores_from_predictions_by_hand(self):
        s = scores_from_predictions([0, 0, 0, 1, 1], [0, 1, 0, 1, 0])
        assert s.recall_p == pytest.approx(2 / 3) and s.recall_n == 0.5
        assert s.f1 == pytest.approx(2 / 3) and s.accuracy == 0.6


@pytest.fixture(scope="module")
def bench_data():
    X, y = blobs(300, 0, gap=2.0)
    Xt, yt = blobs(300, 1, gap=2.0)
    return labeled_table(X, y), labeled_table(Xt, yt)


class TestBenchmark:
    @pytest.fixture
    def data(self, bench_data):
        return bench_data

    def test_grid_shape(self, data):
        train, test = data
        cfg = BenchmarkConfig(mlp_hidden=16, mlp_max_iter=20)
        rows = downstream_benchmark(train, train, test, cfg, seed=0)
        assert len(rows) == 6
        assert {(r.model, r.dataset) for r in rows} == {
            (m, d) for m in ("DT", "MLP") for d in ("S_train", "S_gen", "S_union")}
        text = format_text(*benchmark_table_rows(rows))
        assert text.count("\n") >= 7
        assert format_csv(*benchmark_table_rows(rows)).splitlines()[0].startswith("model")

    def test_duplication_control(self, data):
        train, test = data
        cfg = BenchmarkConfig(mlp_hidden=200, mlp_max_iter=500)
        for seed in range(5):
            rows = downstream_benchmark(train, train, test, cfg, seed=seed)
            for model in ("DT", "MLP"):
                a = benchmark_lookup(rows, model, "S_train")
                b = benchmark_lookup(rows, model, "S_union")
                for f in ("recall_p", "recall_n", "f1", "accuracy"):
                    assert abs(getattr(a, f) - getattr(b, f)) <= 0.01

    def test_lookup_missing(self):
        with pytest.raises(KeyError):
            benchmark_lookup([], "DT", "S_train")


# --------------------------------------------------------------------------
# Proportion report
# --------------------------------------------------------------------------

def _fake_sampler(unstable_share):
    schema = labeled_schema(1)

    def sampler(n, condition, seed):
        rng = np.random.default_rng(seed)
        share = unstable_share
        level = rng.integers(18, size=n)
        if condition and "stability" in condition:
            share = 0.9 if condition["stability"] == "unstable" else 0.1
        if condition and "load_level" in condition:
            level[: n // 2] = LOAD_LEVELS.index(condition["load_level"])
        stab = (rng.random(n) < share).astype(float)
        return SampleTable(schema, np.column_stack([rng.normal(size=n), stab, level]))

    return sampler


class TestProportionReport:
    def test_degenerate_generator(self):
        schema = labeled_schema(1)

        def always_unstable(n, condition, seed):
            return SampleTable(schema, np.column_stack([np.zeros(n), np.ones(n), np.zeros(n)]))

        report = conditional_proportion_report(None, 50, sampler=always_unstable)
        assert report.baseline["stability"]["unstable"] == 1.0
        assert all(s.proportions["unstable"] == 1.0 for s in report.for_column("stability"))

    def test_default_settings_and_sums(self):
        report = conditional_proportion_report(None, 400, sampler=_fake_sampler(0.3), seed=2)
        cats = [s.category for s in report.settings]
        assert cats == ["stable", "unstable", "70%", "80%", "90%", "100%", "110%", "120%", "130%", "140%"]
        for s in report.settings:
            assert abs(sum(s.proportions.values()) - 1.0) < 1e-9
            assert all(0 <= v <= 1 for v in s.proportions.values())

    def test_improvement_positive_when_controllable(self):
        report = conditional_proportion_report(None, 1000, sampler=_fake_sampler(0.3))
        assert report.get("stability", "unstable").improvement > 0
        assert report.get("load_level", "140%").improvement > 0
        assert report.get("stability", "unstable").improvement == pytest.approx(
            (report.get("stability", "unstable").conditioned - report.baseline["stability"]["unstable"])
            / report.baseline["stability"]["unstable"])

    def test_text_table(self):
        report = conditional_proportion_report(None, 100, sampler=_fake_sampler(0.3))
        header, rows = stability_table_rows(report)
        assert len(rows) == 3

    def test_zero_n(self):
        with pytest.raises(ValueError):
            conditional_proportion_report(None, 0, sampler=_fake_sampler(0.3))
