"""Proportion, distance and downstream-classifier reports with text/CSV output."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..dataset import SampleTable, union_datasets
from .distance import (
    bin_histogram,
    histogram_bounds,
    js_divergence,
    kl_divergence,
    marginal_wasserstein,
    pca_project,
)
from .mlp import MLPConfig, fit_mlp_classifier
from .tree import fit_decision_tree

DEFAULT_LOAD_SETTINGS = tuple(f"{p}%" for p in range(70, 150, 10))


# --------------------------------------------------------------------------
# Conditional-generation proportions
# --------------------------------------------------------------------------

def _proportions(table: SampleTable, column: str) -> dict[str, float]:
    cats = table.column_schema(column).categories
    counts = np.bincount(table.column(column).astype(np.int64), minlength=len(cats))
    total = counts.sum()
    return {c: float(k / total) for c, k in zip(cats, counts)}


@dataclass(frozen=True)
class SettingResult:
    column: str
    category: str
    proportions: dict[str, float]  # emitted distribution of ``column`` under the condition
    baseline: dict[str, float]  # same column, unconditioned

    @property
    def conditioned(self) -> float:
        return self.proportions[self.category]

    @property
    def unconditioned(self) -> float:
        return self.baseline[self.category]

    @property
    def improvement(self) -> float:
        """``(conditioned - baseline) / baseline``; inf when the baseline is zero."""
        base = self.unconditioned
        if base == 0:
            return math.inf if self.conditioned > 0 else math.nan
        return (self.conditioned - base) / base


@dataclass(frozen=True)
class ProportionReport:
    n: int
    baseline: dict[str, dict[str, float]]  # column -> category -> proportion
    settings: tuple[SettingResult, ...]

    def for_column(self, column: str) -> list[SettingResult]:
        return [s for s in self.settings if s.column == column]

    def get(self, column: str, category: str) -> SettingResult:
        for s in self.settings:
            if s.column == column and s.category == category:
                return s
        raise KeyError((column, category))


def default_settings(schema) -> list[tuple[str, str]]:
    """Every label category, then the 70%..140% load levels present in the schema."""
    out = []
    for col in schema:
        if col.role == "label":
            out += [(col.name, c) for c in col.categories]
    for col in schema:
        if col.role == "condition":
            cats = [c for c in DEFAULT_LOAD_SETTINGS if c in col.categories] \
                if col.name == "load_level" else list(col.categories)
            out += [(col.name, c) for c in cats]
    return out


def conditional_proportion_report(model, n: int, settings=None, seed: int = 0,
                                  transformer=None, sampler=None) -> ProportionReport:
    """Generate ``n`` rows per setting and tabulate emitted category proportions.

    ``sampler(n, condition, seed) -> SampleTable`` overrides the default CTGAN
    draw, which makes the report usable with any generator.
    """
    if n <= 0:
        raise ValueError("n per setting must be positive")
    if sampler is None:
        from ..ctgan import generate_samples

        def sampler(k, condition, s):
            return generate_samples(model, k, condition, seed=s, transformer=transformer)

    uncond = sampler(n, None, seed)
    if settings is None:
        settings = default_settings(uncond.schema)
    settings = [tuple(s) for s in settings]
    columns = list(dict.fromkeys(c for c, _ in settings))
    baseline = {c: _proportions(uncond, c) for c in columns}
    results = []
    for i, (col, cat) in enumerate(settings, start=1):
        table = sampler(n, {col: cat}, seed + i)
        results.append(SettingResult(col, cat, _proportions(table, col), baseline[col]))
    return ProportionReport(n, baseline, tuple(results))


# --------------------------------------------------------------------------
# Distribution distance
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DistanceReport:
    pair: str
    js: float
    kl: float
    wasserstein: float
    k: int
    bins: int
    m: int
    bounds: np.ndarray = field(repr=False)
    explained_variance_ratio: np.ndarray = field(repr=False)


def _pair_report(pair, proj_a, proj_b, bounds, bins, m, evr):
    p = bin_histogram(proj_a, bins, bounds)
    q = bin_histogram(proj_b, bins, bounds)
    k = proj_a.shape[1]
    widths = (bounds[:, 1] - bounds[:, 0]) / bins
    return DistanceReport(
        pair, js_divergence(p, q), kl_divergence(p, q),
        marginal_wasserstein(p, q, (bins,) * k, widths), k, bins, m, bounds, evr,
    )


def distance_report(real: SampleTable, generated: SampleTable, m: int = 2000, k: int = 2,
                    bins: int = 20, seed: int = 0) -> tuple[DistanceReport, DistanceReport]:
    """Baseline ``(A, B)`` and ``(A, gen)`` distances on disjoint size-``m`` draws.

    The PCA basis and histogram bounds come from ``A`` alone.
    """
    if m < 1:
        raise ValueError("m must be positive")
    if len(real) < 2 * m:
        raise ValueError(f"real table has {len(real)} rows; need {2 * m} for two disjoint draws")
    if len(generated) < m:
        raise ValueError(f"generated table has {len(generated)} rows; need {m}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(real))
    a, b = real.take(perm[:m]), real.take(perm[m:2 * m])
    g = generated.take(rng.permutation(len(generated))[:m])
    proj = pca_project(a, [b, g], k)
    bounds = histogram_bounds(proj.reference)
    evr = proj.explained_variance_ratio
    pb, pg = proj.others
    return (
        _pair_report("real_A,real_B", proj.reference, pb, bounds, bins, m, evr),
        _pair_report("real_A,gen", proj.reference, pg, bounds, bins, m, evr),
    )


# --------------------------------------------------------------------------
# Downstream classifiers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierScores:
    recall_p: float
    recall_n: float
    f1: float
    accuracy: float


def _class_indices(schema_col) -> tuple[int, int]:
    cats = list(schema_col.categories)
    if "stable" in cats and "unstable" in cats:
        return cats.index("stable"), cats.index("unstable")
    return 0, 1


def scores_from_predictions(y_true, y_pred, positive: int = 0, negative: int = 1) -> ClassifierScores:
    """Recall of each class, F1 of ``positive`` and accuracy; undefined recalls are NaN."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("empty test set")

    def recall(c):
        mask = y_true == c
        return float(np.mean(y_pred[mask] == c)) if mask.any() else math.nan

    rp, rn = recall(positive), recall(negative)
    predicted_pos = y_pred == positive
    precision = float(np.mean(y_true[predicted_pos] == positive)) if predicted_pos.any() else math.nan
    if math.isnan(precision) or math.isnan(rp) or precision + rp == 0:
        f1 = 0.0 if precision == 0 or rp == 0 else math.nan
    else:
        f1 = 2 * precision * rp / (precision + rp)
    return ClassifierScores(rp, rn, f1, float(np.mean(y_true == y_pred)))


def classification_report(classifier, test: SampleTable) -> ClassifierScores:
    pos, neg = _class_indices(test.label_column)
    pred = classifier.predict(test.feature_matrix())
    return scores_from_predictions(test.labels(), pred, pos, neg)


@dataclass(frozen=True)
class BenchmarkConfig:
    dt_max_depth: int = 100
    mlp_hidden: int = 200
    mlp_max_iter: int = 500
    mlp: MLPConfig = MLPConfig()


@dataclass(frozen=True)
class BenchmarkRow:
    model: str
    dataset: str
    scores: ClassifierScores


def downstream_benchmark(train: SampleTable, gen: SampleTable, test: SampleTable,
                         config: BenchmarkConfig | None = None, seed: int = 0) -> list[BenchmarkRow]:
    """DT and MLP trained on S_train, S_gen and S_union, all scored on S_test."""
    cfg = config or BenchmarkConfig()
    sets = {"S_train": train, "S_gen": gen, "S_union": union_datasets(train, gen)}
    rows = []
    for model in ("DT", "MLP"):
        for name, data in sets.items():
            if model == "DT":
                clf = fit_decision_tree(data, cfg.dt_max_depth)
            else:
                clf = fit_mlp_classifier(data, cfg.mlp_hidden, cfg.mlp_max_iter, seed, cfg.mlp)
            rows.append(BenchmarkRow(model, name, classification_report(clf, test)))
    return rows


def benchmark_lookup(rows, model: str, dataset: str) -> ClassifierScores:
    for r in rows:
        if r.model == model and r.dataset == dataset:
            return r.scores
    raise KeyError((model, dataset))


# --------------------------------------------------------------------------
# Formatting
# --------------------------------------------------------------------------

def _pct(x: float) -> str:
    return "n/a" if math.isnan(x) else f"{100 * x:.2f}%"


def _grid(header, rows) -> str:
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def stability_table_rows(report: ProportionReport, column: str = "stability"):
    cats = list(report.baseline[column])
    header = ["condition"] + cats
    rows = [["none"] + [_pct(report.baseline[column][c]) for c in cats]]
    for s in report.for_column(column):
        rows.append([s.category] + [_pct(s.proportions[c]) for c in cats])
    return header, rows


def load_table_rows(report: ProportionReport, column: str = "load_level"):
    header = ["load_level", "conditioned", "unconditioned", "improvement"]
    rows = [[s.category, _pct(s.conditioned), _pct(s.unconditioned), _pct(s.improvement)]
            for s in report.for_column(column)]
    return header, rows


def distance_table_rows(reports):
    header = ["pair", "JS", "KL", "Wasserstein"]
    return header, [[r.pair, f"{r.js:.6f}", f"{r.kl:.6f}", f"{r.wasserstein:.6f}"] for r in reports]


def benchmark_table_rows(rows):
    def fmt(x):
        return "n/a" if math.isnan(x) else f"{x:.4f}"
    header = ["model", "dataset", "Recall_P", "Recall_N", "F1", "Accuracy"]
    return header, [[r.model, r.dataset, fmt(r.scores.recall_p), fmt(r.scores.recall_n),
                     fmt(r.scores.f1), fmt(r.scores.accuracy)] for r in rows]


def format_text(header, rows) -> str:
    return _grid(header, rows)


def format_csv(header, rows) -> str:
    return _csv(header, rows)
