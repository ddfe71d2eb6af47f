"""PCA projection, histogram binning and divergences between binned samples."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

KL_EPS = 1e-10
NORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Projection:
    reference: np.ndarray  # (n_ref, k)
    others: list
    eigenvalues: np.ndarray  # all eigenvalues, descending
    components: np.ndarray  # (k, d_kept)
    explained_variance_ratio: np.ndarray  # (k,)
    kept_columns: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[:, self.kept_columns]
        return ((x - self.mean) / self.scale) @ self.components.T


def _as_matrix(data) -> np.ndarray:
    if hasattr(data, "feature_matrix"):
        return data.feature_matrix()
    return np.asarray(data, dtype=np.float64)


def pca_project(reference, others=(), k: int = 2) -> Projection:
    """Project onto the top-``k`` principal axes of the standardized reference set.

    Columns are standardized with the reference mean and std; zero-variance
    columns are dropped with a warning. Each axis is signed so that its
    largest-magnitude loading is positive.
    """
    ref = _as_matrix(reference)
    if ref.ndim != 2 or ref.shape[0] < 2:
        raise ValueError("reference needs at least two rows")
    std = ref.std(axis=0, ddof=1)
    kept = np.flatnonzero(std > 1e-12 * np.maximum(1.0, np.abs(ref.mean(axis=0))))
    if kept.size < ref.shape[1]:
        warnings.warn(f"pca_project: dropping {ref.shape[1] - kept.size} zero-variance columns",
                      stacklevel=2)
    if k > kept.size:
        raise ValueError(f"k={k} exceeds the {kept.size} usable feature columns")
    mean = ref[:, kept].mean(axis=0)
    scale = std[kept]
    zref = (ref[:, kept] - mean) / scale
    cov = np.cov(zref, rowvar=False).reshape(kept.size, kept.size)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    comps = vecs[:, :k].T.copy()
    for i in range(k):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    total = vals.sum()
    ratio = vals[:k] / total if total > 0 else np.zeros(k)
    proj = Projection(zref @ comps.T, [], vals, comps, ratio, kept, mean, scale)
    proj.others.extend(proj.transform(_as_matrix(o)) for o in others)
    return proj


def histogram_bounds(points: np.ndarray, margin: float = 0.01) -> np.ndarray:
    """Per-dimension ``(lo, hi)`` covering ``points``, widened by ``margin`` of the range."""
    points = np.asarray(points, dtype=np.float64)
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.stack([lo - margin * span, hi + margin * span], axis=1)


def bin_histogram(points, bins: int, bounds) -> np.ndarray:
    """Flattened ``bins**k`` probability vector; out-of-range points land in edge cells."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] == 0:
        raise ValueError("cannot bin an empty point set")
    bounds = np.asarray(bounds, dtype=np.float64).reshape(points.shape[1], 2)
    lo, hi = bounds[:, 0], bounds[:, 1]
    width = (hi - lo) / bins
    idx = np.floor((points - lo) / width).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    flat = np.ravel_multi_index(idx.T, (bins,) * points.shape[1])
    counts = np.bincount(flat, minlength=bins ** points.shape[1]).astype(np.float64)
    return counts / counts.sum()


def _check_pair(p, q):
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distributions differ in size: {p.shape} vs {q.shape}")
    for name, v in (("P", p), ("Q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"{name} is not a probability vector (sum {v.sum()})")
    return p, q


def _kl_raw(p, q):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kl_divergence(p, q, eps: float = KL_EPS) -> float:
    """KL(P||Q) in nats after adding ``eps`` to every cell and renormalizing."""
    p, q = _check_pair(p, q)
    p = (p + eps) / (p + eps).sum()
    q = (q + eps) / (q + eps).sum()
    return max(0.0, float(np.sum(p * np.log(p / q))))


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats; lies in [0, ln 2]."""
    p, q = _check_pair(p, q)
    m = 0.5 * (p + q)
    return min(max(0.0, 0.5 * _kl_raw(p, m) + 0.5 * _kl_raw(q, m)), float(np.log(2.0)))


def wasserstein_1d(p, q, bin_width: float = 1.0) -> float:
    """Earth mover's distance between two histograms on the same uniform 1-D grid."""
    p, q = _check_pair(p, q)
    return float(np.sum(np.abs(np.cumsum(p) - np.cumsum(q))[:-1]) * bin_width)


def marginal_wasserstein(p, q, shape, bin_widths) -> float:
    """Mean over axes of the 1-D distance between the marginals of two gridded histograms."""
    p, q = _check_pair(p, q)
    p, q = p.reshape(shape), q.reshape(shape)
    out = []
    for axis, w in enumerate(bin_widths):
        other = tuple(a for a in range(len(shape)) if a != axis)
        out.append(wasserstein_1d(p.sum(axis=other), q.sum(axis=other), w))
    return float(np.mean(out))
