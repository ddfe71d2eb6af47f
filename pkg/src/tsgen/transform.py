"""Reversible encoding between sample tables and generator space.

Continuous columns get mode-specific normalization: a variational Gaussian
mixture is fitted per column, each value is assigned to the mode with the
highest weighted density and stored as ``(mode one-hot, beta)`` where
``beta = (c - mean_k) / (4 * std_k)`` clipped to [-1, 1]. Categorical columns
become one-hot blocks. Condition columns (label + condition roles) also define
the condition vector: their one-hot blocks concatenated in a fixed order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import digamma, gammaln

from .dataset import ColumnSchema, SampleTable

MAX_MODES = 10
WEIGHT_THRESHOLD = 0.005
FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# Variational Gaussian mixture, one dimension
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GmmColumnModel:
    column: str
    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not (len(w) == len(self.means) == len(self.stds)) or len(w) == 0:
            raise ValueError("weights, means and stds must be non-empty and equally long")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mode weights sum to {w.sum()}, expected 1")
        if min(self.stds) <= 0:
            raise ValueError("mode standard deviations must be positive")

    @property
    def n_modes(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {"column": self.column, "weights": list(self.weights),
                "means": list(self.means), "stds": list(self.stds)}

    @classmethod
    def from_dict(cls, d) -> "GmmColumnModel":
        return cls(d["column"], tuple(d["weights"]), tuple(d["means"]), tuple(d["stds"]))

    def density(self, c) -> np.ndarray:
        """Mixture density at ``c``."""
        return mode_density(self, c).sum(axis=-1)


def _kmeanspp(z, k, rng):
    centers = [z[rng.integers(len(z))]]
    d2 = (z - centers[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers.append(z[rng.integers(len(z))])
        else:
            centers.append(z[rng.choice(len(z), p=d2 / total)])
        d2 = np.minimum(d2, (z - centers[-1]) ** 2)
    return np.array(centers)


@dataclass
class _VBState:
    resp: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    w: np.ndarray  # Wishart scale (scalar per mode in 1-D)
    nu: np.ndarray
    elbo: float = -np.inf


class _VariationalGMM:
    """Coordinate-ascent variational inference for a 1-D Gaussian mixture.

    Priors: symmetric Dirichlet(alpha0) on the weights and Normal-Wishart
    (m0, beta0, W0, nu0) on each mode's mean and precision, following the
    standard conjugate treatment. Works on standardized data.
    """

    def __init__(self, z, alpha0=1e-3, beta0=1.0, m0=0.0, nu0=1.0, w0=1.0):
        self.z = z
        self.z2 = z * z
        self.alpha0, self.beta0, self.m0, self.nu0, self.w0 = alpha0, beta0, m0, nu0, w0

    def m_step(self, resp):
        z = self.z
        nk = resp.sum(axis=0) + 10 * np.finfo(np.float64).eps
        xbar = (z @ resp) / nk
        sk = np.maximum((self.z2 @ resp) / nk - xbar**2, 0.0)
        beta = self.beta0 + nk
        m = (self.beta0 * self.m0 + nk * xbar) / beta
        w_inv = 1.0 / self.w0 + nk * sk + self.beta0 * nk / (self.beta0 + nk) * (xbar - self.m0) ** 2
        state = _VBState(resp, self.alpha0 + nk, beta, m, 1.0 / w_inv, self.nu0 + nk)
        state.elbo = self.elbo(state, nk, xbar, sk)
        return state

    def _expectations(self, st):
        log_pi = digamma(st.alpha) - digamma(st.alpha.sum())
        log_lam = digamma(0.5 * st.nu) + math.log(2.0) + np.log(st.w)
        return log_pi, log_lam

    def e_step(self, st):
        log_pi, log_lam = self._expectations(st)
        d2 = (self.z[:, None] - st.m[None, :]) ** 2
        log_rho = (log_pi + 0.5 * log_lam - 0.5 * math.log(2 * math.pi)
                   - 0.5 * (1.0 / st.beta + st.nu * st.w * d2))
        mx = log_rho.max(axis=1, keepdims=True)
        r = np.exp(log_rho - mx)
        return r / r.sum(axis=1, keepdims=True)

    def elbo(self, st, nk, xbar, sk):
        log_pi, log_lam = self._expectations(st)
        a0, b0, m0, nu0, w0 = self.alpha0, self.beta0, self.m0, self.nu0, self.w0
        K = len(nk)
        r = st.resp
        e_lik = 0.5 * np.sum(nk * (log_lam - 1.0 / st.beta - st.nu * sk * st.w
                                   - st.nu * st.w * (xbar - st.m) ** 2 - math.log(2 * math.pi)))
        e_z = np.sum(nk * log_pi)
        log_c0 = gammaln(K * a0) - K * gammaln(a0)
        log_c = gammaln(st.alpha.sum()) - gammaln(st.alpha).sum()
        e_pi = log_c0 + (a0 - 1.0) * log_pi.sum()

        def log_b(w, nu):
            return -0.5 * nu * np.log(w) - 0.5 * nu * math.log(2.0) - gammaln(0.5 * nu)

        e_mulam = (0.5 * np.sum(math.log(b0 / (2 * math.pi)) + log_lam - b0 / st.beta
                                - b0 * st.nu * st.w * (st.m - m0) ** 2)
                   + K * log_b(w0, nu0) + 0.5 * (nu0 - 2.0) * log_lam.sum()
                   - 0.5 * np.sum(st.nu * st.w / w0))
        with np.errstate(divide="ignore", invalid="ignore"):
            e_qz = np.sum(np.where(r > 0, r * np.log(r), 0.0))
        e_qpi = np.sum((st.alpha - 1.0) * log_pi) + log_c
        entropy_lam = -log_b(st.w, st.nu) - 0.5 * (st.nu - 2.0) * log_lam + 0.5 * st.nu
        e_qmulam = np.sum(0.5 * log_lam + 0.5 * np.log(st.beta / (2 * math.pi)) - 0.5 - entropy_lam)
        return float(e_lik + e_z + e_pi + e_mulam - e_qz - e_qpi - e_qmulam)

    def run(self, resp, max_iter, tol):
        st = self.m_step(resp)
        n = len(self.z)
        for _ in range(max_iter):
            new = self.m_step(self.e_step(st))
            done = abs(new.elbo - st.elbo) < tol * n
            st = new
            if done:
                break
        return st


def fit_vgm(values, max_modes: int = MAX_MODES, weight_threshold: float = WEIGHT_THRESHOLD,
            seed: int = 0, column: str = "", max_iter: int = 300, tol: float = 1e-5,
            weight_prior: float = 1e-3, prune: bool = True) -> GmmColumnModel:
    """Variational Bayesian GMM (Dirichlet weight prior, Normal-Wishart mode prior).

    Means are seeded by k-means++ and refined by coordinate ascent on the
    variational lower bound. With ``prune`` the fit then tries to delete modes,
    smallest first, keeping a deletion whenever the refitted lower bound is
    higher; plain coordinate ascent leaves redundant overlapping modes alive
    for thousands of iterations. Modes whose expected weight falls below
    ``weight_threshold`` are dropped and the rest renormalized.

    Fitting happens on the standardized column, so results are equivariant
    under affine maps of the data.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError(f"column {column!r}: non-finite values")
    if len(x) < 2 * max_modes:
        raise ValueError(
            f"column {column!r}: need at least {2 * max_modes} values for {max_modes} modes"
        )
    loc = x.mean()
    scale = x.std()
    if scale <= 1e-12 * max(1.0, abs(loc)):
        # the median is exact for a constant column, the mean is not
        mid = float(np.median(x))
        return GmmColumnModel(column, (1.0,), (mid,), (max(1e-6, abs(mid) * 1e-6),))

    z = (x - loc) / scale
    n, K = len(z), max_modes
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(z, K, rng)
    resp = np.zeros((n, K))
    resp[np.arange(n), np.argmin((z[:, None] - centers[None, :]) ** 2, axis=1)] = 1.0

    vb = _VariationalGMM(z, alpha0=weight_prior)
    st = vb.run(resp, max_iter, tol)
    # drop modes that lost all their mass before trying deletions
    alive = st.alpha - vb.alpha0 > 1e-6 * n
    if not alive.all():
        st = vb.run(_renormalize(st.resp[:, alive]), max_iter, tol)

    while prune and len(st.alpha) > 1:
        improved = False
        for k in np.argsort(st.alpha, kind="stable"):
            keep = np.arange(len(st.alpha)) != k
            cand = vb.run(_renormalize(st.resp[:, keep]), max_iter, tol)
            if cand.elbo > st.elbo:
                st, improved = cand, True
                break
        if not improved:
            break

    weights = st.alpha / st.alpha.sum()
    keep = np.flatnonzero(weights >= weight_threshold)
    if keep.size == 0:
        keep = np.array([int(np.argmax(weights))])
    weights = weights[keep] / weights[keep].sum()
    means = loc + scale * st.m[keep]
    stds = scale * np.sqrt(1.0 / (st.nu[keep] * st.w[keep]))
    stds = np.maximum(stds, 1e-12 * max(1.0, abs(loc)))
    order = np.argsort(means, kind="stable")
    return GmmColumnModel(
        column,
        tuple(float(v) for v in weights[order]),
        tuple(float(v) for v in means[order]),
        tuple(float(v) for v in stds[order]),
    )


def _renormalize(resp):
    total = resp.sum(axis=1, keepdims=True)
    out = np.where(total > 0, resp / np.where(total > 0, total, 1.0), 1.0 / resp.shape[1])
    return out


def mode_density(model: GmmColumnModel, c) -> np.ndarray:
    """Weighted density ``w_k * N(c; mean_k, std_k)`` of every mode; shape ``(..., m)``."""
    c = np.asarray(c, dtype=np.float64)[..., None]
    w, mu, sd = (np.asarray(a) for a in (model.weights, model.means, model.stds))
    return w * np.exp(-0.5 * ((c - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))


def _log_mode_density(model, c):
    c = np.asarray(c, dtype=np.float64)[..., None]
    w, mu, sd = (np.asarray(a) for a in (model.weights, model.means, model.stds))
    return np.log(w) - 0.5 * ((c - mu) / sd) ** 2 - np.log(sd)


@dataclass(frozen=True, eq=False)
class NormalizedValue:
    mode_onehot: np.ndarray
    beta: float

    @property
    def mode(self) -> int:
        return int(np.argmax(self.mode_onehot))


def assign_modes(model: GmmColumnModel, c) -> np.ndarray:
    # log space keeps the argmax meaningful far out in the tails
    return np.argmax(_log_mode_density(model, c), axis=-1)


def normalize_values(model: GmmColumnModel, c) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized normalization: ``(mode indices, beta)``."""
    c = np.asarray(c, dtype=np.float64)
    k = assign_modes(model, c)
    mu = np.asarray(model.means)[k]
    sd = np.asarray(model.stds)[k]
    return k, np.clip((c - mu) / (4.0 * sd), -1.0, 1.0)


def normalize_value(model: GmmColumnModel, c: float) -> NormalizedValue:
    k, beta = normalize_values(model, np.array([c]))
    onehot = np.zeros(model.n_modes)
    onehot[k[0]] = 1.0
    return NormalizedValue(onehot, float(beta[0]))


def denormalize_values(model: GmmColumnModel, modes, beta) -> np.ndarray:
    modes = np.asarray(modes, dtype=np.int64)
    return np.asarray(model.means)[modes] + 4.0 * np.asarray(model.stds)[modes] * np.asarray(beta)


def denormalize_value(model: GmmColumnModel, nv: NormalizedValue) -> float:
    onehot = np.asarray(nv.mode_onehot, dtype=np.float64)
    if onehot.shape != (model.n_modes,) or np.count_nonzero(onehot == 1.0) != 1 \
            or np.count_nonzero(onehot) != 1:
        raise ValueError(f"malformed mode one-hot {onehot.tolist()} for {model.n_modes} modes")
    return float(denormalize_values(model, [int(np.argmax(onehot))], [nv.beta])[0])


# --------------------------------------------------------------------------
# Layout and condition vectors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnBlock:
    """Position of one schema column in the encoded vector.

    Continuous columns occupy ``1 + n_modes`` slots (beta first, then the mode
    one-hot); categorical columns occupy one slot per category.
    """

    name: str
    kind: str
    offset: int
    width: int

    @property
    def onehot_slice(self) -> slice:
        start = self.offset + 1 if self.kind == "continuous" else self.offset
        return slice(start, self.offset + self.width)


@dataclass(frozen=True)
class CondBlock:
    name: str
    categories: tuple[str, ...]
    offset: int

    @property
    def width(self) -> int:
        return len(self.categories)

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.width)


@dataclass(frozen=True)
class ConditionLayout:
    blocks: tuple[CondBlock, ...]

    @classmethod
    def from_schema(cls, schema: Sequence[ColumnSchema]) -> "ConditionLayout":
        """Label column first, then condition columns in schema order."""
        cols = [c for c in schema if c.role == "label"] + [c for c in schema if c.role == "condition"]
        blocks, off = [], 0
        for c in cols:
            blocks.append(CondBlock(c.name, c.categories, off))
            off += len(c.categories)
        return cls(tuple(blocks))

    @property
    def width(self) -> int:
        return sum(b.width for b in self.blocks)

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def block(self, name: str) -> CondBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(f"no condition block {name!r}")

    def build(self, values: Mapping[str, str | int]) -> "ConditionVector":
        """Concatenate one one-hot per block; ``values`` maps block name to category label or index."""
        missing = set(self.names) - set(values)
        extra = set(values) - set(self.names)
        if missing or extra:
            raise KeyError(f"condition blocks missing {sorted(missing)}, unknown {sorted(extra)}")
        vec = np.zeros(self.width)
        for b in self.blocks:
            vec[b.offset + _category_index(b, values[b.name])] = 1.0
        return ConditionVector(vec, self)

    def indices_to_matrix(self, indices: np.ndarray) -> np.ndarray:
        """``(n, n_blocks)`` category indices -> ``(n, width)`` condition matrix."""
        indices = np.asarray(indices, dtype=np.int64)
        out = np.zeros((indices.shape[0], self.width))
        rows = np.arange(indices.shape[0])
        for j, b in enumerate(self.blocks):
            out[rows, b.offset + indices[:, j]] = 1.0
        return out


def _category_index(block: CondBlock, value) -> int:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        if not 0 <= value < block.width:
            raise KeyError(f"{block.name}: category index {value} out of range")
        return int(value)
    try:
        return block.categories.index(str(value))
    except ValueError:
        raise KeyError(f"{block.name}: unknown category {value!r}") from None


@dataclass(frozen=True, eq=False)
class ConditionVector:
    vector: np.ndarray
    layout: ConditionLayout

    def category(self, name: str) -> str:
        b = self.layout.block(name)
        return b.categories[int(np.argmax(self.vector[b.slice]))]


_DEFAULT_COND_LAYOUT = None


def build_cond_vector(stability, load_level, layout: ConditionLayout | None = None) -> ConditionVector:
    """Stability one-hot followed by load-level one-hot (2 + 18 slots by default)."""
    global _DEFAULT_COND_LAYOUT
    if layout is None:
        if _DEFAULT_COND_LAYOUT is None:
            from .tds.scenario import LOAD_LEVELS, STABILITY_CLASSES
            _DEFAULT_COND_LAYOUT = ConditionLayout((
                CondBlock("stability", STABILITY_CLASSES, 0),
                CondBlock("load_level", LOAD_LEVELS, len(STABILITY_CLASSES)),
            ))
        layout = _DEFAULT_COND_LAYOUT
    return layout.build({layout.blocks[0].name: stability, layout.blocks[1].name: load_level})


class ConditionSampler:
    """Training-by-sampling over the condition columns of a table.

    A draw picks a condition block uniformly, a category within it with
    probability proportional to ``log(1 + count)``, then a uniformly random
    row holding that category. The condition vector is that row's categories
    in every block, so the real row always matches its condition.
    """

    def __init__(self, codes: np.ndarray, layout: ConditionLayout):
        codes = np.asarray(codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[0] == 0:
            raise ValueError("condition sampling needs a non-empty table")
        self.layout = layout
        self.codes = codes
        self.rows_by_category = []
        self.category_probs = []
        for j, b in enumerate(layout.blocks):
            groups = [np.flatnonzero(codes[:, j] == k) for k in range(b.width)]
            p = np.log1p(np.array([len(g) for g in groups], dtype=np.float64))
            self.rows_by_category.append(groups)
            self.category_probs.append(p / p.sum())

    @classmethod
    def from_table(cls, table: SampleTable, layout: ConditionLayout | None = None):
        layout = layout or ConditionLayout.from_schema(table.schema)
        if len(table) == 0:
            raise ValueError("condition sampling needs a non-empty table")
        codes = np.stack([table.column(b.name).astype(np.int64) for b in layout.blocks], axis=1)
        return cls(codes, layout)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        blocks = rng.integers(len(self.layout.blocks), size=n)
        rows = np.empty(n, dtype=np.int64)
        for i, j in enumerate(blocks):
            k = rng.choice(len(self.category_probs[j]), p=self.category_probs[j])
            group = self.rows_by_category[j][k]
            rows[i] = group[rng.integers(len(group))]
        return rows

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """``(condition matrix (n, width), row indices)``."""
        rows = self.sample_indices(n, rng)
        return self.layout.indices_to_matrix(self.codes[rows]), rows


def sample_training_condition(table: SampleTable, seed: int) -> tuple[ConditionVector, int]:
    sampler = ConditionSampler.from_table(table)
    cond, rows = sampler.sample(1, np.random.default_rng(seed))
    return ConditionVector(cond[0], sampler.layout), int(rows[0])


# --------------------------------------------------------------------------
# Table transformer
# --------------------------------------------------------------------------

class TransformerError(ValueError):
    pass


@dataclass(eq=False)
class DataTransformer:
    schema: tuple[ColumnSchema, ...]
    models: dict[str, GmmColumnModel]
    blocks: tuple[ColumnBlock, ...] = field(init=False)
    cond_layout: ConditionLayout = field(init=False)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        blocks, off = [], 0
        ordered = [c for c in self.schema if c.is_continuous] + \
                  [c for c in self.schema if not c.is_continuous]
        for c in ordered:
            if c.is_continuous:
                if c.name not in self.models:
                    raise TransformerError(f"no fitted mixture for column {c.name!r}")
                width = 1 + self.models[c.name].n_modes
            else:
                width = len(c.categories)
            blocks.append(ColumnBlock(c.name, c.kind, off, width))
            off += width
        self.blocks = tuple(blocks)
        self.cond_layout = ConditionLayout.from_schema(self.schema)

    @classmethod
    def fit(cls, table: SampleTable, max_modes: int = MAX_MODES,
            weight_threshold: float = WEIGHT_THRESHOLD, seed: int = 0) -> "DataTransformer":
        models = {}
        for j, c in enumerate(table.schema):
            if not c.is_continuous:
                continue
            values = table.rows[:, j]
            k = max(1, min(max_modes, len(values) // 2))
            models[c.name] = fit_vgm(values, k, weight_threshold, seed=seed + 7919 * j, column=c.name)
        return cls(table.schema, models)

    @property
    def width(self) -> int:
        return sum(b.width for b in self.blocks)

    def block(self, name: str) -> ColumnBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def encode(self, table: SampleTable) -> np.ndarray:
        if table.schema != self.schema:
            raise TransformerError("table schema does not match the fitted transformer")
        out = np.zeros((len(table), self.width))
        rows = np.arange(len(table))
        for b in self.blocks:
            values = table.column(b.name)
            if b.kind == "continuous":
                k, beta = normalize_values(self.models[b.name], values)
                out[:, b.offset] = beta
                out[rows, b.offset + 1 + k] = 1.0
            else:
                out[rows, b.offset + values.astype(np.int64)] = 1.0
        return out

    def encode_row(self, row) -> np.ndarray:
        return self.encode(SampleTable(self.schema, np.asarray(row, dtype=np.float64)[None, :]))[0]

    def decode(self, encoded) -> SampleTable:
        encoded = np.asarray(encoded, dtype=np.float64)
        if encoded.ndim != 2 or encoded.shape[1] != self.width:
            raise TransformerError(
                f"encoded width {encoded.shape[-1]} does not match layout width {self.width}")
        out = np.zeros((encoded.shape[0], len(self.schema)))
        col = {c.name: j for j, c in enumerate(self.schema)}
        for b in self.blocks:
            k = np.argmax(encoded[:, b.onehot_slice], axis=1)
            if b.kind == "continuous":
                beta = np.clip(encoded[:, b.offset], -1.0, 1.0)
                out[:, col[b.name]] = denormalize_values(self.models[b.name], k, beta)
            else:
                out[:, col[b.name]] = k
        return SampleTable(self.schema, out)

    def decode_row(self, encoded) -> np.ndarray:
        return self.decode(np.asarray(encoded, dtype=np.float64)[None, :]).rows[0]

    def condition_blocks_in_output(self) -> list[tuple[CondBlock, ColumnBlock]]:
        """Pairs (condition block, matching categorical block of the encoded row)."""
        return [(cb, self.block(cb.name)) for cb in self.cond_layout.blocks]

    def to_dict(self) -> dict:
        return {
            "format": "tsgen-transformer",
            "version": FORMAT_VERSION,
            "schema": [c.to_dict() for c in self.schema],
            "models": [self.models[c.name].to_dict() for c in self.schema if c.is_continuous],
            "layout": [[b.name, b.kind, b.offset, b.width] for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataTransformer":
        if d.get("format") != "tsgen-transformer" or d.get("version") != FORMAT_VERSION:
            raise TransformerError("not a supported transformer file")
        schema = tuple(ColumnSchema.from_dict(c) for c in d["schema"])
        models = {m["column"]: GmmColumnModel.from_dict(m) for m in d["models"]}
        tr = cls(schema, models)
        if [[b.name, b.kind, b.offset, b.width] for b in tr.blocks] != d["layout"]:
            raise TransformerError("stored layout disagrees with the stored models")
        return tr

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DataTransformer":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
