"""One-hidden-layer ReLU classifier trained with Adam on cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericalError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class MLPConfig:
    hidden: int = 200
    max_iter: int = 500
    learning_rate: float = 1e-3
    batch_size: int = 200
    alpha: float = 1e-4  # L2 penalty
    tol: float = 1e-4
    n_iter_no_change: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(params, X, y, alpha=0.0):
    """Mean cross-entropy plus ``alpha/2 * ||W||^2 / n`` and its gradients."""
    W1, b1, W2, b2 = params
    n = X.shape[0]
    pre = X @ W1 + b1
    h = np.maximum(pre, 0.0)
    logits = h @ W2 + b2
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), y].mean()
    loss += 0.5 * alpha * ((W1 ** 2).sum() + (W2 ** 2).sum()) / n
    d_logits = np.exp(logp)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    gW2 = h.T @ d_logits + alpha * W2 / n
    gb2 = d_logits.sum(axis=0)
    dh = (d_logits @ W2.T) * (pre > 0)
    gW1 = X.T @ dh + alpha * W1 / n
    gb1 = dh.sum(axis=0)
    return float(loss), [gW1, gb1, gW2, gb2]


def init_params(n_in, hidden, n_out, rng):
    # Glorot-uniform weights, zero biases
    def glorot(a, b):
        lim = np.sqrt(6.0 / (a + b))
        return rng.uniform(-lim, lim, size=(a, b))
    return [glorot(n_in, hidden), np.zeros(hidden), glorot(hidden, n_out), np.zeros(n_out)]


class MLPClassifier:
    def __init__(self, config: MLPConfig = MLPConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        self.params = None
        self.mean = None
        self.scale = None
        self.n_classes = 0
        self.loss_curve: list[float] = []

    def fit(self, X, y, n_classes: int | None = None) -> "MLPClassifier":
        cfg = self.config
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = X.shape[0]
        if n == 0:
            raise ValueError("cannot fit on zero rows")
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise NumericalError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
        self.n_classes = int(n_classes or y.max() + 1)
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale = np.where(std > 0, std, 1.0)
        Z = (X - self.mean) / self.scale
        rng = np.random.default_rng(self.seed)
        params = init_params(X.shape[1], cfg.hidden, self.n_classes, rng)
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        batch = min(cfg.batch_size, n)
        step = 0
        best, stall = np.inf, 0
        self.loss_curve = []
        for epoch in range(cfg.max_iter):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                loss, grads = loss_and_grads(params, Z[idx], y[idx], cfg.alpha)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
                total += loss * idx.size
                step += 1
                for p, g, mi, vi in zip(params, grads, m, v):
                    mi *= cfg.beta1
                    mi += (1 - cfg.beta1) * g
                    vi *= cfg.beta2
                    vi += (1 - cfg.beta2) * g * g
                    mhat = mi / (1 - cfg.beta1 ** step)
                    vhat = vi / (1 - cfg.beta2 ** step)
                    p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
            epoch_loss = total / n
            self.loss_curve.append(epoch_loss)
            if epoch_loss > best - cfg.tol:
                stall += 1
                if stall >= cfg.n_iter_no_change:
                    break
            else:
                stall = 0
            best = min(best, epoch_loss)
        self.params = params
        return self

    def predict_proba(self, X) -> np.ndarray:
        W1, b1, W2, b2 = self.params
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return _softmax(np.maximum(Z @ W1 + b1, 0.0) @ W2 + b2)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def fit_mlp_classifier(train, hidden: int = 200, max_iter: int = 500, seed: int = 0,
                       config: MLPConfig | None = None) -> MLPClassifier:
    """Fit on the continuous feature columns and label of a SampleTable."""
    cfg = config or MLPConfig()
    cfg = MLPConfig(**{**cfg.__dict__, "hidden": hidden, "max_iter": max_iter})
    n_classes = len(train.label_column.categories)
    return MLPClassifier(cfg, seed).fit(train.feature_matrix(), train.labels(), n_classes)


def gradient_check(n_in=3, hidden=4, n_classes=2, n=10, alpha=1e-2, seed=0, h=1e-6) -> float:
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n_in))
    y = rng.integers(n_classes, size=n)
    params = init_params(n_in, hidden, n_classes, rng)
    params[1] = rng.normal(scale=0.1, size=hidden)
    params[3] = rng.normal(scale=0.1, size=n_classes)
    _, grads = loss_and_grads(params, X, y, alpha)
    worst = 0.0
    for p, g in zip(params, grads):
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + h
            up, _ = loss_and_grads(params, X, y, alpha)
            p[i] = orig - h
            down, _ = loss_and_grads(params, X, y, alpha)
            p[i] = orig
            fd = (up - down) / (2 * h)
            err = abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-4)
            worst = max(worst, err)
    return worst
