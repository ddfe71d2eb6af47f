"""Conditional tabular GAN over mode-normalized rows.

The generator maps ``z ⊕ cond`` through two dense layers (batch norm + ReLU)
to one head per encoded block: ``tanh`` for every beta scalar and a softmax
over every one-hot block. The critic sees ``row ⊕ cond`` through two dense
layers with leaky ReLU and dropout. Training alternates one critic step
(Wasserstein loss with gradient penalty) and one generator step (Wasserstein
loss plus cross-entropy pulling the generated condition columns onto the
requested condition).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .dataset import SampleTable
from .transform import ConditionLayout, ConditionSampler, DataTransformer

log = logging.getLogger(__name__)

MODEL_FORMAT = "tsgen-ctgan"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    pass


class ModelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int = 128
    hidden: int = 256
    batch_size: int = 500
    epochs: int = 300
    lr: float = 2e-4
    gp_weight: float = 10.0
    dropout: float = 0.5
    tau: float = 0.2
    seed: int = 0
    loss: str = "wgan-gp"  # or "minimax"
    weight_decay: float = 1e-6

    def __post_init__(self):
        for name in ("latent_dim", "hidden", "batch_size", "lr", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be non-negative")
        if self.loss not in ("wgan-gp", "minimax"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class OutputSpan:
    start: int
    stop: int
    activation: str  # "tanh" or "softmax"


def output_spans(transformer: DataTransformer) -> list[OutputSpan]:
    spans = []
    for b in transformer.blocks:
        if b.kind == "continuous":
            spans.append(OutputSpan(b.offset, b.offset + 1, "tanh"))
            spans.append(OutputSpan(b.offset + 1, b.offset + b.width, "softmax"))
        else:
            spans.append(OutputSpan(b.offset, b.offset + b.width, "softmax"))
    return spans


def condition_spans(transformer: DataTransformer) -> list[tuple[slice, slice]]:
    """(slice of the generated row, slice of the condition vector) per condition block."""
    return [(ob.onehot_slice, cb.slice) for cb, ob in transformer.condition_blocks_in_output()]


_ACTIVATIONS = {"relu": nn.ReLU, "tanh": nn.Tanh, "linear": nn.Identity,
                "leaky_relu": lambda: nn.LeakyReLU(0.2)}


class Generator(nn.Module):
    def __init__(self, latent_dim, cond_dim, hidden, spans, n_layers=2,
                 activation="relu", batch_norm=True):
        super().__init__()
        self.latent_dim, self.cond_dim = latent_dim, cond_dim
        self.spans = list(spans)
        self.out_dim = self.spans[-1].stop if self.spans else 0
        layers, dim = [], latent_dim + cond_dim
        for _ in range(n_layers):
            layers.append(nn.Linear(dim, hidden))
            if batch_norm:
                layers.append(nn.BatchNorm1d(hidden))
            layers.append(_ACTIVATIONS[activation]())
            dim = hidden
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(dim, self.out_dim)

    def logits(self, z, cond):
        return self.head(self.body(torch.cat([z, cond], dim=1)))

    def activate(self, logits, mode="train", tau=0.2, gumbel=None, rng=None):
        """Apply the per-block heads.

        ``train`` uses Gumbel-softmax at temperature ``tau`` (noise from
        ``gumbel`` if given, else drawn with ``rng``); ``sample`` emits hard
        one-hots.
        """
        parts = []
        if mode == "train" and gumbel is None:
            u = torch.rand(logits.shape, generator=rng, dtype=logits.dtype)
            gumbel = -torch.log((-torch.log(u.clamp_min(1e-20))).clamp_min(1e-20))
        for sp in self.spans:
            x = logits[:, sp.start:sp.stop]
            if sp.activation == "tanh":
                parts.append(torch.tanh(x))
            elif mode == "train":
                parts.append(F.softmax((x + gumbel[:, sp.start:sp.stop]) / tau, dim=1))
            else:
                idx = x.argmax(dim=1, keepdim=True)
                parts.append(torch.zeros_like(x).scatter_(1, idx, 1.0))
        return torch.cat(parts, dim=1)


class Discriminator(nn.Module):
    def __init__(self, data_dim, cond_dim, hidden, dropout=0.5, n_layers=2,
                 activation="leaky_relu"):
        super().__init__()
        self.data_dim, self.cond_dim = data_dim, cond_dim
        layers, dim = [], data_dim + cond_dim
        for _ in range(n_layers):
            layers += [nn.Linear(dim, hidden), _ACTIVATIONS[activation]()]
            if dropout > 0:
                layers.append(nn.Dropout(dropout))
            dim = hidden
        layers.append(nn.Linear(dim, 1))
        self.seq = nn.Sequential(*layers)

    def forward(self, x):
        return self.seq(x).squeeze(1)


def generator_forward(net: Generator, z, cond, mode="train", tau=0.2, rng=None, gumbel=None):
    """Returns ``(activations, logits)``; ``sample`` mode freezes batch-norm statistics."""
    if z.shape[1] != net.latent_dim or cond.shape[1] != net.cond_dim or z.shape[0] != cond.shape[0]:
        raise ValueError(
            f"generator expects z ({z.shape[0]}, {net.latent_dim}) and cond (n, {net.cond_dim}); "
            f"got {tuple(z.shape)} and {tuple(cond.shape)}")
    net.train(mode == "train")
    logits = net.logits(z, cond)
    return net.activate(logits, mode, tau, gumbel=gumbel, rng=rng), logits


def discriminator_forward(net: Discriminator, x, mode="eval"):
    if x.shape[1] != net.data_dim + net.cond_dim:
        raise ValueError(f"critic expects width {net.data_dim + net.cond_dim}, got {x.shape[1]}")
    net.train(mode == "train")
    return net(x)


def gradient_penalty(critic, real_in, fake_in, alpha):
    inter = (alpha * real_in + (1 - alpha) * fake_in).requires_grad_(True)
    score = critic(inter)
    grad, = torch.autograd.grad(score.sum(), inter, create_graph=True)
    return ((grad.norm(2, dim=1) - 1.0) ** 2).mean()


def discriminator_loss(critic, real, fake, cond, gp_weight=10.0, alpha=None, rng=None,
                       loss="wgan-gp"):
    """Critic objective on equal-sized real and fake batches paired with ``cond``."""
    if real.shape != fake.shape:
        raise ValueError("real and fake batches must have the same shape")
    real_in = torch.cat([real, cond], dim=1)
    fake_in = torch.cat([fake, cond], dim=1)
    s_real, s_fake = critic(real_in), critic(fake_in)
    if loss == "minimax":
        return F.softplus(-s_real).mean() + F.softplus(s_fake).mean()
    value = s_fake.mean() - s_real.mean()
    if gp_weight > 0:
        if alpha is None:
            alpha = torch.rand(real.shape[0], 1, generator=rng, dtype=real.dtype)
        value = value + gp_weight * gradient_penalty(critic, real_in, fake_in, alpha)
    return value


def condition_cross_entropy(logits, cond, cond_spans) -> torch.Tensor:
    """Sum over condition blocks of the batch-mean cross-entropy against the requested category."""
    total = logits.new_zeros(())
    for out_sl, cond_sl in cond_spans:
        target = cond[:, cond_sl].argmax(dim=1)
        total = total + F.cross_entropy(logits[:, out_sl], target)
    return total


def generator_loss(critic, fake, logits, cond, cond_spans, loss="wgan-gp"):
    score = critic(torch.cat([fake, cond], dim=1))
    adv = F.softplus(-score).mean() if loss == "minimax" else -score.mean()
    return adv + condition_cross_entropy(logits, cond, cond_spans)


# --------------------------------------------------------------------------
# Model container
# --------------------------------------------------------------------------

@dataclass(eq=False)
class CTGANModel:
    generator: Generator
    critic: Discriminator
    transformer: DataTransformer
    config: TrainConfig
    condition_codes: np.ndarray  # (n_train, n_blocks) category indices seen in training
    history: list = field(default_factory=list)

    @property
    def cond_layout(self) -> ConditionLayout:
        return self.transformer.cond_layout

    @property
    def fingerprint(self) -> str:
        return self.transformer.fingerprint()

    def save(self, path) -> None:
        payload = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": asdict(self.config),
            "generator": self.generator.state_dict(),
            "critic": self.critic.state_dict(),
            "transformer": self.transformer.to_dict(),
            "fingerprint": self.fingerprint,
            "condition_codes": torch.as_tensor(self.condition_codes, dtype=torch.int64),
            "history": [list(map(float, h)) for h in self.history],
        }
        torch.save(payload, Path(path))

    @classmethod
    def load(cls, path) -> "CTGANModel":
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
        if payload.get("format") != MODEL_FORMAT or payload.get("version") != MODEL_VERSION:
            raise ModelMismatchError(f"{path} is not a supported model file")
        transformer = DataTransformer.from_dict(payload["transformer"])
        if transformer.fingerprint() != payload["fingerprint"]:
            raise ModelMismatchError("embedded transformer does not match its fingerprint")
        cfg = TrainConfig(**payload["config"])
        gen, critic = _build_nets(transformer, cfg)
        gen.load_state_dict(payload["generator"])
        critic.load_state_dict(payload["critic"])
        return cls(gen, critic, transformer, cfg, payload["condition_codes"].numpy(),
                   [tuple(h) for h in payload["history"]])


def _build_nets(transformer, cfg):
    spans = output_spans(transformer)
    cdim = transformer.cond_layout.width
    gen = Generator(cfg.latent_dim, cdim, cfg.hidden, spans)
    critic = Discriminator(transformer.width, cdim, cfg.hidden, cfg.dropout)
    return gen, critic


def train(table: SampleTable, cfg: TrainConfig | None = None,
          transformer: DataTransformer | None = None, log_every: int = 0) -> CTGANModel:
    """Fit the conditional GAN on ``table``.

    ``history`` holds one ``(critic_loss, generator_loss)`` pair per epoch
    (means over that epoch's steps).
    """
    cfg = cfg or TrainConfig()
    if len(table) == 0:
        raise ValueError("cannot train on an empty table")
    if transformer is None:
        transformer = DataTransformer.fit(table, seed=cfg.seed)
    data = torch.as_tensor(transformer.encode(table), dtype=torch.float32)
    sampler = ConditionSampler.from_table(table, transformer.cond_layout)
    cspans = condition_spans(transformer)

    torch.manual_seed(cfg.seed)
    noise = torch.Generator().manual_seed(cfg.seed + 1)
    np_rng = np.random.default_rng(cfg.seed)
    gen, critic = _build_nets(transformer, cfg)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr, betas=(0.5, 0.9),
                             weight_decay=cfg.weight_decay)
    opt_d = torch.optim.Adam(critic.parameters(), lr=cfg.lr, betas=(0.5, 0.9),
                             weight_decay=cfg.weight_decay)

    batch = min(cfg.batch_size, len(table))
    batch = max(batch - batch % 2, 2) if len(table) >= 2 else len(table)
    steps = max(1, len(table) // batch)
    history = []
    for epoch in range(cfg.epochs):
        d_sum = g_sum = 0.0
        for _ in range(steps):
            cond_np, rows = sampler.sample(batch, np_rng)
            cond = torch.as_tensor(cond_np, dtype=torch.float32)
            real = data[rows]
            z = torch.randn(batch, cfg.latent_dim, generator=noise)
            fake, _ = generator_forward(gen, z, cond, "train", cfg.tau, rng=noise)
            critic.train()
            d_loss = discriminator_loss(critic, real, fake.detach(), cond, cfg.gp_weight,
                                        rng=noise, loss=cfg.loss)
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

            cond_np, _ = sampler.sample(batch, np_rng)
            cond = torch.as_tensor(cond_np, dtype=torch.float32)
            z = torch.randn(batch, cfg.latent_dim, generator=noise)
            fake, logits = generator_forward(gen, z, cond, "train", cfg.tau, rng=noise)
            g_loss = generator_loss(critic, fake, logits, cond, cspans, loss=cfg.loss)
            opt_g.zero_grad(set_to_none=True)
            g_loss.backward()
            opt_g.step()

            dl, gl = float(d_loss.detach()), float(g_loss.detach())
            if not (np.isfinite(dl) and np.isfinite(gl)):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}: critic {dl}, generator {gl}; "
                    f"last real batch mean {float(real.mean()):.4g} std {float(real.std()):.4g}, "
                    f"fake mean {float(fake.mean()):.4g} std {float(fake.std()):.4g}")
            d_sum += dl
            g_sum += gl
        history.append((d_sum / steps, g_sum / steps))
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d  critic %.4f  generator %.4f", epoch + 1, *history[-1])
    gen.eval()
    critic.eval()
    return CTGANModel(gen, critic, transformer, cfg, sampler.codes.copy(), history)


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

def _condition_codes(model: CTGANModel, n: int, fixed: dict[int, int], rng) -> np.ndarray:
    """Per-row category indices for every condition block.

    Fixed blocks keep their category; free blocks copy a uniformly drawn
    training row that matches the fixed ones, so they follow the training
    frequencies. When no training row matches, each free block is drawn from
    its marginal training frequency.
    """
    layout = model.cond_layout
    codes = model.condition_codes
    match = np.ones(len(codes), dtype=bool)
    for j, k in fixed.items():
        match &= codes[:, j] == k
    rows = np.flatnonzero(match)
    if rows.size:
        out = codes[rows[rng.integers(rows.size, size=n)]].copy()
    else:
        out = np.empty((n, len(layout.blocks)), dtype=np.int64)
        for j, b in enumerate(layout.blocks):
            freq = np.bincount(codes[:, j], minlength=b.width).astype(np.float64)
            out[:, j] = rng.choice(b.width, size=n, p=freq / freq.sum())
    for j, k in fixed.items():
        out[:, j] = k
    return out


def generate_samples(model: CTGANModel, n: int, condition: Mapping[str, str] | None = None,
                     seed: int = 0, transformer: DataTransformer | None = None,
                     batch_size: int = 2000, return_conditions: bool = False):
    """Draw ``n`` decoded rows, optionally fixing some condition blocks.

    ``condition`` maps condition column names (e.g. ``stability``,
    ``load_level``) to category labels.
    """
    if transformer is not None and transformer.fingerprint() != model.fingerprint:
        raise ModelMismatchError("transformer fingerprint does not match the model")
    tr = model.transformer
    layout = tr.cond_layout
    fixed = {}
    for name, value in (condition or {}).items():
        try:
            b = layout.block(name)
        except KeyError:
            raise KeyError(f"unknown condition column {name!r}") from None
        if str(value) not in b.categories:
            raise KeyError(f"{name}: unknown category {value!r}")
        fixed[layout.blocks.index(b)] = b.categories.index(str(value))
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    noise = torch.Generator().manual_seed(int(rng.integers(2**62)))
    codes = _condition_codes(model, n, fixed, rng)
    cond_all = layout.indices_to_matrix(codes)
    outs = []
    gen = model.generator
    with torch.no_grad():
        for start in range(0, n, batch_size):
            cond = torch.as_tensor(cond_all[start:start + batch_size], dtype=torch.float32)
            z = torch.randn(cond.shape[0], gen.latent_dim, generator=noise)
            act, _ = generator_forward(gen, z, cond, "sample")
            outs.append(act.double().numpy())
    encoded = np.vstack(outs) if outs else np.zeros((0, tr.width))
    table = tr.decode(encoded)
    return (table, codes) if return_conditions else table


# --------------------------------------------------------------------------
# Finite-difference gradient check
# --------------------------------------------------------------------------

def _tiny_layout():
    """Hand-built layout: one 2-mode continuous column and one 2-way condition column."""
    spans = [OutputSpan(0, 1, "tanh"), OutputSpan(1, 3, "softmax"), OutputSpan(3, 5, "softmax")]
    cond_spans = [(slice(3, 5), slice(0, 2))]
    return spans, cond_spans, 5, 2


def _flat_grad(loss_fn, params):
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    return torch.cat([g.reshape(-1) for g in grads])


def _fd_grad(loss_fn, params, h):
    out = []
    for p in params:
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            out.append((up - down) / (2 * h))
    return torch.tensor(out, dtype=torch.float64)


def _rel_error(a, b, floor=1e-4):
    # gradients below ``floor`` in magnitude are compared on an absolute scale,
    # since central differences carry ~1e-11 roundoff even for exact zeros
    denom = torch.maximum(torch.maximum(a.abs(), b.abs()), torch.full_like(a, floor))
    return float(((a - b).abs() / denom).max()) if a.numel() else 0.0


def gradient_check(latent_dim=2, hidden=3, n_layers=2, activation="relu", batch_norm=True,
                   batch=6, seed=0, h=1e-5) -> dict:
    """Compare autograd gradients of both losses against central differences.

    Runs in float64 on a tiny hand-built layout. The critic runs without
    dropout and the Gumbel noise and interpolation weights are fixed so the
    losses are deterministic functions of the parameters.
    """
    torch.manual_seed(seed)
    spans, cspans, data_dim, cond_dim = _tiny_layout()
    crit_act = "leaky_relu" if activation == "relu" else activation
    gen = Generator(latent_dim, cond_dim, hidden, spans, n_layers, activation, batch_norm).double()
    critic = Discriminator(data_dim, cond_dim, hidden, 0.0, n_layers, crit_act).double()
    with torch.no_grad():
        for p in list(gen.parameters()) + list(critic.parameters()):
            p.uniform_(-0.8, 0.8)
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(batch, latent_dim, generator=g, dtype=torch.float64)
    labels = torch.arange(batch) % cond_dim
    cond = F.one_hot(labels, cond_dim).double()
    gumbel = -torch.log(-torch.log(torch.rand(batch, data_dim, generator=g, dtype=torch.float64)))
    real = torch.cat([torch.rand(batch, 1, generator=g, dtype=torch.float64) * 2 - 1,
                      F.one_hot(torch.randint(2, (batch,), generator=g), 2).double(),
                      cond.clone()], dim=1)
    alpha = torch.rand(batch, 1, generator=g, dtype=torch.float64)
    critic.eval()

    def fake_batch():
        gen.train()
        logits = gen.logits(z, cond)
        return gen.activate(logits, "train", 0.5, gumbel=gumbel), logits

    def d_loss():
        fake, _ = fake_batch()
        return discriminator_loss(critic, real, fake.detach(), cond, 10.0, alpha=alpha)

    def g_loss():
        fake, logits = fake_batch()
        return generator_loss(critic, fake, logits, cond, cspans)

    report = {}
    for name, fn, params in (("discriminator", d_loss, list(critic.parameters())),
                             ("generator", g_loss, list(gen.parameters()))):
        analytic = _flat_grad(fn, params)
        numeric = _fd_grad(fn, params, h)
        report[name] = {
            "max_rel_error": _rel_error(analytic, numeric),
            "n_checked": int(numeric.numel()),
            "n_params": int(sum(p.numel() for p in params)),
        }
    return report
