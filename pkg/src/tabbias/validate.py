"""Divergences between real and synthetic rows via a probabilistic classifier.

A discriminator trained to output D(x) = P(real | x) on balanced classes
gives the density ratio p(x)/q(x) = D/(1-D). From it:

    KL(p||q) ~ mean over real rows of ln(D / (1 - D))            (nats)
    JS(p, q) ~ 1 + mean_real(log2 D)/2 + mean_synth(log2(1-D))/2  (bits, in [0, 1])
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .diffcore import AdamState, MlpSpec, NonFiniteLossError, ParamSet, adam_step, init_params, loss_and_grad, mlp_forward
from .diffcore import autodiff as ad

EPS = 1e-6
KL_CEILING = math.log((1.0 - EPS) / EPS)
RELIABLE_M = 1000
RELIABLE_L = 500

# (n, seed) -> (n, D) array of synthetic encoded rows
Sampler = Callable[[int, int], np.ndarray]


@dataclass(frozen=True)
class DiscriminatorConfig:
    hidden: tuple[int, ...] = (128, 64)
    max_epochs: int = 300
    patience: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    val_fraction: float = 0.2


@dataclass
class Discriminator:
    spec: MlpSpec
    params: ParamSet
    epochs_run: int = 0
    val_accuracy: float = float("nan")
    val_loss: float = float("nan")

    def predict(self, x: np.ndarray) -> np.ndarray:
        """P(real | x), clamped to [EPS, 1 - EPS]."""
        with ad.no_grad():
            logits = mlp_forward(self._logit_spec, self.params, np.asarray(x, dtype=np.float64))
        p = 1.0 / (1.0 + np.exp(-np.clip(logits.reshape(-1), -700, 700)))
        return np.clip(p, EPS, 1.0 - EPS)

    @property
    def _logit_spec(self) -> MlpSpec:
        return MlpSpec(self.spec.layer_sizes, self.spec.hidden_activation, "identity")


def bce_loss(spec: MlpSpec):
    """Binary cross-entropy on logits; batch is ``(x, y)`` with y in {0, 1}."""

    def loss_fn(tensors, batch):
        x, y = batch
        logits = mlp_forward(spec, tensors, x).reshape(x.shape[0])
        return (ad.softplus(logits) - logits * y).mean()

    return loss_fn


def train_discriminator(
    real: np.ndarray,
    synth: np.ndarray,
    seed: int,
    config: DiscriminatorConfig = DiscriminatorConfig(),
) -> Discriminator:
    """Fit a real-vs-synthetic classifier (real = 1) with early stopping on held-out BCE."""
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if real.ndim != 2 or real.shape != synth.shape:
        raise ValueError(f"real and synthetic inputs must have equal 2-D shapes, got {real.shape} and {synth.shape}")
    spec = MlpSpec((real.shape[1],) + tuple(config.hidden) + (1,), "relu", "sigmoid")
    logit_spec = MlpSpec(spec.layer_sizes, "relu", "identity")
    x = np.concatenate([real, synth])
    y = np.concatenate([np.ones(len(real)), np.zeros(len(synth))])
    rng = np.random.default_rng(seed)
    # stratified split keeps the classes balanced in both parts
    n_val = max(1, int(round(config.val_fraction * len(real))))
    perm_r = rng.permutation(len(real))
    perm_s = rng.permutation(len(synth)) + len(real)
    val_idx = np.concatenate([perm_r[:n_val], perm_s[:n_val]])
    train_idx = np.concatenate([perm_r[n_val:], perm_s[n_val:]])
    if train_idx.size == 0:
        train_idx = val_idx
    xt, yt, xv, yv = x[train_idx], y[train_idx], x[val_idx], y[val_idx]

    params = init_params(logit_spec, seed)
    loss_fn = bce_loss(logit_spec)
    state = AdamState.zeros_like(params, lr=config.learning_rate)

    def evaluate(p):
        with ad.no_grad():
            logits = mlp_forward(logit_spec, p, xv).reshape(-1)
        loss = float(np.mean(np.logaddexp(0.0, logits) - logits * yv))
        acc = float(np.mean((logits > 0) == (yv > 0.5)))
        return loss, acc

    best_loss, best_acc = evaluate(params)
    best, stale, epochs = params, 0, 0
    for epoch in range(1, config.max_epochs + 1):
        epochs = epoch
        order = rng.permutation(xt.shape[0])
        for start in range(0, order.size, config.batch_size):
            sel = order[start : start + config.batch_size]
            _, g = loss_and_grad(loss_fn, params, (xt[sel], yt[sel]))
            params, state = adam_step(state, params, g)
        loss, acc = evaluate(params)
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"discriminator loss is not finite at epoch {epoch}")
        if loss < best_loss:
            best, best_loss, best_acc, stale = params, loss, acc, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return Discriminator(spec, best, epochs, best_acc, best_loss)


def estimate_kl(disc: Discriminator, real_l: np.ndarray) -> float:
    """KL(real || synthetic) in nats from the density ratio on real rows."""
    d = disc.predict(real_l)
    return float(np.mean(np.log(d) - np.log1p(-d)))


def js_from_probs(d_real: np.ndarray, d_synth: np.ndarray) -> float:
    raw = 1.0 + 0.5 * np.mean(np.log2(d_real)) + 0.5 * np.mean(np.log2(1.0 - d_synth))
    return float(raw)


def estimate_js(disc: Discriminator, real_l: np.ndarray, synth_l: np.ndarray, clamp: bool = True) -> float:
    """JS divergence in bits; clamped to [0, 1] unless ``clamp`` is False."""
    raw = js_from_probs(disc.predict(real_l), disc.predict(synth_l))
    return min(1.0, max(0.0, raw)) if clamp else raw


@dataclass
class DivergenceReport:
    js_mean: float
    js_std: float
    kl_mean: float
    kl_std: float
    m: int
    l: int
    repeats: int
    reliable: bool
    js_values: list[float] = field(default_factory=list)
    kl_values: list[float] = field(default_factory=list)
    js_raw_values: list[float] = field(default_factory=list)
    disc_val_accuracy: list[float] = field(default_factory=list)
    conventions: dict = field(
        default_factory=lambda: {
            "js_log_base": 2,
            "kl_log_base": "e",
            "clamp_eps": EPS,
            "std": "population (ddof=0) over repeats",
            "repeat_protocol": "fresh real carve, fresh synthetic draw and fresh discriminator seed per repeat",
        }
    )
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> DivergenceReport:
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> DivergenceReport:
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc.get("report", doc))


def is_reliable(m: int, l: int) -> bool:
    return m >= RELIABLE_M and l >= RELIABLE_L


def divergence_report(
    generator: Sampler,
    real_pool: np.ndarray,
    m: int,
    l: int,
    repeats: int = 5,
    seed: int = 0,
    config: DiscriminatorConfig = DiscriminatorConfig(),
) -> DivergenceReport:
    """KL/JS mean and std over ``repeats`` independent validation rounds.

    Each round carves ``m`` + ``l`` disjoint real rows from the pool, draws
    ``m`` + ``l`` fresh synthetic rows, trains a discriminator on the first
    parts and estimates both divergences on the second.
    """
    real_pool = np.asarray(getattr(real_pool, "values", real_pool), dtype=np.float64)
    if real_pool.shape[0] < m + l:
        raise ValueError(f"real pool has {real_pool.shape[0]} rows, need m + l = {m + l}")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    js, js_raw, kl, acc = [], [], [], []
    for r in range(repeats):
        rseed = int(np.random.SeedSequence([seed, r]).generate_state(1)[0])
        perm = np.random.default_rng(rseed).permutation(real_pool.shape[0])
        real_m, real_l = real_pool[perm[:m]], real_pool[perm[m : m + l]]
        synth = np.asarray(generator(m + l, rseed + 1), dtype=np.float64)
        synth_m, synth_l = synth[:m], synth[m:]
        disc = train_discriminator(real_m, synth_m, rseed + 2, config)
        raw = js_from_probs(disc.predict(real_l), disc.predict(synth_l))
        js_raw.append(raw)
        js.append(min(1.0, max(0.0, raw)))
        kl.append(estimate_kl(disc, real_l))
        acc.append(disc.val_accuracy)
    return DivergenceReport(
        js_mean=float(np.mean(js)),
        js_std=float(np.std(js)),
        kl_mean=float(np.mean(kl)),
        kl_std=float(np.std(kl)),
        m=m,
        l=l,
        repeats=repeats,
        reliable=is_reliable(m, l),
        js_values=js,
        kl_values=kl,
        js_raw_values=js_raw,
        disc_val_accuracy=acc,
    )


def resampler(pool: np.ndarray) -> Sampler:
    """A 'generator' that draws rows of ``pool`` with replacement."""
    pool = np.asarray(getattr(pool, "values", pool), dtype=np.float64)

    def sample(n: int, seed: int) -> np.ndarray:
        return pool[np.random.default_rng(seed).integers(0, pool.shape[0], size=n)]

    return sample
