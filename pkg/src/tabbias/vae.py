"""Mixed-type tabular VAE with a Gaussian-mixture latent sampler.

Continuous groups are modelled as Gaussians with a learned per-dimension
log-variance, categorical groups with a softmax, and missingness indicators
with a Bernoulli. The loss is the negative ELBO per row, with the
reparameterization noise passed in by the caller so that the loss is a
deterministic function of its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .diffcore import (
    AdamState,
    MlpSpec,
    NonFiniteLossError,
    ParamSet,
    adam_step,
    init_params,
    loss_and_grad,
    mlp_forward,
)
from .diffcore import autodiff as ad
from .gmm import GmmModel, fit_gmm
from .schema import EncodedMatrix, Group

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 10
    hidden_size: int = 256
    depth: int = 2
    max_epochs: int = 500
    batch_size: int = 128
    patience: int = 30
    learning_rate: float = 1e-3
    hidden_activation: str = "relu"
    gmm_components: int = 10
    val_fraction: float = 0.1
    continuous_output: str = "mean"  # or "sample": add the learned observation noise

    def __post_init__(self):
        for name in ("latent_dim", "hidden_size", "depth", "batch_size", "patience", "gmm_components"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_epochs < 0 or self.learning_rate <= 0:
            raise ValueError("max_epochs must be >= 0 and learning_rate > 0")
        if self.max_epochs and self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.continuous_output not in ("mean", "sample"):
            raise ValueError("continuous_output must be 'mean' or 'sample'")

    def replace(self, **changes) -> VaeConfig:
        return VaeConfig(**{**asdict(self), **changes})


class VaeArchitecture:
    """Network shapes and index bookkeeping for one (group_map, config) pair."""

    def __init__(self, group_map: Sequence[Group], config: VaeConfig):
        self.group_map = tuple(Group(*g) for g in group_map)
        self.config = config
        self.width = sum(g.width for g in self.group_map)
        h, L = config.hidden_size, config.latent_dim
        act = config.hidden_activation
        self.encoder = MlpSpec((self.width,) + (h,) * config.depth + (2 * L,), act)
        self.decoder = MlpSpec((L,) + (h,) * config.depth + (self.width,), act)
        self.continuous = np.array(
            [g.start for g in self.group_map if g.kind == "continuous"], dtype=np.int64
        )
        self.indicators = np.array(
            [g.start for g in self.group_map if g.kind == "missing"], dtype=np.int64
        )
        self.categorical = [g for g in self.group_map if g.kind == "categorical"]

    def init(self, seed: int) -> ParamSet:
        nets = init_params({"enc": self.encoder, "dec": self.decoder}, seed)
        logvar = ParamSet.from_arrays({"dec.logvar": np.zeros(self.continuous.size)})
        return ParamSet.concat(nets, logvar)

    def encode_tensors(self, params, x):
        out = mlp_forward(self.encoder, params, x, prefix="enc")
        L = self.config.latent_dim
        return out[:, :L], out[:, L:]

    def decode_tensors(self, params, z):
        return mlp_forward(self.decoder, params, z, prefix="dec")

    def neg_elbo(self, params: Mapping[str, ad.Tensor], x: np.ndarray, noise: np.ndarray):
        """Per-row negative ELBO, as a length-n tensor."""
        mu, logvar = self.encode_tensors(params, x)
        z = mu + ad.exp(0.5 * logvar) * noise
        out = self.decode_tensors(params, z)
        recon = reconstruction_nll(self, params, out, x)
        kl = gaussian_kl(mu, logvar)
        return recon + kl


def gaussian_kl(mu, logvar):
    """Closed-form KL(N(mu, exp(logvar)) || N(0, I)) per row."""
    return 0.5 * (mu * mu + ad.exp(logvar) - logvar - 1.0).sum(axis=1)


def reconstruction_nll(arch: VaeArchitecture, params, out, x: np.ndarray):
    n = x.shape[0]
    total = ad.Tensor(np.zeros(n))
    if arch.continuous.size:
        mean = out[:, arch.continuous]
        lv = params["dec.logvar"]
        resid = x[:, arch.continuous] - mean
        nll = HALF_LOG_2PI + 0.5 * lv + 0.5 * resid * resid * ad.exp(-lv)
        total = total + nll.sum(axis=1)
    for g in arch.categorical:
        logits = out[:, g.start : g.stop]
        target = x[:, g.start : g.stop]
        ce = ad.logsumexp(logits, axis=1).reshape(n) - (logits * target).sum(axis=1)
        total = total + ce
    if arch.indicators.size:
        logits = out[:, arch.indicators]
        bce = ad.softplus(logits) - logits * x[:, arch.indicators]
        total = total + bce.sum(axis=1)
    return total


def elbo_loss(arch: VaeArchitecture, params, batch: np.ndarray, noise: np.ndarray):
    """Mean negative ELBO (nats per row).

    With a ParamSet this returns a float; with a mapping of tensors it
    returns a differentiable scalar tensor.
    """
    batch = np.asarray(batch, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != arch.width:
        raise ValueError(f"batch must have {arch.width} columns")
    if noise.shape != (batch.shape[0], arch.config.latent_dim):
        raise ValueError(f"noise must have shape {(batch.shape[0], arch.config.latent_dim)}")
    if isinstance(params, ParamSet):
        with ad.no_grad():
            return float(arch.neg_elbo(params.tensors(False), batch, noise).mean().data)
    return arch.neg_elbo(params, batch, noise).mean()


def make_loss_fn(arch: VaeArchitecture):
    """Loss callable for :func:`loss_and_grad`; the batch is ``(rows, noise)``."""

    def loss_fn(tensors, batch):
        x, noise = batch
        return arch.neg_elbo(tensors, x, noise).mean()

    return loss_fn


@dataclass
class TrainedVae:
    config: VaeConfig
    group_map: tuple[Group, ...]
    params: ParamSet
    best_val_loss: float
    train_curve: list[tuple[float, float]] = field(default_factory=list)
    seed: int = 0
    best_epoch: int = 0

    @property
    def arch(self) -> VaeArchitecture:
        return VaeArchitecture(self.group_map, self.config)

    @property
    def val_curve(self) -> list[float]:
        return [v for _, v in self.train_curve]


def split_train_val(n_rows: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/validation index split used by :func:`train_vae`."""
    if n_rows < 2:
        raise ValueError("need at least 2 rows to split into train and validation")
    perm = np.random.default_rng([seed, 0x5EED]).permutation(n_rows)
    n_val = min(max(1, int(round(val_fraction * n_rows))), n_rows - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_vae(
    data: EncodedMatrix,
    config: VaeConfig,
    seed: int,
    init: ParamSet | None = None,
) -> TrainedVae:
    """Train with Adam and early stopping, returning the best-validation parameters.

    The validation loss is evaluated before the first epoch too, so a model
    that never improves comes back unchanged.
    """
    arch = VaeArchitecture(data.group_map, config)
    params = arch.init(seed) if init is None else init
    if init is not None and not params.compatible(arch.init(0)):
        raise ValueError("initial parameters do not match the architecture")
    train_idx, val_idx = split_train_val(data.n_rows, config.val_fraction, seed)
    x_train, x_val = data.values[train_idx], data.values[val_idx]
    rng = np.random.default_rng([seed, 0xADA])
    val_noise = rng.standard_normal((x_val.shape[0], config.latent_dim))
    batch_size = config.batch_size
    if x_train.shape[0] < 2 * batch_size:
        batch_size = max(1, math.ceil(x_train.shape[0] / 2))
    loss_fn = make_loss_fn(arch)

    def val_loss(p: ParamSet) -> float:
        v = elbo_loss(arch, p, x_val, val_noise)
        if not np.isfinite(v):
            raise NonFiniteLossError(f"validation loss is not finite ({v})")
        return v

    best = val_loss(params)
    best_params, best_epoch = params, 0
    curve = [(math.nan, best)]
    state = AdamState.zeros_like(params, lr=config.learning_rate)
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(x_train.shape[0])
        losses = []
        for step, start in enumerate(range(0, order.size, batch_size)):
            xb = x_train[order[start : start + batch_size]]
            noise = rng.standard_normal((xb.shape[0], config.latent_dim))
            try:
                loss, g = loss_and_grad(loss_fn, params, (xb, noise))
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"epoch {epoch}, step {step}: {exc}") from None
            params, state = adam_step(state, params, g)
            losses.append(loss)
        v = val_loss(params)
        curve.append((float(np.mean(losses)), v))
        if v < best:
            best, best_params, best_epoch, stale = v, params, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return TrainedVae(config, arch.group_map, best_params, best, curve, seed, best_epoch)


def posterior_means(model: TrainedVae, data: EncodedMatrix | np.ndarray) -> np.ndarray:
    x = data.values if isinstance(data, EncodedMatrix) else np.asarray(data, dtype=np.float64)
    arch = model.arch
    with ad.no_grad():
        mu, _ = arch.encode_tensors(model.params.tensors(False), x)
    return mu.data


def fit_latent_gmm(
    model: TrainedVae, data: EncodedMatrix, k: int | None = None, seed: int = 0
) -> GmmModel:
    """Fit the latent sampler on the posterior means of ``data``."""
    if data.n_rows == 0:
        raise ValueError("cannot fit a latent mixture on empty data")
    k = model.config.gmm_components if k is None else k
    return fit_gmm(posterior_means(model, data), min(k, data.n_rows), seed=seed)


def decoder_outputs(model: TrainedVae, z: np.ndarray) -> np.ndarray:
    arch = model.arch
    with ad.no_grad():
        return arch.decode_tensors(model.params.tensors(False), np.asarray(z, dtype=np.float64)).data


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def outputs_to_rows(
    group_map: Sequence[Group],
    out: np.ndarray,
    rng: np.random.Generator,
    logvar: np.ndarray | None = None,
) -> np.ndarray:
    """Turn decoder outputs into encoded rows.

    Continuous dims keep the decoder mean, plus Gaussian noise with the
    learned per-dim log-variance when ``logvar`` is given; categorical
    groups are sampled from their softmax by inverse-CDF lookup;
    indicators are Bernoulli draws.
    """
    n = out.shape[0]
    rows = np.zeros_like(out)
    for g in group_map:
        if g.kind == "continuous":
            rows[:, g.start] = out[:, g.start]
        elif g.kind == "missing":
            p = 1.0 / (1.0 + np.exp(-out[:, g.start]))
            rows[:, g.start] = rng.random(n) < p
        else:
            cdf = np.cumsum(softmax(out[:, g.start : g.stop]), axis=1)
            u = rng.random(n)[:, None]
            pick = np.minimum((u > cdf).sum(axis=1), g.width - 1)
            rows[np.arange(n), g.start + pick] = 1.0
    if logvar is not None:
        cont = np.array([g.start for g in group_map if g.kind == "continuous"], dtype=np.int64)
        rows[:, cont] += np.exp(0.5 * logvar) * rng.standard_normal((n, cont.size))
    return rows


def generate(model: TrainedVae, gmm: GmmModel, n: int, seed: int) -> EncodedMatrix:
    """Draw ``n`` synthetic encoded rows; a pure function of its inputs."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    z = gmm.sample(n, rng)
    logvar = None
    if model.config.continuous_output == "sample":
        logvar = model.params.arrays()["dec.logvar"]
    rows = outputs_to_rows(model.group_map, decoder_outputs(model, z), rng, logvar)
    return EncodedMatrix(rows, model.group_map)


class VaeSampler:
    """Callable ``(n, seed) -> ndarray`` view of a trained VAE and its mixture."""

    def __init__(self, model: TrainedVae, gmm: GmmModel):
        self.model, self.gmm = model, gmm

    def __call__(self, n: int, seed: int) -> np.ndarray:
        return generate(self.model, self.gmm, n, seed).values


# -- persistence --------------------------------------------------------------


def save_vae(model: TrainedVae, gmm: GmmModel | None, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model.params.save(directory / "params.bin")
    sidecar = {
        "format": "tabbias-vae/1",
        "config": asdict(model.config),
        "group_map": [list(g) for g in model.group_map],
        "seed": model.seed,
        "best_val_loss": model.best_val_loss,
        "best_epoch": model.best_epoch,
        "train_curve": [[None if math.isnan(a) else a, b] for a, b in model.train_curve],
        "gmm": None if gmm is None else gmm.to_dict(),
    }
    (directory / "model.json").write_text(json.dumps(sidecar, indent=1) + "\n")


def load_vae(directory) -> tuple[TrainedVae, GmmModel | None]:
    directory = Path(directory)
    side = json.loads((directory / "model.json").read_text())
    model = TrainedVae(
        config=VaeConfig(**side["config"]),
        group_map=tuple(Group(*g) for g in side["group_map"]),
        params=ParamSet.load(directory / "params.bin"),
        best_val_loss=side["best_val_loss"],
        train_curve=[(math.nan if a is None else a, b) for a, b in side["train_curve"]],
        seed=side["seed"],
        best_epoch=side.get("best_epoch", 0),
    )
    gmm = None if side["gmm"] is None else GmmModel.from_dict(side["gmm"])
    return model, gmm
