"""Initial weights from a seed ensemble, and fine-tuning from them.

Four ways to build the starting point of the final VAE:

* pre-training on abundant rows sampled from the best seed's generator,
* averaging the ensemble members' weights,
* MAML over one task per seed (rows sampled from that seed's generator),
* DRS: ordinary training on all the tasks' rows pooled together.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .diffcore import NonFiniteLossError, ParamSet, ShapeMismatchError
from .diffcore import autodiff as ad
from .gmm import GmmModel
from .schema import EncodedMatrix
from .vae import (
    TrainedVae,
    VaeArchitecture,
    VaeConfig,
    fit_latent_gmm,
    generate,
    train_vae,
)


def derive_seed(*parts: int) -> int:
    """Stable 63-bit child seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0] >> np.uint64(1))


@dataclass
class SeedEnsemble:
    members: list[TrainedVae]
    data: EncodedMatrix
    gmms: list[GmmModel | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if m.config != first.config or m.group_map != first.group_map:
                raise ValueError("ensemble members must share config and group map")
            if not m.params.compatible(first.params):
                raise ShapeMismatchError("ensemble members have different parameter shapes")
        if not self.gmms:
            self.gmms = [None] * len(self.members)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def val_losses(self) -> list[float]:
        return [m.best_val_loss for m in self.members]

    def gmm(self, s: int) -> GmmModel:
        if self.gmms[s] is None:
            member = self.members[s]
            self.gmms[s] = fit_latent_gmm(member, self.data, seed=member.seed)
        return self.gmms[s]


def train_ensemble(data: EncodedMatrix, config: VaeConfig, seeds: Sequence[int]) -> SeedEnsemble:
    members = [train_vae(data, config, seed=s) for s in seeds]
    return SeedEnsemble(members, data)


def best_seed(ensemble: SeedEnsemble) -> int:
    """Index of the member with the lowest validation loss (first one on ties)."""
    return int(np.argmin(ensemble.val_losses))


def make_task_datasets(ensemble: SeedEnsemble, n_per_task: int, seed: int) -> list[EncodedMatrix]:
    """One synthetic dataset per member, sampled from that member's generator."""
    return [
        generate(member, ensemble.gmm(s), n_per_task, derive_seed(seed, s))
        for s, member in enumerate(ensemble.members)
    ]


def pretrain_bias(
    ensemble: SeedEnsemble, n_synth: int, config: VaeConfig, seed: int
) -> ParamSet:
    """Train a fresh VAE on ``n_synth`` rows from the best member; return its weights."""
    s = best_seed(ensemble)
    synth = generate(ensemble.members[s], ensemble.gmm(s), n_synth, derive_seed(seed, s))
    return train_vae(synth, config, seed).params


def average_bias(ensemble: SeedEnsemble | Sequence[ParamSet]) -> ParamSet:
    """Coordinate-wise mean of the members' flat parameter vectors."""
    params = [m.params for m in ensemble.members] if isinstance(ensemble, SeedEnsemble) else list(ensemble)
    if not params:
        raise ValueError("nothing to average")
    for p in params[1:]:
        if not p.compatible(params[0]):
            raise ShapeMismatchError("cannot average ParamSets with different shapes")
    return params[0].with_flat(np.mean(np.stack([p.flat for p in params]), axis=0))


def drs_bias(tasks: Sequence[EncodedMatrix], config: VaeConfig, seed: int) -> ParamSet:
    """Train a fresh VAE on all task rows concatenated in task order."""
    if not tasks:
        raise ValueError("DRS needs at least one task")
    return train_vae(EncodedMatrix.concat(tasks), config, seed).params


def fine_tune(theta0: ParamSet, real: EncodedMatrix, config: VaeConfig, seed: int) -> TrainedVae:
    """Continue training from ``theta0`` on real rows with a fresh optimizer."""
    return train_vae(real, config, seed, init=theta0)


# -- MAML ----------------------------------------------------------------------


@dataclass(frozen=True)
class MamlConfig:
    inner_lr: float = 1e-2
    outer_lr: float = 1e-3
    inner_steps: int = 5
    outer_iterations: int = 300
    meta_batch: int | None = None  # None means min(number of tasks, 5)
    first_order: bool = True
    task_split_fraction: float = 0.8
    inner_batch_size: int = 128

    def __post_init__(self):
        if self.inner_lr < 0 or self.outer_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be at least 1")
        if self.outer_iterations < 0:
            raise ValueError("outer_iterations must be >= 0")
        if not 0.0 < self.task_split_fraction < 1.0:
            raise ValueError("task_split_fraction must lie in (0, 1)")

    def batch_for(self, n_tasks: int) -> int:
        return min(n_tasks, 5) if self.meta_batch is None else min(self.meta_batch, n_tasks)


# A task loss maps (parameter tensors, batch) to a scalar tensor.
TaskLoss = Callable[[Mapping[str, ad.Tensor], object], ad.Tensor]


def adapt(
    loss_fn: TaskLoss,
    theta: Mapping[str, ad.Tensor],
    batches: Sequence,
    inner_lr: float,
    create_graph: bool,
) -> dict[str, ad.Tensor]:
    """Plain gradient steps from ``theta``, one per batch.

    With ``create_graph`` the adapted weights stay differentiable functions
    of ``theta`` (second-order MAML); otherwise each step is detached.
    """
    names = list(theta)
    omega = dict(theta)
    for batch in batches:
        loss = loss_fn(omega, batch)
        if not np.isfinite(loss.data):
            raise NonFiniteLossError(f"inner loss is not finite ({float(loss.data)})")
        grads = ad.grad(loss, [omega[n] for n in names], create_graph=create_graph)
        if create_graph:
            omega = {n: omega[n] - inner_lr * g for n, g in zip(names, grads)}
        else:
            omega = {
                n: ad.Tensor(omega[n].data - inner_lr * g.data, requires_grad=True)
                for n, g in zip(names, grads)
            }
    return omega


def maml_task_gradient(
    loss_fn: TaskLoss,
    params: ParamSet,
    train_batches: Sequence,
    val_batch,
    inner_lr: float,
    first_order: bool,
) -> tuple[float, ParamSet]:
    """Meta-validation loss after adaptation and its gradient for the outer step.

    First-order: the gradient at the adapted weights. Second-order: the
    exact gradient with respect to the initial weights, through every
    inner step.
    """
    theta = params.tensors(requires_grad=True)
    omega = adapt(loss_fn, theta, train_batches, inner_lr, create_graph=not first_order)
    loss = loss_fn(omega, val_batch)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"meta-validation loss is not finite ({value})")
    wrt = omega if first_order else theta
    grads = ad.grad(loss, [wrt[n] for n in params.names])
    return value, params.like_tensors(dict(zip(params.names, grads)))


def maml_outer_loss(
    loss_fn: TaskLoss,
    params: ParamSet,
    tasks: Sequence[tuple[Sequence, object]],
    inner_lr: float,
) -> float:
    """Summed meta-validation loss as a function of the initial weights."""
    total = 0.0
    with ad.no_grad():
        for train_batches, val_batch in tasks:
            theta = params.tensors(requires_grad=True)
            omega = _adapt_values(loss_fn, theta, train_batches, inner_lr)
            total += float(loss_fn(omega, val_batch).data)
    return total


def _adapt_values(loss_fn, theta, batches, inner_lr):
    with ad.set_grad_enabled(True):
        return adapt(loss_fn, theta, batches, inner_lr, create_graph=False)


@dataclass
class MamlTask:
    train: np.ndarray
    val: np.ndarray
    val_noise: np.ndarray


def prepare_maml_tasks(
    tasks: Sequence[EncodedMatrix], config: MamlConfig, latent_dim: int, seed: int
) -> list[MamlTask]:
    """Split each task into meta-train / meta-val rows and fix the meta-val noise."""
    out = []
    for b, task in enumerate(tasks):
        rng = np.random.default_rng(derive_seed(seed, b, 1))
        perm = rng.permutation(task.n_rows)
        cut = min(max(1, int(round(config.task_split_fraction * task.n_rows))), task.n_rows - 1)
        val = task.values[np.sort(perm[cut:])]
        out.append(
            MamlTask(task.values[np.sort(perm[:cut])], val, rng.standard_normal((val.shape[0], latent_dim)))
        )
    return out


def maml_bias(
    tasks: Sequence[EncodedMatrix],
    config: MamlConfig,
    vae_config: VaeConfig,
    seed: int,
    init: ParamSet | None = None,
) -> ParamSet:
    """MAML over the per-seed synthetic tasks, starting from a fresh random init.

    Each outer iteration samples ``meta_batch`` tasks, adapts to each with
    ``inner_steps`` SGD steps on meta-train minibatches, and moves the
    initial weights by ``-outer_lr`` times the summed meta-validation
    gradients.
    """
    if not tasks:
        raise ValueError("MAML needs at least one task")
    arch = VaeArchitecture(tasks[0].group_map, vae_config)
    loss_fn = _vae_task_loss(arch)
    theta = arch.init(seed) if init is None else init
    prepared = prepare_maml_tasks(tasks, config, vae_config.latent_dim, seed)
    rng = np.random.default_rng(derive_seed(seed, 2))
    n_batch = config.batch_for(len(tasks))
    L = vae_config.latent_dim
    for it in range(config.outer_iterations):
        chosen = np.sort(rng.choice(len(prepared), size=n_batch, replace=False))
        total = np.zeros(len(theta))
        for b in chosen:
            task = prepared[b]
            batches = []
            for _ in range(config.inner_steps):
                rows = rng.choice(task.train.shape[0], size=min(config.inner_batch_size, task.train.shape[0]), replace=False)
                batches.append((task.train[rows], rng.standard_normal((rows.size, L))))
            try:
                _, g = maml_task_gradient(
                    loss_fn, theta, batches, (task.val, task.val_noise), config.inner_lr, config.first_order
                )
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"MAML task {int(b)}, outer iteration {it}: {exc}") from None
            total += g.flat
        theta = theta.with_flat(theta.flat - config.outer_lr * total)
    return theta


def _vae_task_loss(arch: VaeArchitecture) -> TaskLoss:
    def loss_fn(tensors, batch):
        x, noise = batch
        return arch.neg_elbo(tensors, x, noise).mean()

    return loss_fn


# -- provenance ------------------------------------------------------------------


def save_bias(theta0: ParamSet, provenance: dict, directory) -> None:
    """Write ``theta0.bin`` and a JSON provenance record next to it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    theta0.save(directory / "theta0.bin")
    (directory / "theta0.json").write_text(json.dumps(provenance, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
