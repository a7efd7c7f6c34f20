"""Dense multilayer perceptrons on top of the autodiff tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .params import ParamSet

HIDDEN_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}
OUTPUT_ACTIVATIONS = {"identity": lambda x: x, "sigmoid": ad.sigmoid}


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if any(n <= 0 for n in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def param_names(self, prefix: str) -> list[str]:
        names = []
        for i in range(len(self.layer_sizes) - 1):
            names += [f"{prefix}.{i}.W", f"{prefix}.{i}.b"]
        return names


def init_params(
    specs: MlpSpec | Sequence[MlpSpec] | Mapping[str, MlpSpec], seed: int
) -> ParamSet:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``.

    ``specs`` may be a single spec (prefix ``"net"``), a list (prefixes
    ``"net0"``, ``"net1"``, ...) or a mapping from prefix to spec.
    """
    if isinstance(specs, MlpSpec):
        named = {"net": specs}
    elif isinstance(specs, Mapping):
        named = dict(specs)
    else:
        named = {f"net{i}": s for i, s in enumerate(specs)}
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for prefix, spec in named.items():
        sizes = spec.layer_sizes
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[f"{prefix}.{i}.W"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            arrays[f"{prefix}.{i}.b"] = np.zeros(fan_out)
    return ParamSet.from_arrays(arrays)


def mlp_forward(spec: MlpSpec, params, x, prefix: str = "net"):
    """Apply the network to a batch (rows are examples).

    ``params`` is either a ParamSet (numpy in, numpy out) or a mapping of
    name to :class:`~tabbias.diffcore.autodiff.Tensor` (differentiable path).
    """
    if isinstance(params, ParamSet):
        arrays = params.arrays()
        with ad.no_grad():
            out = mlp_forward(spec, {k: ad.Tensor(v) for k, v in arrays.items()}, x, prefix)
        return out.data
    h = ad.as_tensor(x)
    squeeze = h.ndim == 1
    if squeeze:
        h = h.reshape(1, -1)
    if h.shape[1] != spec.layer_sizes[0]:
        raise ValueError(
            f"input width {h.shape[1]} does not match first layer size {spec.layer_sizes[0]}"
        )
    hidden = HIDDEN_ACTIVATIONS[spec.hidden_activation]
    n_layers = len(spec.layer_sizes) - 1
    for i in range(n_layers):
        h = h @ params[f"{prefix}.{i}.W"] + params[f"{prefix}.{i}.b"]
        h = hidden(h) if i < n_layers - 1 else OUTPUT_ACTIVATIONS[spec.output_activation](h)
    if squeeze:
        h = h.reshape(-1)
    return h
