"""Dense multilayer perceptrons built on the autodiff tape."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor, elu, matmul, sigmoid, softplus, tanh

_HIDDEN_ACTIVATIONS = {"elu": elu, "tanh": tanh, "softplus": softplus}
_OUTPUT_ACTIVATIONS = {"identity": None, "sigmoid": sigmoid, "tanh": tanh}


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


@dataclass
class Mlp:
    """A stack of dense layers; hidden layers share one activation."""

    widths: tuple
    weights: list = field(repr=False)
    biases: list = field(repr=False)
    hidden_activation: str = "elu"
    output_activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


def build_mlp(store, prefix: str, widths, rng: np.random.Generator,
              hidden_activation: str = "elu", output_activation: str = "identity") -> Mlp:
    """Create an MLP whose parameters are registered in `store` as
    `{prefix}.w{i}` / `{prefix}.b{i}`. Weights are Xavier-uniform, biases zero.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise DimensionError(f"mlp widths must be >=2 positive ints, got {widths}")
    if hidden_activation not in _HIDDEN_ACTIVATIONS:
        raise ValueError(f"unknown hidden activation {hidden_activation!r}")
    if output_activation not in _OUTPUT_ACTIVATIONS:
        raise ValueError(f"unknown output activation {output_activation!r}")
    weights, biases = [], []
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        weights.append(store.add(f"{prefix}.w{i}", xavier_uniform(rng, fi, fo)))
        biases.append(store.add(f"{prefix}.b{i}", np.zeros(fo)))
    return Mlp(widths, weights, biases, hidden_activation, output_activation)


def mlp_widths(in_dim: int, out_dim: int, hidden_size: int = 64, hidden_layers: int = 3) -> tuple:
    return (in_dim,) + (hidden_size,) * hidden_layers + (out_dim,)


def forward(mlp: Mlp, x) -> Tensor:
    """Apply the network to a (batch, in_dim) tensor; a bare (in_dim,)
    vector is promoted to a single-row batch and squeezed back.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape((1, x.size))
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise DimensionError(f"mlp expects input width {mlp.in_dim}, got shape {x.shape}")
    act = _HIDDEN_ACTIVATIONS[mlp.hidden_activation]
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = matmul(h, w) + b.reshape((1, b.size))
        if i < last:
            h = act(h)
    out_act = _OUTPUT_ACTIVATIONS[mlp.output_activation]
    if out_act is not None:
        h = out_act(h)
    if squeeze:
        h = h.reshape((h.shape[1],))
    return h
