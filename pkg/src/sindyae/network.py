"""Fully connected sigmoid encoder/decoder with explicit time-derivative propagation.

Layout is batch-major: rows are samples, so a layer is ``l = a @ W + b``. The
activation is applied after every layer except the last.

Given pre-activations ``l_j`` and input derivatives ``dx``/``ddx`` the chain rule
gives, for the layer that follows ``l_j``::

    dl_{j+1}  = (f'(l_j) * dl_j) @ W_{j+1}
    ddl_{j+1} = (f''(l_j) * dl_j * dl_j + f'(l_j) * ddl_j) @ W_{j+1}

with ``dl_0 = dx @ W_0`` and ``ddl_0 = ddx @ W_0``. Everything is built from
tape primitives so gradients with respect to W and b come from ``Tape.backward``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Var

ACTIVATIONS = ("sigmoid",)


@dataclass
class MLPParams:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise NotImplementedError(f"activation {self.activation!r} is not implemented")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("need one weight and bias per layer")
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[j], self.layer_dims[j + 1]):
                raise DimensionError(f"W_{j} has shape {w.shape}, expected {(self.layer_dims[j], self.layer_dims[j + 1])}")
            if b.shape != (1, self.layer_dims[j + 1]):
                raise DimensionError(f"b_{j} has shape {b.shape}, expected {(1, self.layer_dims[j + 1])}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{j}"] = w
            out[f"{prefix}.b{j}"] = b
        return out

    def replace_named(self, prefix: str, values: dict[str, np.ndarray]) -> "MLPParams":
        return MLPParams(
            list(self.layer_dims),
            [values.get(f"{prefix}.W{j}", w) for j, w in enumerate(self.weights)],
            [values.get(f"{prefix}.b{j}", b) for j, b in enumerate(self.biases)],
            self.activation,
        )


@dataclass
class Autoencoder:
    encoder: MLPParams
    decoder: MLPParams

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim:
            raise DimensionError("encoder output width must equal decoder input width")
        if self.encoder.input_dim != self.decoder.output_dim:
            raise DimensionError("decoder must reconstruct the encoder input width")

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim

    def named(self) -> dict[str, np.ndarray]:
        return {**self.encoder.named("enc"), **self.decoder.named("dec")}

    def replace_named(self, values: dict[str, np.ndarray]) -> "Autoencoder":
        return Autoencoder(self.encoder.replace_named("enc", values), self.decoder.replace_named("dec", values))


def init_xavier(layer_dims: Sequence[int], seed, activation: str = "sigmoid") -> MLPParams:
    """Uniform Xavier weights on +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError(f"need at least two positive layer widths, got {list(layer_dims)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return MLPParams(dims, weights, biases, activation)


def init_autoencoder(input_dim: int, hidden: Sequence[int], latent_dim: int, seed) -> Autoencoder:
    """Encoder ``input -> hidden... -> latent`` and a mirrored decoder, one RNG stream."""
    rng = np.random.default_rng(seed)
    enc = init_xavier([input_dim, *hidden, latent_dim], rng)
    dec = init_xavier([latent_dim, *reversed(list(hidden)), input_dim], rng)
    return Autoencoder(enc, dec)


Layer = tuple  # (W, b) as Var or ndarray


def layers_of(params: MLPParams) -> list[Layer]:
    return list(zip(params.weights, params.biases))


def bind(params: MLPParams, tape: ad.Tape, prefix: str) -> list[Layer]:
    """Register the parameters on ``tape`` under ``prefix.W{j}``/``prefix.b{j}``."""
    return [
        (tape.param(f"{prefix}.W{j}", w), tape.param(f"{prefix}.b{j}", b))
        for j, (w, b) in enumerate(zip(params.weights, params.biases))
    ]


def propagate(layers: Sequence[Layer], x, dx=None, ddx=None, want=(0, 1, 2)):
    """Push ``x`` and optionally its first/second time derivatives through the net.

    Returns ``(z, dz, ddz)`` as :class:`Var`; entries that were not requested via
    ``want`` (or whose inputs were not given) are None. Skipping unwanted outputs
    saves the final-layer matmul, which dominates cost for wide outputs.
    """
    x = ad._lift(x)
    w0_rows = layers[0][0].shape[0]
    if x.shape[1] != w0_rows:
        raise DimensionError(f"input width {x.shape[1]} does not match layer width {w0_rows}")
    if ddx is not None and dx is None:
        raise ValueError("second derivative propagation needs the first derivative")
    for name, arr in (("dx", dx), ("ddx", ddx)):
        if arr is not None and ad._lift(arr).shape != x.shape:
            raise DimensionError(f"{name} shape {ad._lift(arr).shape} differs from x shape {x.shape}")

    n = len(layers)
    w, b = layers[0]
    last = n == 1
    l = ad.add(ad.matmul(x, w), b) if (not last or 0 in want) else None
    dl = ad.matmul(dx, w) if dx is not None and (not last or 1 in want) else None
    ddl = ad.matmul(ddx, w) if ddx is not None and (not last or 2 in want) else None

    for j in range(1, n):
        w, b = layers[j]
        last = j == n - 1
        fp = ad.sigmoid_family(l, 1) if dl is not None else None
        new_l = new_dl = new_ddl = None
        if not last or 0 in want:
            new_l = ad.add(ad.matmul(ad.sigmoid_family(l, 0), w), b)
        if dl is not None and (not last or 1 in want):
            new_dl = ad.matmul(ad.mul(fp, dl), w)
        if ddl is not None and (not last or 2 in want):
            fpp = ad.sigmoid_family(l, 2)
            inner = ad.add(ad.mul(fpp, ad.square(dl)), ad.mul(fp, ddl))
            new_ddl = ad.matmul(inner, w)
        l, dl, ddl = new_l, new_dl, new_ddl

    return (
        l if 0 in want else None,
        dl if 1 in want else None,
        ddl if 2 in want else None,
    )


def _values(params: MLPParams, X, Xdot=None, Xddot=None, want=(0, 1, 2)):
    return propagate(layers_of(params), ad.as_array2(X, "X"),
                     None if Xdot is None else ad.as_array2(Xdot, "Xdot"),
                     None if Xddot is None else ad.as_array2(Xddot, "Xddot"), want)


def forward(params: MLPParams, X) -> np.ndarray:
    return _values(params, X, want=(0,))[0].value


def propagate_first_derivative(params: MLPParams, X, Xdot) -> np.ndarray:
    return _values(params, X, Xdot, want=(1,))[1].value


def propagate_second_derivative(params: MLPParams, X, Xdot, Xddot) -> np.ndarray:
    return _values(params, X, Xdot, Xddot, want=(2,))[2].value
