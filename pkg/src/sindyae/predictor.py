"""Simulating discovered models, posterior-predictive ensembles and model rewrites."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network
from .datagen import IntegrationError, rk4_integrate
from .network import Autoencoder
from .sindy import LibrarySpec, SindyModel, build_library

DIVERGENCE_NORM = 1e6


class SimulationError(IntegrationError):
    pass


def latent_rhs(spec: LibrarySpec, coef: np.ndarray):
    """First-order vector field of the model; order-2 models are lifted to (z, dz)."""
    coef = np.asarray(coef, dtype=np.float64)
    d = spec.latent_dim

    def f(state):
        s = np.atleast_2d(state)
        out = build_library(s, spec) @ coef
        if spec.model_order == 2:
            out = np.concatenate([s[:, d:], out], axis=1)
        return out.reshape(np.shape(state))

    return f


def simulate_latent(model: SindyModel, z0, dt: float, steps: int, zdot0=None, coef=None) -> np.ndarray:
    """RK4 trajectory of the discovered dynamics, shape ``(steps + 1, d)``.

    For second-order models the result holds ``(z, dz)`` side by side, shape
    ``(steps + 1, 2 d)``.
    """
    spec = model.spec
    z0 = np.atleast_1d(np.asarray(z0, dtype=np.float64))
    if z0.shape != (spec.latent_dim,):
        raise ValueError(f"z0 must have {spec.latent_dim} entries, got shape {z0.shape}")
    if spec.model_order == 2:
        if zdot0 is None:
            raise ValueError("second-order models need zdot0")
        z0 = np.concatenate([z0, np.atleast_1d(np.asarray(zdot0, dtype=np.float64))])
    coef = model.coefficients if coef is None else coef
    try:
        Z, _ = rk4_integrate(latent_rhs(spec, coef), z0, dt, steps, max_norm=DIVERGENCE_NORM)
    except IntegrationError as e:
        raise SimulationError(f"simulation diverged: {e}", e.step) from e
    return Z


@dataclass
class PredictiveEnsemble:
    t: np.ndarray  # (T,)
    latent: np.ndarray  # (members, T, state_dim)
    decoded: np.ndarray  # (members, T, n)

    def __post_init__(self):
        if self.latent.shape[:2] != self.decoded.shape[:2] or self.latent.shape[1] != self.t.shape[0]:
            raise ValueError("members must share the time grid")

    @property
    def members(self) -> int:
        return self.latent.shape[0]

    def variance(self) -> tuple[np.ndarray, np.ndarray]:
        """Across-member variance; shifted by member 0 so identical members give exact zeros."""
        return (np.var(self.latent - self.latent[:1], axis=0),
                np.var(self.decoded - self.decoded[:1], axis=0))


def posterior_predict(ae: Autoencoder, samples, spec: LibrarySpec, x0, dt: float, steps: int,
                      dx0=None, zdot0=None) -> PredictiveEnsemble:
    """Encode ``x0`` once, simulate one latent path per coefficient sample, decode each.

    ``samples`` is a :class:`~sindyae.trainer.PosteriorEnsemble` or a sequence of
    ``(p, d)`` coefficient arrays (already masked). For second-order models the
    initial latent velocity is ``zdot0`` or, failing that, ``dx0`` propagated
    through the encoder.
    """
    samples = list(getattr(samples, "samples", samples))
    if not samples:
        raise ValueError("posterior ensemble is empty")
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    enc = network.layers_of(ae.encoder)
    d = spec.latent_dim
    if spec.model_order == 2 and zdot0 is None:
        if dx0 is None:
            raise ValueError("second-order prediction needs zdot0 or dx0")
        z, dz, _ = network.propagate(enc, x0, np.atleast_2d(dx0), want=(0, 1))
        z0, zdot0 = z.value[0], dz.value[0]
    else:
        z0 = network.forward(ae.encoder, x0)[0]
    model = SindyModel(spec, np.asarray(samples[0], dtype=np.float64))
    latent = np.stack([simulate_latent(model, z0, dt, steps, zdot0, coef=c) for c in samples])
    decoded = np.stack([network.forward(ae.decoder, Z[:, :d]) for Z in latent])
    return PredictiveEnsemble(dt * np.arange(steps + 1), latent, decoded)


@dataclass
class Bands:
    quantiles: tuple
    latent: np.ndarray  # (q, T, state_dim)
    decoded: np.ndarray  # (q, T, n)


def uncertainty_bands(ens: PredictiveEnsemble, quantiles=(0.05, 0.5, 0.95)) -> Bands:
    """Per-time, per-coordinate empirical quantiles across members."""
    q = tuple(float(v) for v in quantiles)
    if any(not 0.0 <= v <= 1.0 for v in q):
        raise ValueError(f"quantiles must lie in [0, 1], got {q}")
    if ens.members < 2:
        raise ValueError("uncertainty bands need at least two members")
    return Bands(q, np.quantile(ens.latent, q, axis=0), np.quantile(ens.decoded, q, axis=0))


@dataclass(frozen=True)
class AffineTransform:
    """``z[perm[i]] = scales[i] * z_new[i] + offsets[i]``."""

    scales: tuple
    offsets: tuple
    perm: tuple | None = None

    def __post_init__(self):
        if len(self.scales) != len(self.offsets):
            raise ValueError("scales and offsets differ in length")
        if any(a == 0 for a in self.scales):
            raise ValueError("transform scales must be nonzero")
        if self.perm is not None and sorted(self.perm) != list(range(len(self.scales))):
            raise ValueError(f"perm {self.perm} is not a permutation")

    @property
    def permutation(self) -> np.ndarray:
        return np.arange(len(self.scales)) if self.perm is None else np.asarray(self.perm)

    def to_old(self, z_new: np.ndarray) -> np.ndarray:
        z_new = np.asarray(z_new, dtype=np.float64)
        out = np.empty_like(z_new)
        out[..., self.permutation] = z_new * np.asarray(self.scales) + np.asarray(self.offsets)
        return out

    def to_new(self, z_old: np.ndarray) -> np.ndarray:
        z_old = np.asarray(z_old, dtype=np.float64)
        return (z_old[..., self.permutation] - np.asarray(self.offsets)) / np.asarray(self.scales)

    def inverse(self) -> "AffineTransform":
        p = self.permutation
        inv = np.argsort(p)
        a = np.asarray(self.scales, dtype=np.float64)
        b = np.asarray(self.offsets, dtype=np.float64)
        # z_new[i] = z_old[p[i]] / a[i] - b[i] / a[i]
        return AffineTransform(tuple(1.0 / a[inv]), tuple(-b[inv] / a[inv]), tuple(inv))


def transform_model(model: SindyModel, transform: AffineTransform, rcond_points: int = 400) -> SindyModel:
    """Rewrite a first-order polynomial model in the new coordinates.

    Affine maps keep polynomials of degree at most k in the same space, so the
    new coefficients are obtained exactly (to rounding) by least squares on
    random sample points of the new coordinates.
    """
    spec = model.spec
    if spec.model_order != 1:
        raise ValueError("only first-order models can be transformed")
    if spec.include_sine:
        raise ValueError("sine terms are not closed under affine maps")
    d = spec.latent_dim
    if len(transform.scales) != d:
        raise ValueError(f"transform has {len(transform.scales)} coordinates, model {d}")
    rng = np.random.default_rng(0)
    z_new = rng.uniform(-1.0, 1.0, size=(rcond_points, d))
    z_old = transform.to_old(z_new)
    dz_old = build_library(z_old, spec) @ model.coefficients
    dz_new = dz_old[:, transform.permutation] / np.asarray(transform.scales)
    xi, *_ = np.linalg.lstsq(build_library(z_new, spec), dz_new, rcond=None)
    scale = max(np.abs(xi).max(), 1.0)
    xi[np.abs(xi) < 1e-11 * scale] = 0.0
    return SindyModel(spec, xi, (xi != 0).astype(np.float64))


def canonicalize_lorenz(model: SindyModel, transform: AffineTransform) -> SindyModel:
    if model.spec.latent_dim != 3:
        raise ValueError("Lorenz canonicalization needs a 3-D latent model")
    return transform_model(model, transform)


def estimate_gravity(sin_coefficient: float, rod_length_m: float) -> float:
    """``g = c * L / 2`` for a discovered ``ddz = c sin(z)`` and rod length ``L``."""
    if rod_length_m <= 0:
        raise ValueError("rod length must be positive")
    return float(sin_coefficient) * float(rod_length_m) / 2.0
