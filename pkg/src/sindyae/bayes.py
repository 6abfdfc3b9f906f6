"""Optimizers and samplers: Adam, SGLD, cyclical step sizes, and EMVS updates.

Parameters are handled as ``dict[str, np.ndarray]`` keyed the same way as the
gradient sets returned by :meth:`sindyae.autodiff.Tape.backward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .autodiff import DimensionError

PRIOR_KINDS = ("l1", "laplace", "ssgl")


@dataclass(frozen=True)
class PriorConfig:
    """Sparsity prior on the SINDy coefficients.

    ``l1`` is the plain ``||xi||_1 / (p d)`` penalty, ``laplace`` is
    ``||xi||_1 / v0``, ``ssgl`` is the spike-and-slab Gaussian-Laplace mixture
    whose penalty is parameterised by the EMVS state.
    """

    kind: str = "l1"
    v0: float = 0.05
    v1: float = 3.0
    delta: float = 0.08
    sigma: float = 1.0
    omega0: float = 0.05
    omega_decay: float = 0.995
    l2_weight: float = 1e-6

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"prior kind must be one of {PRIOR_KINDS}, got {self.kind!r}")
        if self.v0 <= 0 or self.v1 <= 0 or self.sigma <= 0:
            raise ValueError("v0, v1 and sigma must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not 0.0 < self.omega0 <= 1.0 or not 0.0 < self.omega_decay <= 1.0:
            raise ValueError("omega schedule must stay in (0, 1]")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be >= 0")

    def omega(self, k: int) -> float:
        return self.omega0 * self.omega_decay**k


@dataclass
class EMVSState:
    rho: np.ndarray
    kappa0: np.ndarray
    kappa1: np.ndarray
    k: int = 0


def emvs_em_estimates(xi: np.ndarray, prior: PriorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior inclusion probability and adaptive penalty weights for each entry.

    ``rho = a / (a + b)`` with ``a`` the slab (Gaussian, variance sigma^2 v1)
    density times delta and ``b`` the spike (Laplace, scale sigma v0) density
    times 1 - delta, evaluated in log space.
    """
    xi = np.asarray(xi, dtype=np.float64)
    s2v1 = prior.sigma**2 * prior.v1
    scale0 = prior.sigma * prior.v0
    log_a = math.log(prior.delta) - 0.5 * math.log(2 * math.pi * s2v1) - xi**2 / (2 * s2v1)
    log_b = math.log(1 - prior.delta) - math.log(2 * scale0) - np.abs(xi) / scale0
    rho = expit(log_a - log_b)
    return rho, (1 - rho) / prior.v0, rho / prior.v1


def init_emvs(xi: np.ndarray, prior: PriorConfig) -> EMVSState:
    rho, k0, k1 = emvs_em_estimates(xi, prior)
    return EMVSState(rho, k0, k1, 0)


def emvs_sa_blend(state: EMVSState, estimates, omega: float) -> EMVSState:
    """Stochastic-approximation step ``x <- (1 - omega) x + omega x_em``."""
    if not 0.0 < omega <= 1.0:
        raise ValueError(f"omega must lie in (0, 1], got {omega}")
    rho_t, k0_t, k1_t = estimates
    blend = lambda old, new: (1.0 - omega) * old + omega * new  # noqa: E731
    return EMVSState(
        np.clip(blend(state.rho, rho_t), 0.0, 1.0),
        np.maximum(blend(state.kappa0, k0_t), 0.0),
        np.maximum(blend(state.kappa1, k1_t), 0.0),
        state.k + 1,
    )


def ssgl_log_prior_grad(xi: np.ndarray, state: EMVSState, prior: PriorConfig) -> np.ndarray:
    """Gradient of ``-(|xi| kappa0 / sigma + xi^2 kappa1 / (2 sigma^2))``."""
    return -(np.sign(xi) * state.kappa0 / prior.sigma + xi * state.kappa1 / prior.sigma**2)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> tuple[dict, AdamState]:
    """One bias-corrected Adam step on every parameter that has a gradient.

    Returns new parameter and state objects; inputs are not modified.
    """
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params = dict(params)
    new_m, new_v = dict(state.m), dict(state.v)
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        # fresh arrays updated in place to limit temporaries on large layers
        m = (1 - b1) * g
        v = g * g
        v *= 1 - b2
        if name in state.m:
            m += b1 * state.m[name]
            v += b2 * state.v[name]
        denom = np.sqrt(v / c2)
        denom += state.eps
        step = m / c1
        step *= lr
        step /= denom
        new_params[name] = p - step
        new_m[name], new_v[name] = m, v
    return new_params, replace(state, m=new_m, v=new_v, t=t)


def sgld_step(params: dict, grads_loglik_minibatch: dict, grads_logprior: dict, eps_t: float,
              N: int, n: int, rng: np.random.Generator, noise: bool = True) -> dict:
    """Langevin update ``theta + eps/2 (grad log prior + N/n sum grad log lik) + eta``.

    ``grads_loglik_minibatch`` holds the minibatch *sum* of per-sample
    log-likelihood gradients; ``eta ~ N(0, eps_t)`` independently per entry.
    Names missing from either gradient dict contribute zero.
    """
    if eps_t <= 0:
        raise ValueError("eps_t must be positive")
    if n > N or n < 1:
        raise ValueError(f"minibatch size n={n} must be in 1..N={N}")
    factor = N / n
    sd = math.sqrt(eps_t)
    out = dict(params)
    for name in sorted(set(grads_loglik_minibatch) | set(grads_logprior)):
        p = params[name]
        drift = np.zeros_like(p)
        if name in grads_loglik_minibatch:
            drift = drift + factor * grads_loglik_minibatch[name]
        if name in grads_logprior:
            drift = drift + grads_logprior[name]
        step = 0.5 * eps_t * drift
        if noise:
            step = step + sd * rng.standard_normal(p.shape)
        out[name] = p + step
    return out


def cyclical_lr(t: int, total_steps: int, cycles: int, eps0: float) -> float:
    """Cosine cyclical step size; ``eps0`` at the start of each cycle."""
    if cycles < 1:
        raise ValueError("need at least one cycle")
    period = math.ceil(total_steps / cycles)
    r = (t % period) / period
    return 0.5 * eps0 * (math.cos(math.pi * r) + 1.0)


def cycle_position(t: int, total_steps: int, cycles: int) -> float:
    """Fraction of the current cycle already elapsed, in [0, 1)."""
    period = math.ceil(total_steps / cycles)
    return (t % period) / period
