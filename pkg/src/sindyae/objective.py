"""The four-term SINDy autoencoder loss, assembled on an autodiff tape.

For a first-order model the encoder maps ``(x, dx)`` to ``(z, dz)``; the
library evaluated at ``z`` times the masked coefficients predicts ``dz``, and
the decoder maps the prediction back to ``dx``. For a second-order model the
same pattern runs one derivative higher: ``ddz`` is predicted from the library
at ``(z, dz)``, and ``(dz, ddz_pred)`` are decoded to predict ``ddx``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import network
from .bayes import EMVSState, PriorConfig
from .network import Autoencoder
from .sindy import SindyModel, build_library


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1e-4
    lambda2: float = 0.0
    lambda3: float = 1e-5

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    sindy_x: float
    sindy_z: float
    reg: float
    total: float

    def as_row(self) -> list[float]:
        return [self.recon, self.sindy_x, self.sindy_z, self.reg, self.total]


@dataclass
class LossTerms:
    """Traced loss terms; ``total`` is the scalar to call ``backward`` on."""

    recon: ad.Var
    sindy_x: ad.Var
    sindy_z: ad.Var
    reg: ad.Var
    total: ad.Var
    data: ad.Var  # total without the regularizer

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(*(float(v.value[0, 0]) for v in (self.recon, self.sindy_x, self.sindy_z, self.reg, self.total)))


def _check_batch(X, Xdot, Xddot, order):
    X = ad.as_array2(X, "X")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if Xdot is None:
        raise ValueError("first derivatives are required")
    Xdot = ad.as_array2(Xdot, "Xdot")
    if order == 2:
        if Xddot is None:
            raise ValueError("second-order model needs second derivatives (Xddot)")
        Xddot = ad.as_array2(Xddot, "Xddot")
    else:
        Xddot = None
    return X, Xdot, Xddot


def _mean_sq(a, b, m: int) -> ad.Var:
    return ad.scale(ad.sum_sq_diff(a, b), 1.0 / m)


def regularizer(model: SindyModel, prior: PriorConfig, aux: EMVSState | None = None,
                xi=None, refine: bool = False) -> ad.Var:
    """Sparsity penalty on ``xi`` (zero during refinement)."""
    if prior.kind == "ssgl" and aux is None:
        raise ValueError("the SSGL penalty needs the EMVS state")
    xi = ad.Var(model.xi) if xi is None else xi
    if refine:
        return ad.Var(np.zeros((1, 1)))
    p, d = model.xi.shape
    if prior.kind == "l1":
        return ad.scale(ad.sum_all(ad.absolute(xi)), 1.0 / (p * d))
    if prior.kind == "laplace":
        return ad.scale(ad.sum_all(ad.absolute(xi)), 1.0 / prior.v0)
    lin = ad.sum_all(ad.mul(ad.absolute(xi), ad.Var(aux.kappa0)))
    quad = ad.sum_all(ad.mul(ad.square(xi), ad.Var(aux.kappa1)))
    return ad.add(ad.scale(lin, 1.0 / prior.sigma), ad.scale(quad, 1.0 / (2 * prior.sigma**2)))


def build_loss(enc_layers, dec_layers, xi, model: SindyModel, X, Xdot, Xddot=None,
               weights: LossWeights = LossWeights(), prior: PriorConfig = PriorConfig(),
               aux: EMVSState | None = None, refine: bool = False, X_in=None, Xdot_in=None,
               Xddot_in=None) -> LossTerms:
    """Assemble every loss term from (possibly traced) layers and coefficients.

    ``X_in``/``Xdot_in``/``Xddot_in`` are optional encoder inputs (for example a
    masked copy); targets always use the unmasked ``X``/``Xdot``/``Xddot``.
    """
    order = model.spec.model_order
    X, Xdot, Xddot = _check_batch(X, Xdot, Xddot, order)
    m = X.shape[0]
    ex = X if X_in is None else X_in
    edx = Xdot if Xdot_in is None else Xdot_in
    eddx = Xddot if Xddot_in is None else Xddot_in
    coef = ad.mul(ad.Var(model.mask), xi)
    if order == 1:
        z, dz, _ = network.propagate(enc_layers, ex, edx, want=(0, 1))
        dz_pred = ad.matmul(build_library(z, model.spec), coef)
        x_hat, dx_hat, _ = network.propagate(dec_layers, z, dz_pred, want=(0, 1))
        sindy_z = _mean_sq(dz, dz_pred, m)
        sindy_x = _mean_sq(Xdot, dx_hat, m)
    else:
        z, dz, ddz = network.propagate(enc_layers, ex, edx, eddx, want=(0, 1, 2))
        state = ad.hstack([z, dz])
        ddz_pred = ad.matmul(build_library(state, model.spec), coef)
        x_hat, _, ddx_hat = network.propagate(dec_layers, z, dz, ddz_pred, want=(0, 2))
        sindy_z = _mean_sq(ddz, ddz_pred, m)
        sindy_x = _mean_sq(Xddot, ddx_hat, m)
    recon = _mean_sq(X, x_hat, m)
    reg = regularizer(model, prior, aux, xi=xi, refine=refine)
    data = ad.add(ad.add(recon, ad.scale(sindy_x, weights.lambda1)), ad.scale(sindy_z, weights.lambda2))
    total = ad.add(data, ad.scale(reg, weights.lambda3))
    return LossTerms(recon, sindy_x, sindy_z, reg, total, data)


def total_loss(ae: Autoencoder, model: SindyModel, batch, weights: LossWeights = LossWeights(),
               prior: PriorConfig = PriorConfig(), aux: EMVSState | None = None,
               refine: bool = False, tape: ad.Tape | None = None) -> LossTerms:
    """Loss terms for ``batch = (X, Xdot[, Xddot])``.

    With a ``tape`` every network weight/bias and ``xi`` is registered on it
    (names ``enc.W0``, ``dec.b1``, ``xi``...), ready for ``tape.backward``.
    """
    X, Xdot, *rest = batch
    Xddot = rest[0] if rest else None
    if tape is None:
        enc, dec, xi = network.layers_of(ae.encoder), network.layers_of(ae.decoder), ad.Var(model.xi)
    else:
        enc = network.bind(ae.encoder, tape, "enc")
        dec = network.bind(ae.decoder, tape, "dec")
        xi = tape.param("xi", model.xi)
    return build_loss(enc, dec, xi, model, X, Xdot, Xddot, weights, prior, aux, refine)


def loss_recon(ae: Autoencoder, X) -> float:
    X = ad.as_array2(X, "X")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    x_hat = network.forward(ae.decoder, network.forward(ae.encoder, X))
    return float(np.sum((X - x_hat) ** 2) / X.shape[0])


def loss_sindy_x(ae: Autoencoder, model: SindyModel, X, Xdot, Xddot=None) -> float:
    return float(total_loss(ae, model, (X, Xdot, Xddot), LossWeights(0, 0, 0)).sindy_x.value[0, 0])


def loss_sindy_z(ae: Autoencoder, model: SindyModel, X, Xdot, Xddot=None) -> float:
    return float(total_loss(ae, model, (X, Xdot, Xddot), LossWeights(0, 0, 0)).sindy_z.value[0, 0])
