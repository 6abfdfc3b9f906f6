"""Training orchestration: epochs, thresholding, refinement, posterior sampling,
metrics and model selection."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import network
from .bayes import (AdamState, EMVSState, PriorConfig, adam_step, cycle_position, cyclical_lr,
                    emvs_em_estimates, emvs_sa_blend, init_emvs, sgld_step, ssgl_log_prior_grad)
from .datagen import Dataset
from .network import Autoencoder
from .objective import LossBreakdown, LossWeights, build_loss
from .sindy import LibrarySpec, SindyModel, active_term_count, build_library, init_xi, threshold_update
from .videopipe import random_mask

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, term: str, value: float):
        super().__init__(f"non-finite loss at epoch {epoch} (term {term!r} = {value})")
        self.epoch, self.term, self.value = epoch, term, value


@dataclass(frozen=True)
class SGLDConfig:
    eps0: float = 1e-6
    cycles: int = 4
    explore_fraction: float = 0.5
    sample_every: int = 10
    sampling_epochs: int = 0

    def __post_init__(self):
        if self.eps0 <= 0 or self.cycles < 1 or self.sample_every < 1 or self.sampling_epochs < 0:
            raise ValueError("invalid SGLD settings")
        if not 0.0 <= self.explore_fraction < 1.0:
            raise ValueError("explore_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    library: LibrarySpec = LibrarySpec(latent_dim=3, poly_order=3)
    widths: tuple = (64, 32)
    epochs: int = 1000
    refine_epochs: int = 1000
    batch_size: int = 1024
    lr: float = 1e-3
    threshold_tau: float = 0.1
    threshold_interval: int = 500
    weights: LossWeights = LossWeights()
    prior: PriorConfig = PriorConfig()
    xi_init: str = "ones"
    xi_init_std: float = 0.1
    optimizer: str = "adam"
    sgld: SGLDConfig = SGLDConfig()
    support: str = "auto"  # threshold | emvs | both | auto
    rho_cut: float = 0.5
    mask_fraction: float = 0.0
    train_networks: bool = True
    activation: str = "sigmoid"
    seeds: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.refine_epochs < 0 or self.batch_size < 1 or self.seeds < 1:
            raise ValueError("epochs, refine_epochs, batch_size and seeds must be non-negative/positive")
        if self.threshold_interval < 1 or (self.epochs and self.threshold_interval > self.epochs):
            raise ValueError("threshold_interval must be in 1..epochs")
        if self.threshold_tau <= 0 or self.lr <= 0:
            raise ValueError("threshold_tau and lr must be positive")
        if self.optimizer not in ("adam", "sgld"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.support not in ("threshold", "emvs", "both", "auto"):
            raise ValueError(f"unknown support mode {self.support!r}")
        if self.support in ("emvs", "both") and self.prior.kind != "ssgl":
            raise ValueError("EMVS support selection needs the ssgl prior")
        if self.activation not in network.ACTIVATIONS:
            raise ValueError(f"activation {self.activation!r} is not implemented")
        if self.xi_init not in ("ones", "gaussian"):
            raise ValueError(f"unknown xi_init {self.xi_init!r}")

    @property
    def support_mode(self) -> str:
        if self.support != "auto":
            return self.support
        return "emvs" if self.prior.kind == "ssgl" else "threshold"

    @property
    def total_epochs(self) -> int:
        return self.epochs + self.refine_epochs + self.sgld.sampling_epochs


@dataclass
class PosteriorEnsemble:
    samples: list = field(default_factory=list)  # (p, d) effective coefficients
    steps: list = field(default_factory=list)
    eps: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def add(self, xi: np.ndarray, step: int, eps: float):
        if self.samples and xi.shape != self.samples[0].shape:
            raise ValueError("posterior samples must share one shape")
        self.samples.append(np.array(xi, copy=True))
        self.steps.append(int(step))
        self.eps.append(float(eps))

    def stack(self) -> np.ndarray:
        return np.stack(self.samples) if self.samples else np.empty((0, 0, 0))


@dataclass
class TrainState:
    params: dict
    mask: np.ndarray
    emvs: EMVSState | None
    adam: AdamState
    rng_state: dict
    epoch: int = 0
    step: int = 0
    sgld_step: int = 0
    support_fixed: bool = False
    history: list = field(default_factory=list)  # LossBreakdown per epoch
    active_history: list = field(default_factory=list)
    ensemble: PosteriorEnsemble = field(default_factory=PosteriorEnsemble)


@dataclass
class TrainedModel:
    autoencoder: Autoencoder
    sindy: SindyModel
    ensemble: PosteriorEnsemble
    history: list
    metrics: dict
    seed: int = 0
    emvs: EMVSState | None = None
    active_history: list = field(default_factory=list)

    @property
    def active_terms(self) -> int:
        return active_term_count(self.sindy)


def fuv(X_true, X_pred) -> float:
    """Fraction of unexplained variance: residual sum of squares over total sum of squares."""
    X_true = ad.as_array2(X_true, "X_true")
    X_pred = ad.as_array2(X_pred, "X_pred")
    if X_true.shape != X_pred.shape:
        raise ValueError(f"shape mismatch {X_true.shape} vs {X_pred.shape}")
    if X_true.shape[0] < 2:
        raise ValueError("need at least two samples")
    denom = float(np.sum((X_true - X_true.mean(axis=0)) ** 2))
    if denom == 0.0:
        raise ValueError("X_true has zero variance; FUV undefined")
    return float(np.sum((X_true - X_pred) ** 2)) / denom


def predictions(ae: Autoencoder, model: SindyModel, ds: Dataset, chunk: int = 4096) -> dict[str, np.ndarray]:
    """Encoder/decoder/SINDy outputs for every row of ``ds`` (untraced)."""
    order = model.spec.model_order
    enc, dec = network.layers_of(ae.encoder), network.layers_of(ae.decoder)
    coef = ad.Var(model.coefficients)
    keys = ("z", "dz", "ddz", "x_hat", "dz_pred", "dx_pred")
    out: dict[str, list] = {k: [] for k in keys}
    for s in range(0, ds.n_samples, chunk):
        X = ds.X[s:s + chunk]
        Xd = ds.Xdot[s:s + chunk]
        if order == 1:
            z, dz, _ = network.propagate(enc, X, Xd, want=(0, 1))
            pred = ad.matmul(build_library(z, model.spec), coef)
            x_hat, dx_pred, _ = network.propagate(dec, z, pred, want=(0, 1))
            ddz = None
        else:
            z, dz, ddz = network.propagate(enc, X, Xd, ds.Xddot[s:s + chunk], want=(0, 1, 2))
            pred = ad.matmul(build_library(ad.hstack([z, dz]), model.spec), coef)
            x_hat, _, dx_pred = network.propagate(dec, z, dz, pred, want=(0, 2))
        for k, v in zip(keys, (z, dz, ddz, x_hat, pred, dx_pred)):
            if v is not None:
                out[k].append(v.value)
    return {k: np.concatenate(v) for k, v in out.items() if v}


def evaluate(ae: Autoencoder, model: SindyModel, ds: Dataset) -> dict:
    """FUV of x, of the modelled input derivative and of the modelled latent derivative.

    For second-order models ``fuv_dx``/``fuv_dz`` refer to the second derivatives.
    """
    p = predictions(ae, model, ds)
    order = model.spec.model_order
    dx_true = ds.Xdot if order == 1 else ds.Xddot
    dz_true = p["dz"] if order == 1 else p["ddz"]
    out = {"fuv_x": fuv(ds.X, p["x_hat"]), "fuv_dx": fuv(dx_true, p["dx_pred"]), "model_order": order,
           "active_terms": active_term_count(model)}
    try:
        out["fuv_dz"] = fuv(dz_true, p["dz_pred"])
    except ValueError:
        out["fuv_dz"] = float("nan")
    return out


def _prior_grad_xi(xi, mask, prior: PriorConfig, emvs, lam3: float) -> np.ndarray:
    p, d = xi.shape
    if prior.kind == "ssgl":
        g = ssgl_log_prior_grad(xi, emvs, prior)
    elif prior.kind == "laplace":
        g = -np.sign(xi) / prior.v0
    else:
        g = -np.sign(xi) / (p * d)
    return lam3 * g


class Trainer:
    """Resumable training run for one seed."""

    def __init__(self, dataset: Dataset, config: TrainConfig, seed: int = 0,
                 val: Dataset | None = None, state: TrainState | None = None):
        self.ds = dataset
        self.cfg = config
        self.seed = int(seed)
        self.val = val
        spec = config.library
        if config.library.model_order == 2 and dataset.Xddot is None:
            raise ValueError("second-order training needs Xddot in the dataset")
        if state is None:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed))
            ae = network.init_autoencoder(dataset.n_features, config.widths, spec.latent_dim, rng)
            xi = init_xi(spec, config.xi_init, rng, config.xi_init_std)
            emvs = init_emvs(xi, config.prior) if config.prior.kind == "ssgl" else None
            state = TrainState({**ae.named(), "xi": xi}, np.ones_like(xi), emvs, AdamState(),
                               rng.bit_generator.state)
        self.state = state
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state.rng_state

    # -- model views ---------------------------------------------------
    def autoencoder(self) -> Autoencoder:
        rng = np.random.default_rng(0)
        template = network.init_autoencoder(self.ds.n_features, self.cfg.widths, self.cfg.library.latent_dim, rng)
        return template.replace_named(self.state.params)

    def sindy(self) -> SindyModel:
        return SindyModel(self.cfg.library, self.state.params["xi"].copy(), self.state.mask.copy())

    def phase(self, epoch: int | None = None) -> str:
        e = self.state.epoch if epoch is None else epoch
        if e < self.cfg.epochs:
            return "train"
        if e < self.cfg.epochs + self.cfg.refine_epochs:
            return "refine"
        return "sample"

    @property
    def done(self) -> bool:
        return self.state.epoch >= self.cfg.total_epochs

    # -- one minibatch -------------------------------------------------
    def _loss(self, idx, refine: bool):
        cfg, st = self.cfg, self.state
        ds = self.ds
        X, Xd = ds.X[idx], ds.Xdot[idx]
        Xdd = ds.Xddot[idx] if cfg.library.model_order == 2 else None
        X_in = Xd_in = Xdd_in = None
        if cfg.mask_fraction > 0:
            X_in, keep = random_mask(X, cfg.mask_fraction, self.rng, return_mask=True)
            Xd_in = Xd * keep
            Xdd_in = None if Xdd is None else Xdd * keep
        tape = ad.Tape(check_finite=False)
        ae = self._ae_from(st.params)
        enc = network.bind(ae.encoder, tape, "enc")
        dec = network.bind(ae.decoder, tape, "dec")
        xi = tape.param("xi", st.params["xi"])
        model = SindyModel(cfg.library, st.params["xi"], st.mask)
        terms = build_loss(enc, dec, xi, model, X, Xd, Xdd, cfg.weights, cfg.prior, st.emvs, refine,
                           X_in, Xd_in, Xdd_in)
        total = terms.total.value[0, 0]
        if not np.isfinite(total):
            for name in ("recon", "sindy_x", "sindy_z", "reg"):
                v = getattr(terms, name).value[0, 0]
                if not np.isfinite(v):
                    raise TrainingDivergence(st.epoch, name, v)
            raise TrainingDivergence(st.epoch, "total", total)
        return tape, terms

    def _ae_from(self, params) -> Autoencoder:
        if not hasattr(self, "_template"):
            self._template = self.autoencoder()
        return self._template.replace_named(params)

    def _filter(self, grads: dict) -> dict:
        if self.cfg.train_networks:
            return grads
        return {"xi": grads["xi"]}

    def _emvs_update(self):
        st = self.state
        if st.emvs is None or self.phase() == "refine":
            return
        est = emvs_em_estimates(st.params["xi"], self.cfg.prior)
        # blend every step; the weight decays per epoch so rho keeps tracking xi
        st.emvs = emvs_sa_blend(st.emvs, est, self.cfg.prior.omega(st.epoch + 1))

    def _sgld_update(self, tape, terms, n: int, total_steps: int, collect: bool):
        cfg, st = self.cfg, self.state
        N = self.ds.n_samples
        g_data = self._filter(tape.backward(terms.data))
        loglik = {k: -n * g for k, g in g_data.items()}
        prior = {}
        for k in g_data:
            if k == "xi":
                if self.phase() != "refine":
                    prior[k] = _prior_grad_xi(st.params["xi"], st.mask, cfg.prior, st.emvs, cfg.weights.lambda3)
            elif cfg.prior.l2_weight:
                prior[k] = -cfg.prior.l2_weight * st.params[k]
        t = st.sgld_step
        eps = cyclical_lr(t, total_steps, cfg.sgld.cycles, cfg.sgld.eps0)
        sampling = cycle_position(t, total_steps, cfg.sgld.cycles) >= cfg.sgld.explore_fraction
        st.params = sgld_step(st.params, loglik, prior, eps, N, n, self.rng, noise=sampling)
        st.sgld_step += 1
        if collect and sampling and st.sgld_step % cfg.sgld.sample_every == 0:
            st.ensemble.add(st.mask * st.params["xi"], st.step, eps)

    # -- epochs --------------------------------------------------------
    def _fix_support(self):
        st = self.state
        if st.support_fixed:
            return
        if self.cfg.support_mode in ("emvs", "both") and st.emvs is not None:
            st.mask = st.mask * (st.emvs.rho > self.cfg.rho_cut)
        st.support_fixed = True

    def run_epoch(self) -> LossBreakdown:
        cfg, st = self.cfg, self.state
        phase = self.phase()
        if phase != "train":
            self._fix_support()
        refine = phase != "train"
        N = self.ds.n_samples
        bs = min(cfg.batch_size, N)
        perm = self.rng.permutation(N)
        acc = np.zeros(5)
        use_sgld = phase == "sample" or (phase == "train" and cfg.optimizer == "sgld")
        steps_per_epoch = -(-N // bs)
        if phase == "sample":
            total_sgld = cfg.sgld.sampling_epochs * steps_per_epoch
        else:
            total_sgld = cfg.epochs * steps_per_epoch
        for s in range(0, N, bs):
            idx = np.sort(perm[s:s + bs])
            # sampling targets the posterior, so the prior stays on
            tape, terms = self._loss(idx, refine and phase == "refine")
            if use_sgld:
                self._sgld_update(tape, terms, len(idx), total_sgld, collect=True)
            else:
                grads = self._filter(tape.backward(terms.total))
                st.params, st.adam = adam_step(st.params, grads, st.adam, cfg.lr)
            self._emvs_update()
            acc += len(idx) * np.array(terms.breakdown().as_row())
            st.step += 1
        acc /= N
        rec = LossBreakdown(*acc)
        if phase == "train" and cfg.support_mode in ("threshold", "both") and (st.epoch + 1) % cfg.threshold_interval == 0:
            st.mask = threshold_update(self.sindy(), cfg.threshold_tau)
        if phase != "sample":
            st.history.append(rec)
            st.active_history.append(int(st.mask.sum()))
        st.epoch += 1
        st.rng_state = self.rng.bit_generator.state
        return rec

    def run(self, max_epochs: int | None = None, log_every: int = 0) -> "Trainer":
        n = 0
        while not self.done and (max_epochs is None or n < max_epochs):
            rec = self.run_epoch()
            n += 1
            if log_every and self.state.epoch % log_every == 0:
                log.info("seed %d epoch %d [%s] total=%.4g recon=%.4g sx=%.4g sz=%.4g active=%d",
                         self.seed, self.state.epoch, self.phase(self.state.epoch - 1), rec.total,
                         rec.recon, rec.sindy_x, rec.sindy_z, int(self.state.mask.sum()))
        return self

    def result(self) -> TrainedModel:
        if self.state.epoch >= self.cfg.epochs and self.cfg.refine_epochs == 0 and self.cfg.epochs > 0:
            self._fix_support()
        ae, model = self.autoencoder(), self.sindy()
        metrics = evaluate(ae, model, self.val if self.val is not None else self.ds)
        metrics["split"] = "validation" if self.val is not None else "train"
        return TrainedModel(ae, model, self.state.ensemble, list(self.state.history), metrics, self.seed,
                            self.state.emvs, list(self.state.active_history))


def train(dataset: Dataset, config: TrainConfig, seed: int = 0, val: Dataset | None = None,
          log_every: int = 0) -> TrainedModel:
    return Trainer(dataset, config, seed, val).run(log_every=log_every).result()


def train_run(dataset: Dataset, config: TrainConfig, seed: int = 0, val: Dataset | None = None,
              state: TrainState | None = None, log_every: int = 0) -> tuple[TrainState, TrainedModel]:
    """Like :func:`train` (optionally resuming ``state``) but also returns the final state."""
    t = Trainer(dataset, config, seed, val, state).run(log_every=log_every)
    return t.state, t.result()


def refine(trained: TrainedModel, dataset: Dataset, config: TrainConfig, val: Dataset | None = None) -> TrainedModel:
    """Continue training ``trained`` with its mask frozen and no sparsity penalty."""
    if config.refine_epochs == 0:
        return trained
    params = {**trained.autoencoder.named(), "xi": trained.sindy.xi.copy()}
    rng = np.random.default_rng(np.random.SeedSequence(trained.seed))
    state = TrainState(params, trained.sindy.mask.copy(), trained.emvs, AdamState(), rng.bit_generator.state,
                       epoch=config.epochs, support_fixed=True, history=list(trained.history),
                       active_history=list(trained.active_history), ensemble=trained.ensemble)
    cfg = replace(config, sgld=replace(config.sgld, sampling_epochs=0))
    t = Trainer(dataset, cfg, trained.seed, val, state)
    t.run()
    return t.result()


def _train_job(args):
    dataset, config, seed, val, with_state = args
    state, model = train_run(dataset, config, seed, val)
    return (state, model) if with_state else model


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("SINDYAE_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def train_many(dataset: Dataset, config: TrainConfig, seeds, val: Dataset | None = None,
               workers: int | None = None, with_state: bool = False) -> list:
    """Independent runs for each seed, in parallel processes when more than one worker.

    With ``with_state`` each entry is ``(TrainState, TrainedModel)``.
    """
    seeds = list(seeds)
    n = min(worker_count(workers), len(seeds))
    jobs = [(dataset, config, s, val, with_state) for s in seeds]
    if n <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(_train_job, jobs))


def select_model(candidates: list[TrainedModel]) -> TrainedModel:
    """Fewest active terms (ignoring empty models unless all are empty), then
    lowest derivative FUV, then lowest input FUV, then lowest seed."""
    if not candidates:
        raise ValueError("no candidate models")
    pool = [c for c in candidates if c.active_terms > 0] or list(candidates)
    fewest = min(c.active_terms for c in pool)
    pool = [c for c in pool if c.active_terms == fewest]

    def key(c):
        dx = c.metrics.get("fuv_dx", np.inf)
        x = c.metrics.get("fuv_x", np.inf)
        return (np.inf if np.isnan(dx) else dx, np.inf if np.isnan(x) else x, c.seed)

    return min(pool, key=key)
