"""Reduced-scale benchmark runs shared by ``scripts/`` and the acceptance suite.

Each runner returns a JSON-ready dict with per-seed outcomes, the overall
verdict and wall-clock seconds. Seeds run sequentially and stop once the
verdict is settled.
"""

from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np

from . import datagen, network, predictor
from .config import preset_config
from .datagen import IntegrationError
from .sindy import equation_strings
from .trainer import train

log = logging.getLogger(__name__)


def _budget(cfg, epochs: int, refine_epochs: int):
    """Override epoch counts, shrinking the threshold interval for short runs."""
    return replace(cfg, epochs=epochs, refine_epochs=refine_epochs,
                   threshold_interval=min(cfg.threshold_interval, max(epochs, 1)))


def oscillator_outcome(model) -> dict:
    """Support and eigenvalues of a discovered ``poly_order=1`` two-latent model.

    Success: each row keeps its off-diagonal linear term and drops its diagonal
    one (a constant offset is a latent translation and is allowed), and both
    eigenvalues of the linear part lie within 5% of ``|i|`` with real part in
    ``[-0.05, 0.05]``.
    """
    coef = model.sindy.coefficients  # rows: 1, z1, z2
    A = coef[1:].T  # dz = A z + c
    active = model.sindy.mask[1:].T != 0
    ev = np.linalg.eigvals(A)
    support_ok = bool(active[0, 1] and active[1, 0] and not active[0, 0] and not active[1, 1])
    eig_ok = bool(np.all(np.abs(np.abs(ev) - 1.0) <= 0.05) and np.all(np.abs(ev.real) <= 0.05))
    return {"support_ok": support_ok, "eig_ok": eig_ok, "success": support_ok and eig_ok,
            "eigenvalues": [[float(e.real), float(e.imag)] for e in ev], "equations": equation_strings(model.sindy),
            "fuv_x": model.metrics["fuv_x"], "fuv_dx": model.metrics["fuv_dx"]}


def oscillator_benchmark(seeds=range(5), epochs: int = 2000, data_seed: int = 0) -> dict:
    rc = preset_config("oscillator")
    ds = datagen.generate(rc.data, data_seed)
    cfg = _budget(rc.train, epochs, 0)
    t0 = time.time()
    runs = []
    for seed in seeds:
        out = oscillator_outcome(train(ds, cfg, seed))
        runs.append({"seed": int(seed), **out})
        log.info("oscillator seed %d: %s", seed, out)
    return {"runs": runs, "successes": sum(r["success"] for r in runs), "seconds": time.time() - t0}


def pendulum_outcome(model, low: float = -1.15, high: float = -0.85) -> dict:
    """A success is the single active term ``sin(z)`` with coefficient in ``[low, high]``."""
    names = model.sindy.spec.term_names()
    active = [names[i] for i in np.flatnonzero(model.sindy.mask[:, 0])]
    c = float(model.sindy.coefficients[names.index("sin(z)"), 0])
    success = active == ["sin(z)"] and low <= c <= high
    return {"active": active, "sin_coefficient": c, "success": bool(success),
            "equations": equation_strings(model.sindy), "fuv_x": model.metrics["fuv_x"],
            "fuv_dx": model.metrics["fuv_dx"]}


def pendulum_discovery(seeds=range(5), n_ics: int = 20, steps: int = 250, epochs: int = 1500,
                       refine_epochs: int = 1000, stop_after: int | None = 1, log_every: int = 0) -> dict:
    """Spike-and-slab pendulum runs on a reduced video set."""
    rc = preset_config("pendulum_ssgl")
    cfg = _budget(rc.train, epochs, refine_epochs)
    t0 = time.time()
    runs = []
    for seed in seeds:
        ds = datagen.generate(replace(rc.data, n_ics=n_ics, steps=steps), seed)
        start = time.time()
        out = pendulum_outcome(train(ds, cfg, seed, log_every=log_every))
        runs.append({"seed": int(seed), "seconds": time.time() - start, **out})
        log.info("pendulum seed %d: %s", seed, runs[-1])
        if stop_after is not None and sum(r["success"] for r in runs) >= stop_after:
            break
    return {"runs": runs, "successes": sum(r["success"] for r in runs), "seconds": time.time() - t0,
            "n_ics": n_ics, "steps": steps, "epochs": epochs, "refine_epochs": refine_epochs}


def lorenz_outcome(model, ds, t_end: float = 25.0, fuv_max: float = 0.05, blowup: float = 10.0) -> dict:
    """Input FUV and boundedness of a simulated latent trajectory over ``[0, t_end]``.

    The simulation starts from the encoding of the first sample. It counts as
    bounded when it stays finite and within ``blowup`` times the largest
    encoded latent magnitude of the data.
    """
    enc = model.autoencoder.encoder
    z_data = network.forward(enc, ds.X)
    scale = float(np.max(np.abs(z_data)))
    steps = int(round(t_end / ds.dt))
    try:
        path = predictor.simulate_latent(model.sindy, z_data[0], ds.dt, steps)
        peak = float(np.max(np.abs(path)))
        bounded = bool(np.all(np.isfinite(path)) and peak <= blowup * scale)
    except IntegrationError:
        peak, bounded = float("inf"), False
    fuv_x = float(model.metrics["fuv_x"])
    return {"fuv_x": fuv_x, "bounded": bounded, "peak": peak, "latent_scale": scale,
            "success": bool(fuv_x < fuv_max and bounded), "active_terms": model.active_terms,
            "equations": equation_strings(model.sindy)}


def lorenz_substitute(seeds=range(5), n_ics: int = 64, epochs: int = 2000, stop_after: int | None = 2,
                      log_every: int = 0) -> dict:
    """Reduced Lorenz-embedding runs (Table preset, fewer trajectories and epochs)."""
    rc = preset_config("lorenz")
    ds = datagen.generate(replace(rc.data, n_ics=n_ics), 0)
    cfg = _budget(rc.train, epochs, 0)
    t0 = time.time()
    runs = []
    for seed in seeds:
        start = time.time()
        out = lorenz_outcome(train(ds, cfg, seed, log_every=log_every), ds)
        runs.append({"seed": int(seed), "seconds": time.time() - start, **out})
        log.info("lorenz seed %d: %s", seed, runs[-1])
        if stop_after is not None and sum(r["success"] for r in runs) >= stop_after:
            break
    return {"runs": runs, "successes": sum(r["success"] for r in runs), "seconds": time.time() - t0,
            "n_ics": n_ics, "epochs": epochs}
