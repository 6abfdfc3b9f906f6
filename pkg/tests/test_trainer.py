from dataclasses import replace

import numpy as np
import pytest

from sindyae import datagen
from sindyae.bayes import PriorConfig
from sindyae.config import preset_config
from sindyae.container import read_checkpoint, write_checkpoint
from sindyae.datagen import Dataset, GeneratorConfig
from sindyae.objective import LossWeights
from sindyae.sindy import LibrarySpec, SindyModel
from sindyae.trainer import (PosteriorEnsemble, TrainConfig, TrainedModel, Trainer, TrainingDivergence, fuv,
                             refine, select_model, train, train_run)

OSC_SPEC = LibrarySpec(latent_dim=2, poly_order=1)


def osc_config(epochs=2000, refine_epochs=0, interval=500, **kw):
    return TrainConfig(library=OSC_SPEC, widths=(16,), epochs=epochs, refine_epochs=refine_epochs, batch_size=500,
                       lr=1e-3, weights=LossWeights(0.1, 0.01, 1e-5), threshold_interval=interval, **kw)


@pytest.fixture(scope="module")
def osc():
    return datagen.oscillator_dataset(20, 100, 0.05, 10, seed=0)


# ---------------------------------------------------------------- fuv


def test_fuv_identity_and_mean(rng):
    X = rng.standard_normal((50, 4))
    assert fuv(X, X) == 0.0
    assert fuv(X, np.broadcast_to(X.mean(axis=0), X.shape)) == pytest.approx(1.0, abs=1e-14)


def test_fuv_loop_oracle(rng):
    X, Y = rng.standard_normal((40, 3)), rng.standard_normal((40, 3))
    mean = [sum(X[i, j] for i in range(40)) / 40 for j in range(3)]
    num = sum((X[i, j] - Y[i, j]) ** 2 for i in range(40) for j in range(3))
    den = sum((X[i, j] - mean[j]) ** 2 for i in range(40) for j in range(3))
    assert abs(fuv(X, Y) - num / den) <= 1e-12


def test_fuv_errors():
    with pytest.raises(ValueError, match="zero variance"):
        fuv(np.ones((5, 2)), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        fuv(np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        fuv(np.ones((4, 2)), np.ones((4, 3)))


# ------------------------------------------------------- model selection


def _candidate(n_active, fuv_dx, fuv_x=0.01, seed=0):
    spec = LibrarySpec(latent_dim=3, poly_order=2)
    mask = np.zeros((spec.n_terms, 3))
    mask.flat[:n_active] = 1.0
    model = SindyModel(spec, np.ones_like(mask), mask)
    return TrainedModel(None, model, PosteriorEnsemble(), [], {"fuv_dx": fuv_dx, "fuv_x": fuv_x}, seed)


def test_select_single():
    c = _candidate(5, 0.3)
    assert select_model([c]) is c


def test_select_fewest_terms():
    seven, ten = _candidate(7, 0.02, seed=0), _candidate(10, 0.01, seed=1)
    assert select_model([ten, seven]) is seven


def test_select_tie_rules():
    a, b = _candidate(4, 0.2, seed=0), _candidate(4, 0.1, seed=1)
    assert select_model([a, b]) is b
    c, d = _candidate(4, 0.1, 0.05, seed=2), _candidate(4, 0.1, 0.01, seed=3)
    assert select_model([c, d]) is d
    e, f = _candidate(4, 0.1, 0.01, seed=5), _candidate(4, 0.1, 0.01, seed=4)
    assert select_model([e, f]) is f


def test_select_excludes_empty_models():
    empty, full = _candidate(0, 0.9, seed=0), _candidate(6, 0.1, seed=1)
    assert select_model([empty, full]) is full
    only = [_candidate(0, 0.9, seed=2), _candidate(0, 0.5, seed=3)]
    assert select_model(only).seed == 3
    with pytest.raises(ValueError):
        select_model([])


# ---------------------------------------------------------- training loop


def test_zero_epochs_returns_initial_model(osc):
    cfg = osc_config(epochs=0, refine_epochs=0)
    m = train(osc, cfg, seed=3)
    init = Trainer(osc, cfg, seed=3)
    assert m.history == []
    np.testing.assert_array_equal(m.sindy.xi, init.state.params["xi"])
    assert np.all(m.sindy.mask == 1.0)
    for k, v in m.autoencoder.named().items():
        np.testing.assert_array_equal(v, init.state.params[k])


def test_determinism_bitwise(osc):
    cfg = osc_config(epochs=30, refine_epochs=10, interval=10)
    a, b = train(osc, cfg, seed=1), train(osc, cfg, seed=1)
    np.testing.assert_array_equal(a.sindy.xi, b.sindy.xi)
    np.testing.assert_array_equal(a.sindy.mask, b.sindy.mask)
    for k, v in a.autoencoder.named().items():
        np.testing.assert_array_equal(v, b.autoencoder.named()[k])
    assert a.history == b.history
    assert a.metrics == b.metrics


def test_history_length_identity_and_monotone_support(osc):
    cfg = osc_config(epochs=60, refine_epochs=20, interval=20)
    m = train(osc, cfg, seed=0)
    assert len(m.history) == 80
    w = cfg.weights
    for h in m.history:
        expect = h.recon + w.lambda1 * h.sindy_x + w.lambda2 * h.sindy_z + w.lambda3 * h.reg
        assert abs(h.total - expect) <= 1e-12 * max(1.0, abs(h.total))
    counts = m.active_history
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert all(h.reg == 0.0 for h in m.history[60:])


def test_nan_loss_aborts_with_diagnostic():
    X = np.full((20, 3), 1e200)
    ds = Dataset(X, np.ones((20, 3)), 0.1)
    cfg = TrainConfig(library=LibrarySpec(2, 1), widths=(4,), epochs=2, refine_epochs=0, threshold_interval=1)
    with pytest.raises(TrainingDivergence) as e:
        train(ds, cfg)
    assert e.value.epoch == 0
    assert e.value.term == "recon"
    assert "epoch 0" in str(e.value)


def test_second_order_needs_xddot(osc):
    cfg = TrainConfig(library=LibrarySpec(1, 1, model_order=2), widths=(4,), epochs=1, threshold_interval=1)
    with pytest.raises(ValueError, match="Xddot"):
        Trainer(osc, cfg)


# ---------------------------------------------------------------- refine


def test_refine_zero_epochs_is_identity(osc):
    m = train(osc, osc_config(epochs=10, interval=10), seed=0)
    assert refine(m, osc, osc_config(epochs=10, refine_epochs=0, interval=10)) is m


def test_refine_keeps_mask_bitwise(osc):
    cfg = osc_config(epochs=200, interval=100)
    m = train(osc, cfg, seed=2)
    r = refine(m, osc, osc_config(epochs=200, refine_epochs=50, interval=100))
    np.testing.assert_array_equal(r.sindy.mask, m.sindy.mask)
    assert len(r.history) == 250
    assert not np.array_equal(r.sindy.xi, m.sindy.xi)


def test_refine_lowers_sindy_z_on_oscillator(osc):
    wins = 0
    for seed in range(5):
        m = train(osc, osc_config(epochs=400, refine_epochs=200, interval=200), seed=seed)
        start, end = m.history[400].sindy_z, m.history[-1].sindy_z
        wins += end <= start
    assert wins >= 4


# ------------------------------------------------------------- checkpoints


def test_checkpoint_resume_matches_uninterrupted(osc, tmp_path):
    prior = PriorConfig(kind="ssgl", v0=0.05, v1=3.0, delta=0.08, omega0=0.05, omega_decay=0.995)
    cfg = osc_config(epochs=20, interval=20, prior=prior)
    full = Trainer(osc, cfg, seed=4).run()
    half = Trainer(osc, cfg, seed=4).run(max_epochs=10)
    template = half.autoencoder()
    write_checkpoint(tmp_path / "ck", half.state, template, cfg.library, seed=4)
    state, *_ = read_checkpoint(tmp_path / "ck")
    resumed = Trainer(osc, cfg, seed=4, state=state).run()
    for k, v in full.state.params.items():
        np.testing.assert_array_equal(resumed.state.params[k], v)
    np.testing.assert_array_equal(resumed.state.emvs.rho, full.state.emvs.rho)
    assert resumed.state.history == full.state.history


def test_train_run_returns_final_state(osc):
    state, m = train_run(osc, osc_config(epochs=5, interval=5), seed=0)
    assert state.epoch == 5
    np.testing.assert_array_equal(state.params["xi"], m.sindy.xi)


# ------------------------------------------------------------ pendulum config


@pytest.mark.parametrize("name", ["pendulum", "pendulum_ssgl"])
def test_pendulum_config_accepted_and_runs(name):
    rc = preset_config(name)
    ds = datagen.generate(GeneratorConfig(system="pendulum", n_ics=2, steps=20, dt=0.02), seed=0)
    assert ds.n_features == rc.input_dim == 51 * 51
    cfg = replace(rc.train, epochs=2, refine_epochs=1, threshold_interval=1, batch_size=20)
    m = train(ds, cfg, seed=0)
    assert len(m.history) == 3
    assert m.autoencoder.encoder.layer_dims == [2601, 128, 64, 32, 1]
    assert np.all(np.isfinite(m.sindy.xi))
    assert set(m.metrics) >= {"fuv_x", "fuv_dx", "fuv_dz"}
