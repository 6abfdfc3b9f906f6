import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sindyae.autodiff import DimensionError
from sindyae.bayes import (AdamState, EMVSState, PriorConfig, adam_step, cyclical_lr, emvs_em_estimates,
                           emvs_sa_blend, init_emvs, sgld_step, ssgl_log_prior_grad)

PEND = PriorConfig("ssgl", v0=0.05, v1=3.0, delta=0.08, sigma=1.0)


def test_prior_validation():
    for bad in (dict(v0=0), dict(delta=1.0), dict(sigma=-1), dict(kind="horseshoe"), dict(omega0=0)):
        with pytest.raises(ValueError):
            PriorConfig(**{"kind": "ssgl", **bad})
    p = PriorConfig("ssgl", omega0=0.05, omega_decay=0.995)
    assert p.omega(0) == 0.05 and p.omega(10) < p.omega(9)


def test_adam_zero_gradient_and_first_step():
    w = {"w": np.array([[1.0, -2.0]])}
    new, st = adam_step(w, {"w": np.zeros((1, 2))}, AdamState(), 0.1)
    assert np.array_equal(new["w"], w["w"]) and st.t == 1
    new, _ = adam_step(w, {"w": np.array([[3.0, -0.5]])}, AdamState(), 0.1)
    assert np.allclose(new["w"] - w["w"], [[-0.1, 0.1]], atol=1e-8)


def test_adam_quadratic_converges():
    p, s = {"w": np.zeros((1, 1))}, AdamState()
    for _ in range(200):
        p, s = adam_step(p, {"w": 2 * (p["w"] - 3)}, s, 0.1)
    assert abs(p["w"][0, 0] - 3) < 0.05


def test_adam_shape_error_and_purity():
    p = {"w": np.zeros((2, 2))}
    with pytest.raises(DimensionError):
        adam_step(p, {"w": np.zeros((2, 1))}, AdamState(), 0.1)
    s = AdamState()
    adam_step(p, {"w": np.ones((2, 2))}, s, 0.1)
    assert s.t == 0 and not s.m


def test_sgld_noise_only_variance():
    rng = np.random.default_rng(0)
    p = {"w": np.zeros((1, 100_000))}
    out = sgld_step(p, {"w": np.zeros((1, 100_000))}, {}, 0.04, 10, 10, rng)
    assert abs(out["w"].var() / 0.04 - 1) < 0.03


def test_sgld_scaling_and_errors():
    rng = np.random.default_rng(0)
    p = {"w": np.zeros((1, 1))}
    g = {"w": np.ones((1, 1))}
    assert sgld_step(p, g, {}, 0.2, 10, 10, rng, noise=False)["w"][0, 0] == pytest.approx(0.1)
    assert sgld_step(p, g, {}, 0.2, 10, 5, rng, noise=False)["w"][0, 0] == pytest.approx(0.2)
    with pytest.raises(ValueError):
        sgld_step(p, g, {}, 0.2, 5, 10, rng)
    with pytest.raises(ValueError):
        sgld_step(p, g, {}, 0.0, 10, 10, rng)


def test_sgld_determinism():
    p, g = {"w": np.zeros((3, 3))}, {"w": np.ones((3, 3))}
    a = sgld_step(p, g, {}, 0.1, 10, 5, np.random.default_rng(4))
    b = sgld_step(p, g, {}, 0.1, 10, 5, np.random.default_rng(4))
    assert np.array_equal(a["w"], b["w"])


def test_sgld_without_noise_is_gradient_ascent():
    p = {"w": np.array([[0.5, -1.0]])}
    gl, gp = {"w": np.array([[1.0, 2.0]])}, {"w": np.array([[-0.5, 0.25]])}
    out = sgld_step(p, gl, gp, 1e-3, 40, 8, np.random.default_rng(0), noise=False)
    assert np.allclose(out["w"], p["w"] + 0.5e-3 * (gp["w"] + 5 * gl["w"]), rtol=0, atol=1e-15)


def test_sgld_gaussian_target():
    # log p(w) = -(w - 2)^2 / 2 split as N=1 "likelihood" term
    rng = np.random.default_rng(1)
    w = {"w": np.zeros((1, 1))}
    draws = []
    for t in range(60_000):
        w = sgld_step(w, {"w": -(w["w"] - 2.0)}, {}, 0.01, 1, 1, rng)
        if t >= 5000:
            draws.append(w["w"][0, 0])
    draws = np.array(draws)
    # effective sample size from the AR(1) structure: rho = 1 - eps/2
    rho = 1 - 0.005
    se = math.sqrt(draws.var() * (1 + rho) / (1 - rho) / draws.size)
    assert abs(draws.mean() - 2.0) <= 3 * se
    assert abs(draws.var() - 1.0) <= 0.2


def test_cyclical_lr():
    assert cyclical_lr(0, 100, 4, 0.3) == 0.3
    assert cyclical_lr(25, 100, 4, 0.3) == 0.3
    assert cyclical_lr(12, 100, 4, 1.0) == pytest.approx(0.5 * (math.cos(math.pi * 12 / 25) + 1))
    assert cyclical_lr(50, 100, 1, 0.2) == pytest.approx(0.1)
    assert cyclical_lr(99, 100, 1, 0.2) < 1e-3
    vals = [cyclical_lr(t, 100, 1, 1.0) for t in range(100)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def ssgl_oracle(x, delta, v0, v1, sigma=1.0):
    a = delta * math.exp(-x * x / (2 * sigma**2 * v1)) / math.sqrt(2 * math.pi * sigma**2 * v1)
    b = (1 - delta) * math.exp(-abs(x) / (sigma * v0)) / (2 * sigma * v0)
    return a / (a + b)


def test_emvs_estimates_vs_density_oracle():
    xi = np.array([[0.001], [1.0], [0.3]])
    rho, k0, k1 = emvs_em_estimates(xi, PEND)
    for i, x in enumerate(xi[:, 0]):
        assert rho[i, 0] == pytest.approx(ssgl_oracle(x, 0.08, 0.05, 3.0), rel=1e-12)
    assert rho[0, 0] < 0.01 and rho[1, 0] > 0.99
    assert np.allclose(k0, (1 - rho) / 0.05) and np.allclose(k1, rho / 3.0)


def test_emvs_symmetric_point_and_no_underflow():
    # delta chosen so the two weighted densities agree at xi = 0
    v0, v1 = 0.5, 1 / (2 * math.pi)
    delta = 1 / (1 + 1 / (2 * v0))
    rho, *_ = emvs_em_estimates(np.zeros((1, 1)), PriorConfig("ssgl", v0=v0, v1=v1, delta=delta))
    assert rho[0, 0] == pytest.approx(0.5, abs=1e-12)
    rho, *_ = emvs_em_estimates(np.array([[1e3, -1e3]]), PEND)
    assert np.all(np.isfinite(rho))


def test_sa_blend():
    st = EMVSState(np.full((1, 1), 0.2), np.zeros((1, 1)), np.zeros((1, 1)), 3)
    est = (np.full((1, 1), 0.6), np.full((1, 1), 8.0), np.full((1, 1), 0.2))
    full = emvs_sa_blend(st, est, 1.0)
    assert full.rho[0, 0] == 0.6 and full.kappa0[0, 0] == 8.0 and full.k == 4
    assert emvs_sa_blend(st, est, 0.5).rho[0, 0] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        emvs_sa_blend(st, est, 0.0)


def test_sa_blend_contracts_to_constant_target():
    prior = PriorConfig("ssgl", omega0=0.05, omega_decay=0.995)
    st = EMVSState(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    est = (np.full((1, 1), 0.7), np.full((1, 1), 6.0), np.full((1, 1), 0.2))
    gap = 0.7
    for k in range(200):
        w = prior.omega(k)
        st = emvs_sa_blend(st, est, w)
        new_gap = abs(st.rho[0, 0] - 0.7)
        assert new_gap == pytest.approx(gap * (1 - w), rel=1e-9, abs=1e-15)
        gap = new_gap


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(1e-3, 1)), min_size=1, max_size=30))
def test_blends_stay_in_range(seq):
    st_ = init_emvs(np.array([[0.1, -2.0]]), PEND)
    for r, w in seq:
        est = (np.full((1, 2), r), np.full((1, 2), (1 - r) / 0.05), np.full((1, 2), r / 3))
        st_ = emvs_sa_blend(st_, est, w)
        assert np.all((0 <= st_.rho) & (st_.rho <= 1))
        assert np.all(st_.kappa0 >= 0) and np.all(st_.kappa1 >= 0)


def test_ssgl_prior_gradient():
    xi = np.array([[0.5, -0.2]])
    st_ = EMVSState(np.zeros((1, 2)), np.array([[2.0, 4.0]]), np.array([[0.1, 0.3]]))
    g = ssgl_log_prior_grad(xi, st_, PEND)
    assert np.allclose(g, [[-(2.0 + 0.05), -(-4.0 - 0.06)]])


def support_trial(seed):
    rng = np.random.default_rng(seed)
    p, N, n = 12, 200, 50
    theta = rng.normal(size=(N, p))
    beta = np.zeros((p, 1))
    support = rng.choice(p, 3, replace=False)
    beta[support, 0] = rng.choice([-1, 1], 3) * rng.uniform(1, 2, 3)
    y = theta @ beta + 0.1 * rng.normal(size=(N, 1))
    b = np.zeros((p, 1))
    state = init_emvs(b, PEND)
    for _ in range(2000):
        idx = rng.choice(N, n, replace=False)
        grad = theta[idx].T @ (y[idx] - theta[idx] @ b) / 0.1**2
        b = sgld_step({"b": b}, {"b": grad}, {"b": ssgl_log_prior_grad(b, state, PEND)}, 1e-5, N, n, rng)["b"]
        state = emvs_sa_blend(state, emvs_em_estimates(b, PEND), PEND.omega(state.k + 1))
    off = np.delete(state.rho[:, 0], support)
    return state.rho[support, 0].min() > 0.9 and off.max() < 0.1


def test_sgld_emvs_support_recovery():
    assert sum(support_trial(s) for s in range(20)) >= 18
