import numpy as np
import pytest

from sindyae import autodiff as ad
from sindyae.autodiff import Tape
from sindyae.bayes import EMVSState, PriorConfig, adam_step, AdamState
from sindyae.datagen import GeneratorConfig, generate
from sindyae.network import Autoencoder, MLPParams, init_autoencoder, init_xavier
from sindyae.objective import LossWeights, loss_recon, loss_sindy_x, loss_sindy_z, regularizer, total_loss
from sindyae.sindy import LibrarySpec, SindyModel, build_library, init_xi

from conftest import central_fd, rel_err


def linear(W, b=None):
    W = np.asarray(W, dtype=float)
    b = np.zeros((1, W.shape[1])) if b is None else np.asarray(b, dtype=float).reshape(1, -1)
    return MLPParams([W.shape[0], W.shape[1]], [W], [b])


def identity_ae(n):
    return Autoencoder(linear(np.eye(n)), linear(np.eye(n)))


def sig(x):
    return 1 / (1 + np.exp(-x))


def loop_net(p: MLPParams, x):
    a = np.array(x, dtype=float)
    for j, (W, b) in enumerate(zip(p.weights, p.biases)):
        l = np.array([sum(a[i] * W[i, k] for i in range(len(a))) + b[0, k] for k in range(W.shape[1])])
        a = l if j == p.n_layers - 1 else sig(l)
    return a


def loop_dz(p: MLPParams, x, dx):
    """Scalar-loop chain rule for the time derivative of the network output."""
    a, da = np.array(x, float), np.array(dx, float)
    for j, (W, b) in enumerate(zip(p.weights, p.biases)):
        l = np.array([sum(a[i] * W[i, k] for i in range(len(a))) + b[0, k] for k in range(W.shape[1])])
        dl = np.array([sum(da[i] * W[i, k] for i in range(len(a))) for k in range(W.shape[1])])
        if j == p.n_layers - 1:
            return dl
        a, da = sig(l), sig(l) * (1 - sig(l)) * dl


def test_recon_identity_and_constant(rng):
    X = rng.normal(size=(6, 3))
    assert loss_recon(identity_ae(3), X) == 0.0
    c = np.array([1.0, -2.0, 0.5])
    ae = Autoencoder(linear(np.zeros((3, 2))), linear(np.zeros((2, 3)), c))
    assert np.isclose(loss_recon(ae, X), np.mean(np.sum((X - c) ** 2, axis=1)), rtol=1e-14)
    with pytest.raises(ValueError):
        loss_recon(ae, np.zeros((0, 3)))


def test_recon_vs_loop_oracle(rng):
    ae = init_autoencoder(4, [5], 2, seed=1)
    X = rng.normal(size=(3, 4))
    oracle = np.mean([np.sum((x - loop_net(ae.decoder, loop_net(ae.encoder, x))) ** 2) for x in X])
    assert abs(loss_recon(ae, X) - oracle) <= 1e-12


def test_sindy_x_zero_prediction(rng):
    spec = LibrarySpec(2, 2)
    model = SindyModel(spec, rng.normal(size=(spec.n_terms, 2)), np.zeros((spec.n_terms, 2)))
    X, Xd = rng.normal(size=(2, 5, 2))
    assert np.isclose(loss_sindy_x(identity_ae(2), model, X, Xd), np.mean(np.sum(Xd**2, axis=1)), rtol=1e-14)


def test_exact_linear_fixed_point(rng):
    A = np.array([[-0.1, 2.0], [-2.0, -0.1]])
    spec = LibrarySpec(2, 1)
    xi = np.vstack([np.zeros((1, 2)), A.T])
    model = SindyModel(spec, xi)
    Z = rng.normal(size=(8, 2))
    Zd = Z @ A.T
    ae = identity_ae(2)
    assert loss_sindy_x(ae, model, Z, Zd) == pytest.approx(0, abs=1e-28)
    assert loss_sindy_z(ae, model, Z, Zd) == pytest.approx(0, abs=1e-28)


def test_masked_perturbation_leaves_loss_unchanged(rng):
    ae = init_autoencoder(4, [6], 2, seed=0)
    spec = LibrarySpec(2, 2)
    xi = rng.normal(size=(spec.n_terms, 2))
    mask = np.ones_like(xi)
    mask[3, 1] = 0
    X, Xd = rng.normal(size=(2, 5, 4))
    a = total_loss(ae, SindyModel(spec, xi, mask), (X, Xd), prior=PriorConfig()).data.value
    xi2 = xi.copy()
    xi2[3, 1] = 50.0
    b = total_loss(ae, SindyModel(spec, xi2, mask), (X, Xd), prior=PriorConfig()).data.value
    assert np.array_equal(a, b)


def test_sindy_z_zero_and_lorenz_truth():
    spec = LibrarySpec(3, 3)
    model = SindyModel(spec, np.zeros((20, 3)))
    assert loss_sindy_z(identity_ae(3), model, np.ones((4, 3)), np.zeros((4, 3))) == 0.0
    ds = generate(GeneratorConfig(system="lorenz", n_ics=4, steps=50), seed=0)
    names = spec.term_names()
    xi = np.zeros((20, 3))
    for (term, col), v in {("z1", 0): -10, ("z2", 0): 10, ("z1", 1): 28, ("z2", 1): -1, ("z1*z3", 1): -1,
                           ("z1*z2", 2): 1, ("z3", 2): -8 / 3}.items():
        xi[names.index(term), col] = v
    val = loss_sindy_z(identity_ae(3), SindyModel(spec, xi), ds.Z, ds.Zdot)
    assert val <= 1e-20 * np.mean(np.sum(ds.Zdot**2, axis=1))


def test_sindy_z_vs_loop_oracle(rng):
    ae = init_autoencoder(3, [4], 2, seed=2)
    spec = LibrarySpec(2, 2, include_sine=True)
    model = SindyModel(spec, rng.normal(size=(spec.n_terms, 2)))
    X, Xd = rng.normal(size=(2, 4, 3))
    oracle = 0.0
    for x, dx in zip(X, Xd):
        z = loop_net(ae.encoder, x)
        dz = loop_dz(ae.encoder, x, dx)
        theta = build_library(z[None, :], spec)[0]
        pred = [sum(theta[i] * model.xi[i, k] for i in range(spec.n_terms)) for k in range(2)]
        oracle += sum((dz[k] - pred[k]) ** 2 for k in range(2))
    assert abs(loss_sindy_z(ae, model, X, Xd) - oracle / 4) <= 1e-12


def test_order2_needs_second_derivatives(rng):
    ae = init_autoencoder(3, [4], 1, seed=0)
    model = SindyModel(LibrarySpec(1, 2, True, 2), np.ones((LibrarySpec(1, 2, True, 2).n_terms, 1)))
    with pytest.raises(ValueError):
        loss_sindy_x(ae, model, np.ones((2, 3)), np.ones((2, 3)))


def test_order2_linear_decoder_exact(rng):
    # z'' = -z with identity nets: sindy_x and sindy_z both vanish
    spec = LibrarySpec(1, 1, model_order=2)
    xi = np.array([[0.0], [-1.0], [0.0]])
    model = SindyModel(spec, xi)
    t = np.linspace(0, 3, 10)[:, None]
    Z, Zd, Zdd = np.sin(t), np.cos(t), -np.sin(t)
    ae = identity_ae(1)
    assert loss_sindy_x(ae, model, Z, Zd, Zdd) < 1e-30
    assert loss_sindy_z(ae, model, Z, Zd, Zdd) < 1e-30


def test_regularizer_modes():
    spec = LibrarySpec(1, 1, include_constant=True, model_order=1)
    spec2 = LibrarySpec(2, 0)
    zero = SindyModel(spec, np.zeros((2, 1)))
    rho1 = EMVSState(np.ones((2, 1)), np.zeros((2, 1)), np.ones((2, 1)) / 3.0)
    for prior, aux in ((PriorConfig("l1"), None), (PriorConfig("laplace"), None), (PriorConfig("ssgl"), rho1)):
        assert regularizer(zero, prior, aux).value[0, 0] == 0.0
    m = SindyModel(LibrarySpec(2, 1, include_constant=False), np.array([[1.0, -1.0], [2.0, 0.0]]))
    assert regularizer(m, PriorConfig("l1")).value[0, 0] == 1.0
    assert regularizer(m, PriorConfig("laplace", v0=0.5)).value[0, 0] == 8.0
    aux = EMVSState(np.ones((2, 2)), np.zeros((2, 2)), np.full((2, 2), 1 / 3.0))
    quad = regularizer(m, PriorConfig("ssgl", v1=3.0), aux).value[0, 0]
    assert quad == pytest.approx(6.0 / (2 * 3.0), rel=1e-15)
    with pytest.raises(ValueError):
        regularizer(m, PriorConfig("ssgl"))
    assert regularizer(m, PriorConfig("l1"), refine=True).value[0, 0] == 0.0
    assert spec2.n_terms == 1


def test_total_loss_weighting(rng):
    ae = init_autoencoder(4, [6], 2, seed=0)
    spec = LibrarySpec(2, 2)
    model = SindyModel(spec, rng.normal(size=(spec.n_terms, 2)))
    batch = tuple(rng.normal(size=(2, 5, 4)))
    b0 = total_loss(ae, model, batch, LossWeights(0, 0, 0)).breakdown()
    assert b0.total == b0.recon
    b1 = total_loss(ae, model, batch, LossWeights(0, 0, 1)).breakdown()
    assert b1.total == pytest.approx(b1.recon + np.abs(model.xi).sum() / model.xi.size, rel=1e-14)
    w = LossWeights(5e-4, 5e-5, 1e-5)
    b = total_loss(ae, model, batch, w).breakdown()
    assert abs(b.total - (b.recon + w.lambda1 * b.sindy_x + w.lambda2 * b.sindy_z + w.lambda3 * b.reg)) <= 1e-12
    assert min(b.recon, b.sindy_x, b.sindy_z, b.reg) >= 0
    with pytest.raises(ValueError):
        LossWeights(-1, 0, 0)


@pytest.mark.parametrize("order,kind", [(1, "l1"), (2, "ssgl"), (1, "laplace")])
def test_total_loss_gradient_vs_fd(order, kind, rng):
    ae = init_autoencoder(3, [4], 1, seed=3)
    spec = LibrarySpec(1, 2, include_sine=True, model_order=order)
    xi = rng.normal(size=(spec.n_terms, 1))
    xi[np.abs(xi) < 1e-3] = 0.5
    model = SindyModel(spec, xi)
    batch = tuple(rng.normal(size=(3, 5, 3)))
    aux = EMVSState(np.full(xi.shape, 0.3), np.full(xi.shape, 2.0), np.full(xi.shape, 0.1))
    w = LossWeights(0.3, 0.2, 0.1)
    prior = PriorConfig(kind)

    tape = Tape()
    g = tape.backward(total_loss(ae, model, batch, w, prior, aux, tape=tape).total)
    params = {**ae.named(), "xi": model.xi}

    def value():
        return total_loss(ae.replace_named(params), SindyModel(spec, params["xi"]), batch, w, prior, aux).total.value[0, 0]

    for name, arr in params.items():
        assert rel_err(g[name], central_fd(value, arr)) <= 1e-6, name


def test_order2_loss_decreases_on_pendulum():
    ds = generate(GeneratorConfig(system="pendulum", n_ics=4, steps=60), seed=0)
    spec = LibrarySpec(1, 3, True, 2)
    w = LossWeights(5e-4, 5e-5, 1e-5)
    ok = 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        ae = init_autoencoder(ds.n_features, [32, 16], 1, rng)
        params = {**ae.named(), "xi": init_xi(spec, "ones")}
        state = AdamState()
        losses = []
        for _ in range(100):
            idx = rng.choice(ds.n_samples, 64, replace=False)
            tape = Tape()
            model = SindyModel(spec, params["xi"])
            terms = total_loss(ae.replace_named(params), model, (ds.X[idx], ds.Xdot[idx], ds.Xddot[idx]), w,
                               tape=tape)
            losses.append(terms.total.value[0, 0])
            params, state = adam_step(params, tape.backward(terms.total), state, 1e-3)
        ok += np.mean(losses[-10:]) < np.mean(losses[:10])
    assert ok >= 4
