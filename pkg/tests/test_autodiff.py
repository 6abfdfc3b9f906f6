import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sindyae import autodiff as ad
from sindyae.autodiff import DimensionError, Tape

from conftest import central_fd, rel_err


def loop_matmul(A, B):
    C = np.zeros((A.shape[0], B.shape[1]))
    for i in range(A.shape[0]):
        for k in range(B.shape[1]):
            for j in range(A.shape[1]):
                C[i, k] += A[i, j] * B[j, k]
    return C


def test_matmul_identity_and_hand_values():
    B = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(np.eye(2), B).value, B)
    out = ad.matmul(B, np.ones((2, 1))).value
    assert np.array_equal(out, [[3.0], [7.0]])


def test_matmul_matches_triple_loop(rng):
    A, B = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    assert np.max(np.abs(ad.matmul(A, B).value - loop_matmul(A, B))) <= 1e-12


dims = st.integers(1, 32)


@given(st.data())
def test_elementwise_ops_match_loops(data):
    m, n, k = data.draw(dims), data.draw(dims), data.draw(st.integers(1, 8))
    floats = st.floats(-10, 10)
    A = data.draw(arrays(np.float64, (m, n), elements=floats))
    B = data.draw(arrays(np.float64, (n, k), elements=floats))
    C = data.draw(arrays(np.float64, (m, n), elements=floats))
    bias = data.draw(arrays(np.float64, (1, n), elements=floats))
    assert np.max(np.abs(ad.matmul(A, B).value - loop_matmul(A, B)), initial=0) <= 1e-12 * max(1, np.abs(A).max() * np.abs(B).max() * n)
    added = ad.add(A, bias).value
    had = ad.mul(A, C).value
    for i in range(m):
        for j in range(n):
            assert added[i, j] == A[i, j] + bias[0, j]
            assert had[i, j] == A[i, j] * C[i, j]


def test_shape_errors():
    with pytest.raises(DimensionError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        ad.add(np.ones((2, 3)), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        ad.mul(np.ones((2, 3)), np.ones((3, 2)))


def test_sigmoid_values():
    assert ad.sigmoid_family(np.zeros((1, 1)), 0).value[0, 0] == 0.5
    assert ad.sigmoid_family(np.zeros((1, 1)), 1).value[0, 0] == 0.25
    assert ad.sigmoid_family(np.zeros((1, 1)), 2).value[0, 0] == 0.0


@pytest.mark.parametrize("x", [-2.0, 0.0, 3.0])
def test_sigmoid_second_derivative_vs_fd(x):
    h = 1e-5
    fd = (ad.sigmoid_deriv(np.array(x + h), 1) - ad.sigmoid_deriv(np.array(x - h), 1)) / (2 * h)
    exact = ad.sigmoid_deriv(np.array(x), 2)
    # f''(0) = 0, so compare absolutely there
    assert abs(fd - exact) <= 1e-6 * max(abs(exact), 1e-3)


def test_sigmoid_saturates_without_overflow():
    with np.errstate(all="raise"):
        v = ad.sigmoid_family(np.array([[-800.0, 800.0]]), 0).value
    assert v[0, 0] == 0.0 and v[0, 1] == 1.0


def test_backward_quadratic():
    tape = Tape()
    W = tape.param("W", np.arange(6.0).reshape(2, 3))
    loss = ad.sum_all(ad.mul(W, W))
    g = tape.backward(loss)
    assert np.array_equal(g["W"], 2 * W.value)


def test_backward_small_net_vs_fd(rng):
    x = rng.normal(size=(3, 4))
    Wv, bv = rng.normal(size=(4, 2)), rng.normal(size=(1, 2))

    def value():
        return float(np.sum(ad.sigmoid_deriv(x @ Wv + bv, 0)))

    tape = Tape()
    W, b = tape.param("W", Wv), tape.param("b", bv)
    g = tape.backward(ad.sum_all(ad.sigmoid_family(ad.add(ad.matmul(x, W), b))))
    assert rel_err(g["W"], central_fd(value, Wv)) <= 1e-6
    assert rel_err(g["b"], central_fd(value, bv)) <= 1e-6


def test_unreached_parameter_gets_zero_gradient():
    tape = Tape()
    a = tape.param("a", np.ones((2, 2)))
    tape.param("unused", np.ones((3, 1)))
    g = tape.backward(ad.sum_all(a))
    assert g["unused"].shape == (3, 1) and not g["unused"].any()


def test_backward_rejects_non_scalar_and_is_repeatable(rng):
    tape = Tape()
    a = tape.param("a", rng.normal(size=(2, 2)))
    with pytest.raises(ValueError):
        tape.backward(ad.square(a))
    loss = ad.sum_all(ad.sin(ad.square(a)))
    before = a.value.copy()
    g1, g2 = tape.backward(loss), tape.backward(loss)
    assert np.array_equal(g1["a"], g2["a"])
    assert np.array_equal(a.value, before)


@pytest.mark.parametrize("op", ["sub", "scale", "absolute", "sin", "cos", "columns", "hstack", "sum_sq_diff", "sigmoid2"])
def test_every_primitive_gradient(op, rng):
    A0 = rng.normal(size=(3, 4)) + 0.5
    B0 = rng.normal(size=(3, 4))
    R = rng.normal(size=(3, 4))

    def expr(A, B):
        if op == "sub":
            return ad.sub(A, B)
        if op == "scale":
            return ad.scale(A, -2.5)
        if op == "absolute":
            return ad.absolute(A)
        if op == "sin":
            return ad.sin(A)
        if op == "cos":
            return ad.cos(A)
        if op == "columns":
            return ad.hstack([ad.columns(A, [2, 0, 2]), ad.columns(B, [1])])
        if op == "hstack":
            return ad.columns(ad.hstack([A, B]), [0, 5, 7, 3])
        if op == "sum_sq_diff":
            return ad.sum_sq_diff(A, B)
        return ad.sigmoid_family(A, 2)

    def scalar(A, B):
        out = expr(A, B)
        w = R[:, : out.shape[1]] if out.shape[0] == 3 else np.ones(out.shape)
        return ad.sum_all(ad.mul(out, ad.Var(w)))

    tape = Tape()
    A, B = tape.param("A", A0), tape.param("B", B0)
    g = tape.backward(scalar(A, B))
    for name, arr in (("A", A0), ("B", B0)):
        fd = central_fd(lambda: scalar(ad.Var(A0), ad.Var(B0)).value[0, 0], arr)
        assert rel_err(g[name], fd) <= 1e-6, name


def test_check_finite_flags_overflow():
    tape = Tape(check_finite=True)
    a = tape.param("a", np.array([[1e200]]))
    with pytest.raises(FloatingPointError):
        ad.square(a)


def test_untraced_ops_do_not_record():
    tape = Tape()
    tape.param("p", np.ones((1, 1)))
    n = len(tape.nodes)
    ad.matmul(np.ones((2, 2)), np.ones((2, 2)))
    assert len(tape.nodes) == n


def test_operands_from_two_tapes_rejected():
    a = Tape().param("a", np.ones((2, 2)))
    b = Tape().param("b", np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.add(a, b)
