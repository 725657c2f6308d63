"""Reverse-mode autodiff: primitives against central differences, tape
replay determinism, and parameter-tree utilities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fastslow.autodiff as ad
from fastslow.autodiff import Tensor


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def check_unary(op, x, tol=1e-7):
    def f_np(v):
        return float(ad.tsum(op(Tensor(v))).value)

    _, grads = ad.gradient(lambda p: ad.tsum(op(p["x"])), {"x": x})
    fd = central_diff(f_np, x)
    np.testing.assert_allclose(grads["x"], fd, rtol=tol, atol=tol)


RNG = np.random.default_rng(0)


@pytest.mark.parametrize("op", [
    ad.tanh, ad.exp, ad.sin, ad.cos,
    lambda t: ad.log(t * t + 1.0),
    lambda t: ad.sqrt(t * t + 0.5),
    lambda t: ad.absolute(t + 0.3),
    lambda t: t ** 3,
    lambda t: ad.tmean(t) + ad.tsum(t * t),
])
def test_unary_gradients_match_central_differences(op):
    check_unary(op, RNG.normal(size=(3, 4)))


def test_binary_gradients_match_central_differences():
    a0 = RNG.normal(size=(3, 4))
    b0 = RNG.normal(size=(3, 4)) + 3.0

    def loss(p):
        a, b = p["a"], p["b"]
        return ad.tsum(a * b + a / b - (a - b) + a * 0.5)

    _, grads = ad.gradient(loss, {"a": a0, "b": b0})
    fd_a = central_diff(lambda v: float(loss({"a": Tensor(v), "b": Tensor(b0)}).value), a0)
    fd_b = central_diff(lambda v: float(loss({"a": Tensor(a0), "b": Tensor(v)}).value), b0)
    np.testing.assert_allclose(grads["a"], fd_a, atol=1e-7)
    np.testing.assert_allclose(grads["b"], fd_b, atol=1e-7)


def test_matmul_gradient_matches_central_differences():
    a0 = RNG.normal(size=(4, 3))
    b0 = RNG.normal(size=(3, 5))

    def loss(p):
        return ad.tsum(ad.matmul(p["a"], p["b"]) ** 2)

    _, grads = ad.gradient(loss, {"a": a0, "b": b0})
    fd = central_diff(lambda v: float(loss({"a": Tensor(v), "b": Tensor(b0)}).value), a0)
    np.testing.assert_allclose(grads["a"], fd, atol=1e-6)


def test_batched_matmul_broadcasts_and_differentiates():
    a0 = RNG.normal(size=(7, 4, 3))
    b0 = RNG.normal(size=(3, 2))
    out = ad.matmul(Tensor(a0), Tensor(b0))
    assert out.shape == (7, 4, 2)
    np.testing.assert_allclose(out.value, a0 @ b0)

    def loss(p):
        return ad.tsum(ad.matmul(p["a"], Tensor(b0)) ** 2)

    _, grads = ad.gradient(loss, {"a": a0})
    fd = central_diff(lambda v: float(loss({"a": Tensor(v)}).value), a0)
    np.testing.assert_allclose(grads["a"], fd, atol=1e-6)


def test_broadcast_add_gradient_sums_over_broadcast_axes():
    a0 = RNG.normal(size=(5, 3))
    b0 = RNG.normal(size=(3,))

    def loss(p):
        return ad.tsum((p["a"] + p["b"]) ** 2)

    _, grads = ad.gradient(loss, {"a": a0, "b": b0})
    assert grads["b"].shape == (3,)
    fd = central_diff(lambda v: float(loss({"a": Tensor(a0), "b": Tensor(v)}).value), b0)
    np.testing.assert_allclose(grads["b"], fd, atol=1e-7)


def test_diamond_reuse_accumulates_gradient():
    # d/dx of (x*x + x*x) = 4x, with the intermediate reused twice
    def loss(p):
        s = p["x"] * p["x"]
        return ad.tsum(s + s)

    x0 = RNG.normal(size=(4,))
    _, grads = ad.gradient(loss, {"x": x0})
    np.testing.assert_allclose(grads["x"], 4 * x0, atol=1e-12)


def test_reshape_swapaxes_concat_stack_getitem_gradients():
    x0 = RNG.normal(size=(2, 6))

    def loss(p):
        x = p["x"]
        a = ad.reshape(x, (3, 4))
        b = ad.swapaxes(a, 0, 1)          # (4, 3)
        c = ad.concat([b, b], axis=0)     # (8, 3)
        d = ad.stack([c, c * 2.0], axis=0)  # (2, 8, 3)
        return ad.tsum(d[..., :2] ** 2)

    _, grads = ad.gradient(loss, {"x": x0})
    fd = central_diff(lambda v: float(loss({"x": Tensor(v)}).value), x0)
    np.testing.assert_allclose(grads["x"], fd, atol=1e-6)


def _skew_from(raw, n):
    s = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            s[i, j], s[j, i] = raw[k], -raw[k]
            k += 1
    return s


def test_expm_skew_is_orthogonal_and_matches_scipy():
    from scipy.linalg import expm

    for n in (2, 3, 6):
        s = _skew_from(RNG.normal(size=(n * (n - 1) // 2,)), n)
        q = ad.expm_skew(Tensor(s)).value
        np.testing.assert_allclose(q @ q.T, np.eye(n), atol=1e-12)
        np.testing.assert_allclose(q, expm(s), atol=1e-12)


def test_expm_skew_gradient():
    raw0 = RNG.normal(size=(3,))
    tgt = RNG.normal(size=(3, 3))

    def loss(p):
        r = p["r"]
        zero = Tensor(np.zeros(1))
        row0 = ad.concat([zero, r[0:1], r[1:2]], axis=0)
        row1 = ad.concat([-r[0:1], zero, r[2:3]], axis=0)
        row2 = ad.concat([-r[1:2], -r[2:3], zero], axis=0)
        s = ad.stack([row0, row1, row2], axis=0)
        return ad.tsum((ad.expm_skew(s) - Tensor(tgt)) ** 2)

    _, grads = ad.gradient(loss, {"r": raw0})
    fd = central_diff(lambda v: float(loss({"r": Tensor(v)}).value), raw0)
    np.testing.assert_allclose(grads["r"], fd, atol=1e-6)


def test_householder_orthogonal_properties_and_gradient():
    vecs0 = RNG.normal(size=(2, 5))
    q = ad.householder_orthogonal(Tensor(vecs0)).value
    assert q.shape == (5, 2)
    np.testing.assert_allclose(q.T @ q, np.eye(2), atol=1e-12)

    tgt = RNG.normal(size=(5, 2))

    def loss(p):
        return ad.tsum((ad.householder_orthogonal(p["v"]) - Tensor(tgt)) ** 2)

    _, grads = ad.gradient(loss, {"v": vecs0})
    fd = central_diff(lambda v: float(loss({"v": Tensor(v)}).value), vecs0)
    np.testing.assert_allclose(grads["v"], fd, atol=1e-6)


def test_gradient_is_deterministic_bitwise():
    x0 = RNG.normal(size=(6,))

    def loss(p):
        return ad.tsum(ad.tanh(p["x"]) * ad.exp(-p["x"] ** 2))

    v1, g1 = ad.gradient(loss, {"x": x0})
    v2, g2 = ad.gradient(loss, {"x": x0})
    assert v1 == v2
    assert np.array_equal(g1["x"], g2["x"])


def test_check_gradient_accepts_correct_and_flags_broken():
    x0 = RNG.normal(size=(4,))
    err = ad.check_gradient(lambda p: ad.tsum(p["x"] ** 3 + ad.sin(p["x"])),
                            {"x": x0})
    assert err < 1e-6

    class Broken(dict):
        pass

    def bad(p):
        # value path uses x**3 but we sabotage by detaching half the graph
        return ad.tsum(p["x"] ** 3) + float(np.sum(np.sin(ad.value_of(p["x"]))))

    err_bad = ad.check_gradient(bad, {"x": x0})
    assert err_bad > 1e-3


def test_tree_flatten_unflatten_roundtrip():
    tree = {"a": {"b": np.ones(2), "c": np.zeros((2, 2))}, "d": np.arange(3.0)}
    items = ad.tree_flatten(tree)
    assert [p for p, _ in items] == sorted(p for p, _ in items)
    back = ad.tree_unflatten(items)
    assert back.keys() == tree.keys()
    np.testing.assert_array_equal(back["a"]["b"], tree["a"]["b"])
    np.testing.assert_array_equal(back["d"], tree["d"])


def test_no_grad_blocks_tape():
    with ad.no_grad():
        t = ad.tanh(Tensor(np.ones(3)))
    assert t.parents == () and t.vjp is None


def test_non_finite_objective_raises():
    with pytest.raises(ad.NonFiniteError):
        ad.gradient(lambda p: ad.tsum(ad.log(p["x"])), {"x": np.array([-1.0])})


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_sum_matches_numpy(xs):
    arr = np.array(xs)
    assert float(ad.tsum(Tensor(arr)).value) == pytest.approx(arr.sum(), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_expm_skew_orthogonal_for_random_params(n, seed):
    raw = np.random.default_rng(seed).normal(size=(n * (n - 1) // 2,))
    q = ad.expm_skew(Tensor(_skew_from(raw, n))).value
    np.testing.assert_allclose(q @ q.T, np.eye(n), atol=1e-11)
    assert np.linalg.det(q) == pytest.approx(1.0, abs=1e-10)
