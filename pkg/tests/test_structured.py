"""Stable block-Schur parameterization and the low-rank bilinear form."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fastslow.autodiff as ad
from fastslow.autodiff import Tensor
from fastslow.structured import (BilinearNetConfig, SchurNetConfig, bilinear_net,
                                 block_eigenvalues, restrict_block,
                                 schur_eigenvalues, schur_layout,
                                 schur_param_count, schur_net, assemble_schur)

RNG = np.random.default_rng(11)


def test_schur_layout_counts():
    assert schur_layout(2)[:2] == (1, False)
    assert schur_layout(3)[:2] == (1, True)
    assert schur_layout(12)[:2] == (6, False)


def test_restrict_block_ranges():
    for _ in range(200):
        raw = RNG.normal(size=4) * 5
        r_big, r_small, theta, phi = (float(ad.value_of(v))
                                      for v in restrict_block(*raw, delta=1e-3))
        assert r_big < 0
        assert abs(r_big) >= abs(r_small) + 1e-3 - 1e-12
        assert abs(theta) < np.pi / 2


def _random_matrices(seed, n, count):
    cfg = SchurNetConfig(n_slow=3, n_fast=n, hidden=(8,))
    params = cfg.init(np.random.default_rng(seed))
    xs = np.random.default_rng(seed + 1).normal(size=(count, 3))
    with ad.no_grad():
        t = schur_net(cfg, params, Tensor(xs))
    return t.value


@pytest.mark.parametrize("n", [2, 3, 5, 12])
def test_schur_matrices_are_stable(n):
    mats = _random_matrices(n, n, 50)
    for mat in mats:
        eig = np.linalg.eigvals(mat)
        assert np.all(eig.real < 0)


@pytest.mark.parametrize("n", [2, 3, 6])
def test_closed_form_eigenvalues_match_eigensolver(n):
    mats = _random_matrices(100 + n, n, 50)
    closed = schur_eigenvalues(mats)
    for mat, eigs in zip(mats, closed):
        ref = np.linalg.eigvals(mat)
        ref = ref[np.argsort(ref.real + 1e-6 * ref.imag)]
        got = np.array(sorted(eigs, key=lambda v: (v.real + 1e-6 * v.imag)))
        np.testing.assert_allclose(got, ref, atol=1e-10)


def test_block_eigenvalues_closed_form():
    # block [[a, b], [c, d]]: eigenvalues m +/- sqrt(m^2 - p)
    blk = np.array([[-1.0, 2.0], [-0.5, -2.0]])
    got = np.sort_complex(np.asarray(block_eigenvalues(blk)))
    ref = np.sort_complex(np.linalg.eigvals(blk))
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_initialized_eigenvalues_near_requested():
    cfg = SchurNetConfig(n_slow=2, n_fast=4, hidden=(8,), init_eig=-0.5)
    params = cfg.init(np.random.default_rng(0))
    with ad.no_grad():
        t = schur_net(cfg, params, Tensor(np.zeros((1, 2))))
    eigs = schur_eigenvalues(t.value)[0]
    assert np.all(np.abs(eigs.real + 0.5) < 0.2)


def test_schur_net_gradient():
    cfg = SchurNetConfig(n_slow=2, n_fast=3, hidden=(6,))
    params = cfg.init(np.random.default_rng(1))
    prng = np.random.default_rng(2)
    params = ad.tree_map(lambda a: a + 0.1 * prng.normal(size=np.shape(a)), params)
    xs = RNG.normal(size=(3, 2))
    tgt = RNG.normal(size=(3, 3, 3))

    def loss(p):
        return ad.tsum((schur_net(cfg, p, Tensor(xs)) - Tensor(tgt)) ** 2)

    assert ad.check_gradient(loss, params, step=1e-4) < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2 ** 31 - 1))
def test_stability_fuzz(n, seed):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=schur_param_count(n)) * 3
    mat = assemble_schur(raw, n, delta=1e-3)
    eig = np.linalg.eigvals(np.asarray(ad.value_of(mat)))
    assert np.all(eig.real < 0)


# ---------------------------------------------------------------------------
# bilinear form


def test_bilinear_zero_at_zero_fast_state():
    cfg = BilinearNetConfig(n_slow=2, n_fast=3, rank=2, hidden=(8,))
    params = cfg.init(np.random.default_rng(3))
    prng = np.random.default_rng(4)
    params = ad.tree_map(lambda a: a + 0.3 * prng.normal(size=np.shape(a)), params)
    x = RNG.normal(size=(5, 2))
    y0 = np.zeros((5, 3))
    with ad.no_grad():
        out = bilinear_net(cfg, params, Tensor(x), Tensor(y0), 1e-3)
    assert np.all(out.value == 0.0)


def test_bilinear_apply_is_quadratic():
    from fastslow.structured import bilinear_apply, bilinear_coeffs

    cfg = BilinearNetConfig(n_slow=2, n_fast=3, rank=2, hidden=(8,))
    params = cfg.init(np.random.default_rng(5))
    prng = np.random.default_rng(6)
    params = ad.tree_map(lambda a: a + 0.3 * prng.normal(size=np.shape(a)), params)
    x = RNG.normal(size=(4, 2))
    y = RNG.normal(size=(4, 3))
    with ad.no_grad():
        c, d = bilinear_coeffs(cfg, params, Tensor(x), Tensor(y), 1e-3)
        one = bilinear_apply(c, d, Tensor(y), Tensor(y)).value
        two = bilinear_apply(c, d, Tensor(2 * y), Tensor(2 * y)).value
    np.testing.assert_allclose(two, 4 * one, rtol=1e-12)


def test_bilinear_gradient():
    cfg = BilinearNetConfig(n_slow=2, n_fast=2, rank=1, hidden=(6,))
    params = cfg.init(np.random.default_rng(7))
    prng = np.random.default_rng(8)
    params = ad.tree_map(lambda a: a + 0.2 * prng.normal(size=np.shape(a)), params)
    x = RNG.normal(size=(3, 2))
    y = RNG.normal(size=(3, 2))
    tgt = RNG.normal(size=(3, 2))

    def loss(p):
        return ad.tsum((bilinear_net(cfg, p, Tensor(x), Tensor(y), 1e-3)
                        - Tensor(tgt)) ** 2)

    assert ad.check_gradient(loss, params, step=1e-4) < 1e-5
