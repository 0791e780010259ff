import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from knockoff_machines.errors import BadParam, NonFinite, NotPositiveDefinite
from knockoff_machines.numerics import (
    cholesky,
    make_rng,
    sample_gamma,
    sample_std_normal,
    substreams,
    sym_eigs,
    symmetrize,
)


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_hand_example():
    L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-14)


def test_cholesky_indefinite_raises():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cholesky_jitter_reconstruction(rng):
    A = rng.standard_normal((6, 6))
    m = A @ A.T
    L = cholesky(m, jitter=0.3)
    target = m + 0.3 * np.eye(6)
    assert np.linalg.norm(L @ L.T - target) / np.linalg.norm(target) < 1e-10


def test_cholesky_escalates_on_singular():
    v = np.array([1.0, 2.0, 3.0])
    L = cholesky(np.outer(v, v))
    assert np.all(np.isfinite(L))


def test_cholesky_success_matches_eigenvalue_sign(rng):
    # min eigenvalue >= -1e-8 exactly when factorization with that jitter works
    for _ in range(100):
        Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        lam = rng.uniform(0.5, 1.5, 5)
        lam[0] = rng.choice([-1, 1]) * rng.uniform(1e-3, 0.3)
        lam *= 5 / lam.sum()  # trace / dim = 1, so the jitter is 1e-8
        m = symmetrize((Q * lam) @ Q.T)
        ok = sym_eigs(m)[0] >= -1e-8
        try:
            cholesky(m, 1e-8 * np.trace(m) / 5, escalate=False)
            worked = True
        except NotPositiveDefinite:
            worked = False
        assert ok == worked


def test_sym_eigs_examples():
    np.testing.assert_allclose(sym_eigs(np.eye(2)), [1, 1])
    np.testing.assert_allclose(sym_eigs(np.array([[1, 0.5], [0.5, 1]])), [0.5, 1.5])
    np.testing.assert_allclose(sym_eigs(np.zeros((2, 2))), [0, 0])


def test_sym_eigs_rejects_nan():
    with pytest.raises(NonFinite):
        sym_eigs(np.array([[1.0, np.nan], [np.nan, 1.0]]))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_sym_eigs_reconstruction(p, seed):
    A = np.random.default_rng(seed).standard_normal((p, p))
    m = symmetrize(A)
    lam = sym_eigs(m)
    assert np.all(np.diff(lam) >= 0)
    w, U = np.linalg.eigh(m)
    assert np.linalg.norm((U * lam) @ U.T - m) <= 1e-8 * max(1.0, np.linalg.norm(m))


def test_std_normal_determinism_and_moments():
    a = sample_std_normal(make_rng(1), 1, 1)
    b = sample_std_normal(make_rng(1), 1, 1)
    assert a == b
    z = sample_std_normal(make_rng(1), 100_000, 1)
    assert abs(z.mean()) < 0.02 and abs(z.var() - 1) < 0.02
    assert not np.array_equal(sample_std_normal(make_rng(1), 10, 10), sample_std_normal(make_rng(2), 10, 10))


def test_gamma_moments():
    g = sample_gamma(make_rng(3), 1.5, 1.5, 1_000_000)
    assert np.all(g > 0)
    assert abs(g.mean() - 1) < 0.01
    assert abs(g.var() - 2 / 3) < 0.02


@pytest.mark.parametrize("shape,rate", [(0, 1), (1, 0), (-1, 2)])
def test_gamma_bad_params(shape, rate):
    with pytest.raises(BadParam):
        sample_gamma(make_rng(0), shape, rate, 5)


def test_substreams_are_stable_and_distinct():
    a = [s.random() for s in substreams(9, 3)]
    b = [s.random() for s in substreams(9, 3)]
    assert a == b and len(set(a)) == 3
