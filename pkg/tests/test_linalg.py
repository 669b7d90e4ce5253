import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import kron_abscissa
from ergolq.errors import CorruptedStateError, DimensionError, NotMeanSquareStableError
from ergolq.linalg import loewner_leq, lyapunov_solve, meansquare_abscissa, spd_solve


def test_loewner_basic():
    assert loewner_leq(np.eye(2), 2 * np.eye(2), 0.0)
    assert not loewner_leq(2 * np.eye(2), np.eye(2), 0.0)
    assert loewner_leq(np.eye(2), np.eye(2) - 1e-3 * np.eye(2), 1e-2)


def test_loewner_order_mismatch():
    with pytest.raises(DimensionError):
        loewner_leq(np.eye(2), np.eye(3), 0.0)


def test_loewner_stack():
    P1 = np.stack([np.eye(2), np.zeros((2, 2))])
    assert loewner_leq(P1, P1 + 0.1 * np.eye(2), 0.0)


def test_spd_solve():
    N = np.array([[2.0, 0.5], [0.5, 1.0]])
    v = np.array([1.0, -1.0])
    np.testing.assert_allclose(spd_solve(N, v), np.linalg.solve(N, v), atol=1e-14)


def test_spd_solve_floor():
    with pytest.raises(CorruptedStateError):
        spd_solve(np.diag([1.0, 0.3]), np.ones(2))


@pytest.mark.parametrize("H, Ks, expected", [
    (np.array([[-1.0]]), [], -2.0),
    (np.array([[-np.sqrt(2)]]), [np.zeros((1, 1))], -2 * np.sqrt(2)),
    (np.array([[-1.0]]), [np.array([[1.0]])], -1.0),
    (np.diag([-1.0, -3.0]), [], -2.0),
])
def test_abscissa_cases(H, Ks, expected):
    assert meansquare_abscissa(H, Ks) == pytest.approx(expected)


def test_abscissa_order_cap():
    with pytest.raises(DimensionError):
        meansquare_abscissa(-np.eye(17), [])


def test_lyapunov_scalar():
    # 2 H m + K^2 m + 1 = 0 with H = -1, K = 1 -> m = 1
    M = lyapunov_solve(np.array([[-1.0]]), [np.array([[1.0]])], np.ones((1, 1)))
    assert M[0, 0] == pytest.approx(1.0)


def test_lyapunov_singular():
    with pytest.raises(NotMeanSquareStableError):
        lyapunov_solve(np.zeros((1, 1)), [], np.ones((1, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2), st.integers(0, 2**32 - 1))
def test_lyapunov_residual_and_symmetry(n, d, seed):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(n, n))
    H -= (np.max(np.linalg.eigvals(H).real) + 1.0) * np.eye(n)
    Ks = [0.3 * rng.normal(size=(n, n)) for _ in range(d)]
    if kron_abscissa(H, Ks) >= -0.1:
        return
    R = rng.normal(size=(n, n))
    R = R + R.T
    M = lyapunov_solve(H, Ks, R)
    res = H @ M + M @ H.T + sum((K @ M @ K.T for K in Ks), np.zeros((n, n))) + R
    assert np.abs(res).max() < 1e-9
    np.testing.assert_allclose(M, M.T, atol=1e-10)
    assert meansquare_abscissa(H, Ks) == pytest.approx(kron_abscissa(H, Ks), abs=1e-10)
