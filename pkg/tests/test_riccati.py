import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from conftest import SB1_P, SB2_P, SQRT2, factor_smoke, random_constant_spec, sb1, sb2
from ergolq.errors import NotStabilizableError, ParameterError
from ergolq.linalg import loewner_leq, min_eig
from ergolq.model import constant_spec
from ergolq.riccati import (
    FactorGrid,
    RiccatiSolution,
    gains,
    minimal_stationary,
    residual_norm,
    solve_finite_horizon,
    stability_certificate,
)


def policy_iteration(spec, iters=60):
    """Kleinman-type iteration on the gain, with its own Kronecker Lyapunov solves."""
    m = spec.model
    n, k = spec.dims.n, spec.dims.k
    I = np.eye(n)
    Lam = np.zeros((k, n))
    P = np.zeros((n, n))
    for _ in range(iters):
        H = m.A + m.B @ Lam
        Ks = [m.C[i] + m.D[i] @ Lam for i in range(spec.dims.d)]
        op = np.kron(I, H.T) + np.kron(H.T, I) + sum(np.kron(K.T, K.T) for K in Ks)
        rhs = -(m.S + Lam.T @ Lam).reshape(-1, order="F")
        P_new = np.linalg.solve(op, rhs).reshape(n, n, order="F")
        P_new = 0.5 * (P_new + P_new.T)
        N = np.eye(k) + sum(m.D[i].T @ P_new @ m.D[i] for i in range(spec.dims.d))
        L = P_new @ m.B + sum(m.C[i].T @ P_new @ m.D[i] for i in range(spec.dims.d))
        Lam = -np.linalg.solve(N, L.T)
        if np.abs(P_new - P).max() < 1e-14:
            break
        P = P_new
    return P_new


def test_sb1_closed_form():
    sol = minimal_stationary(sb1())
    assert sol.P[0, 0] == pytest.approx(SB1_P, abs=1e-9)
    g = gains(sb1(), sol)
    assert g.Lam[0, 0, 0] == pytest.approx(-SB1_P, abs=1e-9)
    assert g.H[0, 0, 0] == pytest.approx(-SQRT2, abs=1e-9)
    assert g.K[0, 0, 0, 0] == 0.0
    assert g.N[0, 0, 0] == 1.0
    assert stability_certificate(sb1(), g) == pytest.approx(-2 * SQRT2, abs=1e-8)


def test_sb2_closed_form():
    sol = minimal_stationary(sb2())
    assert sol.P[0, 0] == pytest.approx(SB2_P, abs=1e-9)
    g = gains(sb2(), sol)
    assert g.N[0, 0, 0] == pytest.approx(1 + SB2_P, abs=1e-9)
    assert g.Lam[0, 0, 0] == pytest.approx(-0.302776, abs=1e-6)
    H, K = g.H[0, 0, 0], g.K[0, 0, 0, 0]
    assert stability_certificate(sb2(), g) == pytest.approx(2 * H + K * K, abs=1e-12)
    assert stability_certificate(sb2(), g) == pytest.approx(-2.513878, abs=1e-6)


def test_zero_solution_gains():
    spec = sb2()
    g = gains(spec, RiccatiSolution.constant(np.zeros((1, 1)), 1))
    assert g.Lam[0, 0, 0] == 0.0
    assert g.H[0, 0, 0] == -1.0
    assert g.K[0, 0, 0, 0] == 0.0
    assert g.N[0, 0, 0] == 1.0


@pytest.mark.parametrize("T", [0.0, 0.01])
def test_finite_horizon_short(T):
    P = solve_finite_horizon(sb1(), T=T, dt=1e-3)
    # to first order P(T) = T S
    assert P[0, 0] == pytest.approx(T, abs=1e-4)


def test_finite_horizon_long_matches_stationary():
    P = solve_finite_horizon(sb1(), T=20.0)
    assert P[0, 0] == pytest.approx(SB1_P, abs=1e-12)


def test_finite_horizon_vs_ode_oracle():
    # SB2 scalar Riccati ODE in time-to-go: p' = -2p + 1 - p^2 / (1 + p)
    ref = solve_ivp(lambda t, p: -2 * p + 1 - p**2 / (1 + p), (0, 1.0), [0.0], rtol=1e-12, atol=1e-14).y[0, -1]
    assert solve_finite_horizon(sb2(), T=1.0)[0, 0] == pytest.approx(ref, abs=1e-9)


def test_dt_cap():
    with pytest.raises(ParameterError):
        minimal_stationary(sb1(), dt=0.02)
    with pytest.raises(ParameterError):
        solve_finite_horizon(sb1(), dt=0.05)


def test_unstable_spec_not_stabilizable():
    spec = constant_spec(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    with pytest.raises(NotStabilizableError, match="not stabilizable"):
        minimal_stationary(spec)


def test_invalid_spec_refused():
    with pytest.raises(ParameterError):
        minimal_stationary(constant_spec(-1.0, 1.0, 0.0, 0.0, 0.5, 1.0, 1.0))


def test_horizon_family_monotone_sb2():
    sol = minimal_stationary(sb2())
    ps = [p for _, p in sol.history]
    assert len(ps) >= 2
    for a, b in zip(ps, ps[1:]):
        assert loewner_leq(a, b, 10 * sol.dt)


def test_to_json_constant():
    out = minimal_stationary(sb1()).to_json()
    assert out["kind"] == "constant"
    assert out["P"][0][0] == pytest.approx(SB1_P)
    assert "grid" not in out


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**32 - 1))
def test_random_specs_match_policy_iteration(seed):
    spec = random_constant_spec(np.random.default_rng(seed))
    sol = minimal_stationary(spec)
    np.testing.assert_allclose(sol.P, policy_iteration(spec), atol=1e-8)
    assert residual_norm(spec, sol) < 1e-6
    assert min_eig(sol.P) >= -1e-9
    g = gains(spec, sol)
    m = spec.model
    np.testing.assert_array_equal(g.H[0], m.A + m.B @ g.Lam[0])
    for i in range(spec.dims.d):
        np.testing.assert_array_equal(g.K[0, i], m.C[i] + m.D[i] @ g.Lam[0])
    assert stability_certificate(spec, g) < 0


# -- factor-driven coefficients ------------------------------------------------

def test_field_residual_and_psd():
    spec = factor_smoke()
    sol = minimal_stationary(spec)
    assert sol.kind == "field"
    assert residual_norm(spec, sol) < 1e-6
    assert np.all(sol.p[:, 0, 0] > 0)
    with pytest.raises(AttributeError):
        sol.P
    assert math.isnan(stability_certificate(spec, gains(spec, sol)))


def test_field_without_amplitude_is_constant():
    sol = minimal_stationary(factor_smoke(amp=0.0))
    np.testing.assert_allclose(sol.p[:, 0, 0], SB1_P, atol=1e-9)
    np.testing.assert_allclose(sol.q, 0.0, atol=1e-9)


def test_field_grid_refinement():
    spec = factor_smoke()
    vals = []
    for m in (41, 81, 161):
        grid = FactorGrid.around(spec.factor, m)
        sol = minimal_stationary(spec, grid)
        vals.append(np.interp(0.0, grid.nodes, sol.p[:, 0, 0]))
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d2 <= d1 / 2
    assert d2 < 1e-6


def test_field_monotone_in_horizon():
    sol = minimal_stationary(factor_smoke())
    ps = [p for _, p in sol.history]
    for a, b in zip(ps, ps[1:]):
        assert loewner_leq(a, b, 10 * sol.dt)


def test_field_tracks_frozen_coefficient():
    # a stiffer A where the factor sits gives a smaller P there
    sol = minimal_stationary(factor_smoke(amp=0.25))
    p = sol.p[:, 0, 0]
    assert np.all(np.diff(p) > 0)
    # bracketed by the frozen scalar solutions A + sqrt(A^2 + 1) at A = -1.25 and -0.75
    assert -1.25 + math.hypot(1.25, 1) < p[0] and p[-1] < -0.75 + math.hypot(0.75, 1)


def test_field_to_json():
    out = minimal_stationary(factor_smoke()).to_json()
    assert out["kind"] == "field"
    assert out["grid"]["m"] == 121
    assert len(out["P"]) == 121
