"""Stationary dual (costate) equation and the affine part of the optimal control.

The stationary costate ``(r, g)`` solves

    0 = L r + (H* - shift) r + P f + sum_i (K^i)* g^i

where ``L`` is the factor generator (absent for constant specs) and
``g^{drive} = sigma * dr/dy``. ``shift = 0`` gives the stationary costate;
``shift = alpha`` gives the rescaled discounted costate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ClosedLoopUnstableError, SolverError
from .model import ProblemSpec, coefficient_batch
from .riccati import (
    GainSet,
    ImplicitFactorSolve,
    RiccatiSolution,
    d_dy,
    factor_generator,
)


@dataclass(frozen=True, eq=False)
class CostateSolution:
    """``rho`` has shape ``(m, n)``, ``g`` shape ``(m, d, n)``."""

    rho: np.ndarray
    g: np.ndarray
    grid: object = None
    shift: float = 0.0

    @property
    def r(self) -> np.ndarray:
        if self.grid is not None:
            raise AttributeError("field costate has no single r; use .rho")
        return self.rho[0]

    def to_json(self):
        if self.grid is None:
            return {"kind": "constant", "r": self.r.tolist(), "shift": self.shift}
        return {"kind": "field", "grid": self.grid.to_json(), "rho": self.rho.tolist(), "shift": self.shift}


def _costate_g(rho, grid, spec):
    d = spec.dims.d
    g = np.zeros(rho.shape[:1] + (d,) + rho.shape[1:])
    if grid is not None:
        fd = spec.factor
        g[:, fd.drive] = fd.sigma * d_dy(rho, grid.h)
    return g


def _reaction(spec, sol, gset, rho, g, shift):
    snap = coefficient_batch(spec, None if sol.grid is None else sol.grid.nodes)
    Ht_r = np.einsum("mji,mj->mi", gset.H, rho) - shift * rho
    Pf = np.einsum("mij,mj->mi", sol.p, snap.f)
    Kt_g = np.einsum("mdji,mdj->mi", gset.K, g)
    return Ht_r + Pf + Kt_g


def costate_residual(spec: ProblemSpec, sol: RiccatiSolution, gset: GainSet, cost: CostateSolution) -> float:
    """Max-node norm of the stationary costate operator (interior nodes for fields)."""
    R = _reaction(spec, sol, gset, cost.rho, cost.g, cost.shift)
    if sol.grid is None:
        return float(np.linalg.norm(R[0]))
    R = R + factor_generator(cost.rho, sol.grid, spec.factor)
    return float(np.max(np.linalg.norm(R[1:-1], axis=-1)))


def solve_stationary_costate(spec: ProblemSpec, sol: RiccatiSolution, gset: GainSet,
                             tol: float = 1e-10, dt: float = 1e-2, shift: float = 0.0,
                             horizon_cap: float = 1024.0) -> CostateSolution:
    """Stationary costate for the closed loop described by ``gset``.

    Constant specs solve ``(shift I - H*) r = P f`` directly. Field specs
    march the finite-horizon dual equation from ``r = 0`` in time-to-go
    until the per-unit-time change falls below ``tol``.

    Raises:
        ClosedLoopUnstableError: ``H - shift I`` is not Hurwitz (constant case).
        SolverError: the field march did not settle by ``horizon_cap``.
    """
    n = spec.dims.n
    if sol.grid is None:
        H = gset.H[0]
        f = coefficient_batch(spec).f[0]
        abscissa = float(np.max(np.linalg.eigvals(H).real)) - shift
        if abscissa >= 0:
            raise ClosedLoopUnstableError(f"closed loop not stable: spectral abscissa of H is {abscissa:.3e}")
        M = shift * np.eye(n) - H.T
        try:
            r = np.linalg.solve(M, sol.P @ f)
        except np.linalg.LinAlgError:
            raise ClosedLoopUnstableError("closed loop not stable: H* is singular") from None
        rho = r[None]
        return CostateSolution(rho, np.zeros((1, spec.dims.d, n)), None, shift)

    grid = sol.grid
    solve = ImplicitFactorSolve(grid, spec.factor, dt)
    rho = np.zeros((grid.m, n))
    max_steps = math.ceil(horizon_cap / dt)
    change = math.inf
    for _ in range(max_steps):
        g = _costate_g(rho, grid, spec)
        new = solve(rho + dt * _reaction(spec, sol, gset, rho, g, shift))
        change = float(np.max(np.abs(new - rho))) / dt
        rho = new
        if not np.all(np.isfinite(rho)):
            raise SolverError("costate march diverged")
        if change < tol:
            break
    else:
        raise SolverError(f"costate march did not settle by horizon {horizon_cap} (rate {change:.3e})")
    return CostateSolution(rho, _costate_g(rho, grid, spec), grid, shift)


def affine_term(spec: ProblemSpec, sol: RiccatiSolution, gset: GainSet, cost: CostateSolution) -> np.ndarray:
    """``u_aff = -N^{-1} (B* r + sum (D^i)* g^i)`` per node, shape ``(m, k)``."""
    return -np.linalg.solve(gset.N, costate_v(spec, sol, cost)[..., None])[..., 0]


def costate_v(spec: ProblemSpec, sol: RiccatiSolution, cost: CostateSolution) -> np.ndarray:
    """``v = B* r + sum (D^i)* g^i`` per node."""
    snap = coefficient_batch(spec, None if sol.grid is None else sol.grid.nodes)
    return np.einsum("mik,mi->mk", snap.B, cost.rho) + np.einsum("mdik,mdi->mk", snap.D, cost.g)
