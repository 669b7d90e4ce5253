"""Backward stochastic Riccati equation: finite horizons, minimal stationary
solution, residual certificate and feedback gains.

All arrays carry a leading node axis. Constant specs use a single node and
no grid; factor-driven specs use the nodes of a ``FactorGrid`` and represent
the martingale term of the BSRE through the factor derivative,
``Q^{drive}(y) = sigma * dp/dy`` (zero for the other components).

In time-to-go ``tau`` the field march solves

    dp/dtau = 0.5 sigma^2 p'' + kappa (level - y) p' + G(y, p, q)

with the linear part implicit and ``G`` explicit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import (
    NotStabilizableError,
    ParameterError,
    PSDLossError,
    SolverIntegrityError,
)
from .linalg import loewner_leq, meansquare_abscissa, sym
from .model import (
    CoefficientSnapshot,
    FactorDynamics,
    ProblemSpec,
    coefficient_batch,
    factor_stationary_law,
    validate,
)

log = logging.getLogger(__name__)

PSD_FLOOR = -1e-9
N_FLOOR_TOL = 1e-9
DIVERGENCE = 1e12
MAX_DT = 1e-2


@dataclass(frozen=True)
class FactorGrid:
    y_lo: float
    y_hi: float
    m: int = 121

    def __post_init__(self):
        if not self.y_lo < self.y_hi:
            raise ParameterError(f"grid needs y_lo < y_hi, got {self.y_lo}, {self.y_hi}")
        if self.m < 9:
            raise ParameterError(f"grid needs at least 9 nodes, got {self.m}")

    @classmethod
    def around(cls, fd: FactorDynamics, m: int = 121, width: float = 6.0) -> "FactorGrid":
        mean, var = factor_stationary_law(fd)
        sd = math.sqrt(var)
        return cls(mean - width * sd, mean + width * sd, m)

    @property
    def h(self) -> float:
        return (self.y_hi - self.y_lo) / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.y_lo, self.y_hi, self.m)

    def to_json(self):
        return {"y_lo": self.y_lo, "y_hi": self.y_hi, "m": self.m}

    @classmethod
    def from_json(cls, obj):
        return cls(float(obj["y_lo"]), float(obj["y_hi"]), int(obj["m"]))


# -- finite differences on the factor grid --------------------------------------


def d_dy(u, h):
    """Central first derivative along axis 0, one-sided at the edges."""
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    out[0] = (u[1] - u[0]) / h
    out[-1] = (u[-1] - u[-2]) / h
    return out


def d2_dy2(u, h):
    """Second derivative on interior nodes; edges carry the u'' = 0 condition."""
    out = np.zeros_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    return out


def factor_generator(u, grid: FactorGrid, fd: FactorDynamics):
    """``0.5 sigma^2 u'' + kappa (level - y) u'`` on interior nodes (zero at edges)."""
    y = grid.nodes.reshape((-1,) + (1,) * (u.ndim - 1))
    out = 0.5 * fd.sigma**2 * d2_dy2(u, grid.h) + fd.kappa * (fd.level - y) * d_dy(u, grid.h)
    out[0] = 0.0
    out[-1] = 0.0
    return out


class ImplicitFactorSolve:
    """LU-factored ``I - dt L`` with linear-extrapolation rows at both edges."""

    def __init__(self, grid: FactorGrid, fd: FactorDynamics, dt: float):
        m, h = grid.m, grid.h
        y = grid.nodes
        diff = 0.5 * fd.sigma**2 / h**2
        adv = fd.kappa * (fd.level - y) / (2.0 * h)
        M = np.eye(m)
        i = np.arange(1, m - 1)
        M[i, i - 1] -= dt * (diff - adv[i])
        M[i, i] += dt * 2.0 * diff
        M[i, i + 1] -= dt * (diff + adv[i])
        M[0, :3] = [1.0, -2.0, 1.0]
        M[-1, -3:] = [1.0, -2.0, 1.0]
        self._lu = lu_factor(M)

    def __call__(self, rhs):
        rhs = rhs.copy()
        rhs[0] = 0.0
        rhs[-1] = 0.0
        flat = rhs.reshape(rhs.shape[0], -1)
        return lu_solve(self._lu, flat).reshape(rhs.shape)


def martingale_term(p, grid: FactorGrid | None, fd: FactorDynamics | None, d: int):
    """``Q^i`` for each Brownian component: ``sigma * dp/dy`` at the drive index."""
    q = np.zeros(p.shape[:1] + (d,) + p.shape[1:])
    if grid is not None and fd is not None:
        q[:, fd.drive] = fd.sigma * d_dy(p, grid.h)
    return q


# -- the generator ----------------------------------------------------------------


def _swap(M):
    return np.swapaxes(M, -1, -2)


def riccati_terms(snap: CoefficientSnapshot, P, Q):
    """Return ``(G, N, L)`` with ``L = PB + sum(C*PD + QD)`` and ``N = I + sum D*PD``."""
    A, B, C, D, S = snap.A, snap.B, snap.C, snap.D, snap.S
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    Pd = P[..., None, :, :]
    CtP = _swap(C) @ Pd
    L = P @ B + np.sum(CtP @ D + Q @ D, axis=-3)
    k = B.shape[-1]
    N = np.eye(k) + np.sum(_swap(D) @ Pd @ D, axis=-3)
    G = _swap(A) @ P + P @ A + S + np.sum(CtP @ C + _swap(C) @ Q + Q @ C, axis=-3)
    G = G - L @ np.linalg.solve(N, _swap(L))
    return sym(G), N, L


def generator_G(snap: CoefficientSnapshot, P, Q=None):
    """Drift of ``-dP``: the right-hand side of the Riccati equation at ``(P, Q)``.

    ``Q`` defaults to zero (one ``n x n`` block per Brownian component).
    """
    P = np.asarray(P, dtype=float)
    if Q is None:
        d = np.shape(snap.C)[-3]
        Q = np.zeros(P.shape[:-2] + (d,) + P.shape[-2:])
    return riccati_terms(snap, P, Q)[0]


# -- solutions ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Stationary pair ``(P, Q)``.

    ``p`` has shape ``(m, n, n)`` and ``q`` shape ``(m, d, n, n)``; ``m == 1``
    and ``grid is None`` for the constant representation.
    """

    p: np.ndarray
    q: np.ndarray
    grid: FactorGrid | None = None
    history: tuple = field(default=())
    dt: float | None = None

    @property
    def kind(self) -> str:
        return "constant" if self.grid is None else "field"

    @property
    def P(self) -> np.ndarray:
        if self.grid is not None:
            raise AttributeError("field solution has no single P; use .p")
        return self.p[0]

    @classmethod
    def constant(cls, P, d: int) -> "RiccatiSolution":
        P = np.atleast_2d(np.asarray(P, dtype=float))
        return cls(P[None], np.zeros((1, d) + P.shape))

    @classmethod
    def on_grid(cls, spec: ProblemSpec, grid: FactorGrid, p, **kw) -> "RiccatiSolution":
        p = np.asarray(p, dtype=float)
        return cls(p, martingale_term(p, grid, spec.factor, spec.dims.d), grid, **kw)

    def to_json(self):
        out = {"kind": self.kind}
        if self.grid is None:
            out["P"] = self.P.tolist()
        else:
            out["grid"] = self.grid.to_json()
            out["P"] = self.p.tolist()
        out["horizons"] = [float(h) for h, _ in self.history]
        return out


@dataclass(frozen=True, eq=False)
class GainSet:
    """Per-node ``Lambda`` (k x n), ``H`` (n x n), ``K^i`` (d, n x n), ``N`` (k x k)."""

    Lam: np.ndarray
    H: np.ndarray
    K: np.ndarray
    N: np.ndarray
    grid: FactorGrid | None = None


def _stepper(spec: ProblemSpec, grid: FactorGrid | None, dt: float):
    snap = coefficient_batch(spec, None if grid is None else grid.nodes)
    d = spec.dims.d
    fd = spec.factor

    if grid is None:
        zeroQ = None

        def G(p):
            nonlocal zeroQ
            if zeroQ is None:
                zeroQ = np.zeros(p.shape[:1] + (d,) + p.shape[1:])
            return riccati_terms(snap, p, zeroQ)

        def step(p):
            k1 = G(p)[0]
            k2 = G(p + 0.5 * dt * k1)[0]
            k3 = G(p + 0.5 * dt * k2)[0]
            k4 = G(p + dt * k3)[0]
            return p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    else:
        solve = ImplicitFactorSolve(grid, fd, dt)

        def G(p):
            return riccati_terms(snap, p, martingale_term(p, grid, fd, d))

        def step(p):
            return solve(p + dt * G(p)[0])

    return snap, step


def _project_psd(p, tau):
    p = sym(p)
    if not np.all(np.isfinite(p)):
        return p
    w, V = np.linalg.eigh(p)
    lo = float(w.min())
    if lo < PSD_FLOOR:
        raise PSDLossError(f"Riccati iterate lost PSD at time-to-go {tau:.6g} (min eigenvalue {lo:.3e})", tau)
    if lo < 0.0:
        p = sym((V * np.clip(w, 0.0, None)[..., None, :]) @ _swap(V))
    return p


def _march(spec, grid, p0, dt, checkpoints, on_checkpoint=None, limit=np.inf):
    """March ``p0`` forward in time-to-go, returning the iterate at each checkpoint step."""
    snap, step = _stepper(spec, grid, dt)
    D = snap.D
    k = spec.dims.k
    p = np.array(p0, dtype=float)
    out = []
    n_done = 0
    for target in checkpoints:
        while n_done < target:
            p = _project_psd(step(p), (n_done + 1) * dt)
            n_done += 1
            if not np.all(np.isfinite(p)) or np.max(np.abs(p)) > limit:
                out.append(p)
                return out, False
        N = np.eye(k) + np.sum(_swap(D) @ p[:, None] @ D, axis=-3)
        nmin = float(np.min(np.linalg.eigvalsh(sym(N))))
        if nmin < 1.0 - N_FLOOR_TOL:
            raise PSDLossError(f"N floor violated at time-to-go {n_done * dt:.6g} (min eigenvalue {nmin:.3e})",
                               n_done * dt)
        out.append(p.copy())
        if on_checkpoint is not None and on_checkpoint(n_done * dt, p, out):
            break
    return out, True


def _with_retries(fn, dt, retries=2):
    last = None
    for attempt in range(retries + 1):
        try:
            return fn(dt / 2**attempt)
        except PSDLossError as exc:
            log.warning("PSD loss with dt=%g, halving (%s)", dt / 2**attempt, exc)
            last = exc
    raise last


def _initial(spec, grid, P_T):
    n = spec.dims.n
    m = 1 if grid is None else grid.m
    if P_T is None:
        return np.zeros((m, n, n))
    P_T = np.asarray(P_T, dtype=float)
    if P_T.ndim == 2:
        P_T = np.broadcast_to(P_T, (m, n, n))
    return np.array(P_T)


def _check_grid(spec, grid):
    if spec.is_constant:
        return None
    return grid if grid is not None else FactorGrid.around(spec.factor)


def solve_finite_horizon(spec: ProblemSpec, grid: FactorGrid | None = None, T: float = 1.0,
                         P_T=None, dt: float = MAX_DT):
    """Value at time 0 of the Riccati solution on ``[0, T]`` with terminal ``P_T``.

    Returns an ``(n, n)`` matrix for constant specs and an ``(m, n, n)`` field
    otherwise.
    """
    if dt > MAX_DT:
        raise ParameterError(f"dt must be <= {MAX_DT}, got {dt}")
    grid = _check_grid(spec, grid)
    p0 = _initial(spec, grid, P_T)
    if T <= 0:
        res = p0
    else:
        def run(h):
            n_steps = max(1, math.ceil(T / h - 1e-9))
            out, _ = _march(spec, grid, p0, T / n_steps, [n_steps])
            return out[-1]

        res = _with_retries(run, dt)
    return res[0] if grid is None else res


def minimal_stationary(spec: ProblemSpec, grid: FactorGrid | None = None, tol: float = 1e-10,
                       dt: float = MAX_DT, j_start: int = 2, j_cap: int = 10) -> RiccatiSolution:
    """Minimal stationary solution as the limit of zero-terminal finite horizons.

    Horizons ``2^j`` for ``j = j_start .. j_cap`` are checkpoints of one
    march in time-to-go. Consecutive checkpoints must be Loewner
    nondecreasing within ``10 * dt``; the march stops once the sup-node
    Frobenius change between checkpoints drops below ``tol``.

    Raises:
        NotStabilizableError: no convergence by horizon ``2^j_cap``.
        SolverIntegrityError: monotonicity violated beyond the slack.
    """
    if dt > MAX_DT:
        raise ParameterError(f"dt must be <= {MAX_DT}, got {dt}")
    report = validate(spec)
    if not report.passed:
        raise ParameterError("spec fails validation: " + "; ".join(c.name for c in report.failures()))
    grid = _check_grid(spec, grid)
    p0 = _initial(spec, grid, None)

    def run(h):
        per_unit = max(1, math.ceil(1.0 / h - 1e-9))
        h = 1.0 / per_unit
        steps = [per_unit * 2**j for j in range(j_start, j_cap + 1)]
        state = {"converged": False, "diffs": []}

        def on_checkpoint(tau, p, out):
            if len(out) < 2:
                return False
            prev = out[-2]
            for node in range(p.shape[0]):
                if not loewner_leq(prev[node], p[node], 10.0 * h):
                    raise SolverIntegrityError(
                        f"horizon family not monotone at tau={tau:g}, node {node} "
                        f"(min eig of increment {np.min(np.linalg.eigvalsh(sym(p[node] - prev[node]))):.3e})")
            diff = float(np.max(np.linalg.norm(p - prev, axis=(-2, -1))))
            state["diffs"].append(diff)
            log.debug("horizon %g: sup-node change %.3e", tau, diff)
            if diff < tol:
                state["converged"] = True
                return True
            return False

        out, finite = _march(spec, grid, p0, h, steps, on_checkpoint, DIVERGENCE)
        if not finite:
            raise NotStabilizableError(
                "Riccati iterates diverged: not stabilizable (finite cost condition violated)")
        if not state["converged"]:
            raise NotStabilizableError(
                f"no convergence by horizon 2^{j_cap} (last change {state['diffs'][-1] if state['diffs'] else float('nan'):.3e}): "
                "not stabilizable (finite cost condition violated)")
        history = tuple((float(2**(j_start + i)), o) for i, o in enumerate(out))
        return out[-1], history, h

    p, history, h = _with_retries(run, dt)
    if grid is None:
        return RiccatiSolution(p, np.zeros((1, spec.dims.d) + p.shape[1:]), None, history, h)
    return RiccatiSolution.on_grid(spec, grid, p, history=history, dt=h)


def residual_norm(spec: ProblemSpec, sol: RiccatiSolution) -> float:
    """Frobenius norm of the stationary drift; max over interior nodes for fields."""
    snap = coefficient_batch(spec, None if sol.grid is None else sol.grid.nodes)
    G = riccati_terms(snap, sol.p, sol.q)[0]
    if sol.grid is None:
        return float(np.linalg.norm(G[0]))
    R = factor_generator(sol.p, sol.grid, spec.factor) + G
    return float(np.max(np.linalg.norm(R[1:-1], axis=(-2, -1))))


def gains(spec: ProblemSpec, sol: RiccatiSolution) -> GainSet:
    """Feedback gain ``Lambda = -N^{-1} L*`` with the derived ``H``, ``K^i`` and ``N``."""
    snap = coefficient_batch(spec, None if sol.grid is None else sol.grid.nodes)
    _, N, L = riccati_terms(snap, sol.p, sol.q)
    Lam = -np.linalg.solve(N, _swap(L))
    H = snap.A + snap.B @ Lam
    K = snap.C + snap.D @ Lam[:, None]
    return GainSet(Lam, H, K, sym(N), sol.grid)


def stability_certificate(spec: ProblemSpec, g: GainSet) -> float:
    """Mean-square spectral abscissa of the homogeneous closed loop (NaN for fields)."""
    if g.grid is not None:
        return float("nan")
    return meansquare_abscissa(g.H[0], list(g.K[0]))
