"""Optimal feedback, stationary closed loop and its certificates.

The closed loop is obtained by substituting ``u = Lam X + u_aff`` into the
state equation, which gives

    dX = (H X + B u_aff + f) dt + sum_i (K^i X + D^i u_aff) dW^i.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .costate import CostateSolution, affine_term
from .errors import NoContractionError, NotMeanSquareStableError, ParameterError, SolverIntegrityError
from .linalg import lyapunov_solve, meansquare_abscissa, min_eig
from .model import BoundedMatrix, ProblemSpec
from .riccati import GainSet, RiccatiSolution, gains
from .simulate import (
    PHASE_BURN_IN,
    LinearFeedback,
    PathBundle,
    SimConfig,
    _blocks,
    _run,
    mean_square_profile,
    simulate_paths,
    stationary_factor_draw,
)

log = logging.getLogger(__name__)


class FeedbackLaw(LinearFeedback):
    """Optimal law ``u = Lam(y) x + u_aff(y)`` with the solutions it came from."""

    def __init__(self, gains: GainSet, u_aff, riccati: RiccatiSolution = None, costate: CostateSolution = None):
        super().__init__(gains.Lam, u_aff, gains.grid)
        self.gains = gains
        self.riccati = riccati
        self.costate = costate


def synthesize_feedback(spec: ProblemSpec, riccati: RiccatiSolution, costate: CostateSolution) -> FeedbackLaw:
    g = gains(spec, riccati)
    return FeedbackLaw(g, affine_term(spec, riccati, g, costate), riccati, costate)


def closed_loop_coefficients(spec: ProblemSpec, law: LinearFeedback):
    """Constant-case ``(H, [K^i], phi, [psi^i])`` for an arbitrary linear law."""
    if not spec.is_constant:
        raise ParameterError("closed-loop moments need constant coefficients")
    m = spec.model
    Lam, ua = law.at(None)
    H = m.A + m.B @ Lam
    Ks = [m.C[i] + m.D[i] @ Lam for i in range(spec.dims.d)]
    phi = m.B @ ua + m.f
    psis = [m.D[i] @ ua for i in range(spec.dims.d)]
    return H, Ks, phi, psis


def stationary_moments_constant(spec: ProblemSpec, law: LinearFeedback):
    """Exact stationary mean ``m`` and second moment ``M2 = E[X X*]``.

    Raises:
        NotMeanSquareStableError: the closed loop has no stationary law.
    """
    H, Ks, phi, psis = closed_loop_coefficients(spec, law)
    rate = meansquare_abscissa(H, Ks)
    if rate >= 0:
        raise NotMeanSquareStableError(f"closed loop not mean-square stable (abscissa {rate:.3e})")
    mean = np.linalg.solve(H, -phi)
    rhs = np.outer(phi, mean) + np.outer(mean, phi)
    for K, psi in zip(Ks, psis):
        Km = K @ mean
        rhs += np.outer(Km, psi) + np.outer(psi, Km) + np.outer(psi, psi)
    M2 = lyapunov_solve(H, Ks, rhs)
    floor = min_eig(M2 - np.outer(mean, mean))
    if floor < -1e-9:
        raise SolverIntegrityError(f"stationary covariance not PSD (min eigenvalue {floor:.3e})")
    return mean, M2


def moment_cost(spec: ProblemSpec, law: LinearFeedback, mean, M2) -> float:
    """``E[<S X, X> + |Lam X + u_aff|^2]`` from the first two moments."""
    Lam, ua = law.at(None)
    S = spec.model.S
    return float(np.trace((S + Lam.T @ Lam) @ M2) + 2.0 * ua @ Lam @ mean + ua @ ua)


@dataclass(frozen=True, eq=False)
class BurnInResult:
    samples: np.ndarray
    factor: np.ndarray
    n_used: float
    gaps: tuple
    lookbacks: tuple

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            n = self.samples.shape[1]
            w.writerow(["path_id"] + [f"x_{i + 1}" for i in range(n)] + ["y"])
            for i, (x, y) in enumerate(zip(self.samples, self.factor)):
                w.writerow([i] + [repr(float(v)) for v in x] + [repr(float(y))])

    def summary(self):
        return {"n_used": self.n_used, "gaps": list(self.gaps), "lookbacks": list(self.lookbacks),
                "n_paths": int(self.samples.shape[0])}


def _from_the_past(spec, law, cfg, lookback):
    """Closed loop run from ``-lookback`` with zero state to time 0."""
    K = int(round(lookback / cfg.dt))
    n = spec.dims.n
    x0 = np.zeros(n)
    y0 = None
    if spec.factor is not None:
        y0 = np.concatenate([stationary_factor_draw(spec, cfg.base_seed, b, hi - lo, tag=K)
                             for b, lo, hi in _blocks(cfg.n_paths)])
    parts = _run(spec, law, x0, cfg, K, y0=y0, phase=PHASE_BURN_IN, noise_index=lambda j: K - 1 - j,
                 t0=-K * cfg.dt)
    return np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts])


def burn_in_init(spec: ProblemSpec, law: LinearFeedback, sim: SimConfig, tol: float = 1e-8,
                 N0: float = 1.0, max_doublings: int = 10) -> BurnInResult:
    """Sample the stationary state at time 0 by running the loop from ever further back.

    Look-backs ``N0, 2 N0, 4 N0, ...`` share one noise realization per path
    (coupling), so ``gap(N) = mean |X^{(2N)}_0 - X^{(N)}_0|^2`` measures the
    Cauchy increment directly. Stops when the gap drops below ``tol``.

    Raises:
        NoContractionError: the gap failed to decrease across three
            consecutive doublings, or ``max_doublings`` was exhausted.
    """
    if sim.n_paths < 100:
        raise ParameterError(f"burn-in needs at least 100 paths, got {sim.n_paths}")
    N = float(N0)
    prev_x, _ = _from_the_past(spec, law, sim, N)
    gaps, lookbacks = [], []
    for _ in range(max_doublings):
        cur_x, cur_y = _from_the_past(spec, law, sim, 2 * N)
        gap = float(np.mean(np.sum((cur_x - prev_x) ** 2, axis=1)))
        gaps.append(gap)
        lookbacks.append(N)
        log.debug("burn-in look-back %g: gap %.3e", N, gap)
        if gap < tol:
            return BurnInResult(cur_x, cur_y, 2 * N, tuple(gaps), tuple(lookbacks))
        if len(gaps) >= 3 and gaps[-1] >= gaps[-2] >= gaps[-3]:
            raise NoContractionError(f"no mean-square contraction observed: gaps {gaps[-3:]}")
        N *= 2
        prev_x = cur_x
    raise NoContractionError(f"burn-in gap {gaps[-1]:.3e} still above tol {tol:g} at look-back {N:g}")


@dataclass(frozen=True, eq=False)
class DatkoFit:
    rate: float
    r2: float
    degenerate: bool = False
    intercept: float = float("nan")
    times: np.ndarray = field(default=None, repr=False)
    moment: np.ndarray = field(default=None, repr=False)


def homogeneous_spec(spec: ProblemSpec) -> ProblemSpec:
    if spec.is_constant:
        return spec.replace_model(f=np.zeros(spec.dims.n))
    return spec.replace_model(f=BoundedMatrix(np.zeros(spec.dims.n)))


def datko_fit(spec: ProblemSpec, g: GainSet, sim: SimConfig, x0) -> DatkoFit:
    """Fit the exponential decay rate of ``E|X_t|^2`` for the homogeneous loop.

    Forcing and affine control are switched off. The slope of
    ``log E|X_t|^2`` is fitted by least squares wherever the moment exceeds
    1e-12.
    """
    law = LinearFeedback(g.Lam, np.zeros(g.Lam.shape[:2]), g.grid)
    times, sq, _ = mean_square_profile(homogeneous_spec(spec), law, np.asarray(x0, dtype=float), sim)
    keep = sq > 1e-12
    if np.count_nonzero(keep) < 3:
        return DatkoFit(float("nan"), float("nan"), True, times=times, moment=sq)
    t, ly = times[keep], np.log(sq[keep])
    slope, icpt = np.polyfit(t, ly, 1)
    resid = ly - (slope * t + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DatkoFit(float(slope), r2, False, float(icpt), times, sq)


def continue_paths(spec: ProblemSpec, law: LinearFeedback, burn_in: BurnInResult, sim: SimConfig,
                   horizon: float = 2.0, record_every: int | None = None) -> PathBundle:
    """Continue burn-in samples forward over ``[0, horizon]``."""
    cfg = SimConfig(sim.dt, horizon, burn_in.samples.shape[0], sim.base_seed, sim.threads)
    if record_every is None:
        record_every = max(1, int(round(0.05 / sim.dt)))
    return simulate_paths(spec, law, burn_in.samples, cfg, y0=burn_in.factor, record_every=record_every)


def _z(diff):
    n = diff.shape[0]
    mean = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    # noiseless loops: discretization residue below this floor counts as zero
    floor = 1e-9 * (1.0 + np.abs(diff).max(axis=0, initial=0.0))
    return np.abs(mean) / np.maximum(se, floor)


def stationarity_check(paths: PathBundle, lags=(0.25, 0.5, 1.0)) -> float:
    """Largest standardized shift of first and second moments between time 0 and each lag.

    Each comparison is a paired difference on the same paths, divided by
    its standard error.
    """
    times = paths.times
    X = paths.states
    iu = np.triu_indices(X.shape[-1])
    worst = 0.0
    x0 = X[0]
    sq0 = (x0[:, :, None] * x0[:, None, :])[:, iu[0], iu[1]]
    for s in lags:
        j = int(np.argmin(np.abs(times - s)))
        if abs(times[j] - s) > 1e-9 * max(1.0, s):
            raise ParameterError(f"lag {s} is not on the recorded time grid")
        xs = X[j]
        sqs = (xs[:, :, None] * xs[:, None, :])[:, iu[0], iu[1]]
        worst = max(worst, float(np.max(_z(xs - x0))), float(np.max(_z(sqs - sq0))))
    return worst


def constant_stationary_cost(spec: ProblemSpec, law: LinearFeedback) -> float:
    mean, M2 = stationary_moments_constant(spec, law)
    return moment_cost(spec, law, mean, M2)


__all__ = [
    "FeedbackLaw",
    "BurnInResult",
    "DatkoFit",
    "synthesize_feedback",
    "stationary_moments_constant",
    "moment_cost",
    "burn_in_init",
    "datko_fit",
    "continue_paths",
    "stationarity_check",
    "homogeneous_spec",
    "constant_stationary_cost",
]
