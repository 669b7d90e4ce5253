"""Discounted problems, the stationary optimal cost and the vanishing-discount limit.

The discounted problem with rate ``alpha`` is handled through the shift
``A -> A - alpha I``. Its value at ``x`` is

    <P x, x> + 2 <r, x> + (2 <r, f> - <N^{-1} v, v>) / (2 alpha),

with ``(P, r)`` the stationary Riccati and shifted costate solutions of the
shifted problem. As ``alpha -> 0`` the product ``2 alpha J_alpha(x)``
approaches the stationary optimal cost for every ``x``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .closedloop import FeedbackLaw, moment_cost, stationary_moments_constant
from .costate import CostateSolution, affine_term, costate_v, solve_stationary_costate
from .errors import ParameterError
from .model import ProblemSpec, coefficient_batch, factor_stationary_law
from .riccati import FactorGrid, GainSet, RiccatiSolution, gains, minimal_stationary
from .simulate import SimConfig, discounted_cost_mc

log = logging.getLogger(__name__)


def discounted_spec(spec: ProblemSpec, alpha: float) -> ProblemSpec:
    """Replace ``A`` by ``A - alpha I``; for factor specs the diagonal bases shift."""
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return spec
    n = spec.dims.n
    if spec.is_constant:
        return spec.replace_model(A=spec.model.A - alpha * np.eye(n))
    return spec.replace_model(A=spec.model.A.shifted(-alpha * np.eye(n)))


def stationary_weights(grid: FactorGrid, spec: ProblemSpec) -> np.ndarray:
    """Trapezoid weights for the factor's stationary density, renormalized over the grid."""
    mean, var = factor_stationary_law(spec.factor)
    y = grid.nodes
    w = np.exp(-0.5 * (y - mean) ** 2 / var)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w / w.sum()


def _expect(values, grid, spec):
    if grid is None:
        return float(values[0])
    return float(stationary_weights(grid, spec) @ values)


def _constant_part(spec, riccati, gset, costate):
    """Per-node ``2 <r, f> - <N^{-1} v, v>``."""
    snap = coefficient_batch(spec, None if riccati.grid is None else riccati.grid.nodes)
    v = costate_v(spec, riccati, costate)
    Ninv_v = np.linalg.solve(gset.N, v[..., None])[..., 0]
    return 2.0 * np.einsum("mi,mi->m", costate.rho, snap.f) - np.einsum("mk,mk->m", Ninv_v, v)


def stationary_cost_formula(spec: ProblemSpec, riccati: RiccatiSolution, costate: CostateSolution) -> float:
    """Optimal stationary cost ``E[2 <r, f> - <N^{-1} v, v>]``."""
    gset = gains(spec, riccati)
    return _expect(_constant_part(spec, riccati, gset, costate), riccati.grid, spec)


@dataclass(frozen=True, eq=False)
class DiscountedSolution:
    """Optimal data for the problem discounted at rate ``alpha``."""

    alpha: float
    spec: ProblemSpec
    riccati: RiccatiSolution
    gains: GainSet
    costate: CostateSolution
    offset: float

    @property
    def law(self) -> FeedbackLaw:
        return FeedbackLaw(self.gains, affine_term(self.spec, self.riccati, self.gains, self.costate),
                           self.riccati, self.costate)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        quad = np.einsum("mij,i,j->m", self.riccati.p, x, x) + 2.0 * self.costate.rho @ x
        return _expect(quad, self.riccati.grid, self.spec) + self.offset


def solve_discounted(spec: ProblemSpec, alpha: float, grid: FactorGrid | None = None,
                     tol: float = 1e-10, dt: float = 1e-2) -> DiscountedSolution:
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    sa = discounted_spec(spec, alpha)
    ric = minimal_stationary(sa, grid, tol=tol, dt=dt)
    g = gains(sa, ric)
    cs = solve_stationary_costate(sa, ric, g, tol=tol, dt=dt, shift=alpha)
    offset = _expect(_constant_part(sa, ric, g, cs), ric.grid, sa) / (2.0 * alpha)
    return DiscountedSolution(alpha, sa, ric, g, cs, offset)


def discounted_value(spec: ProblemSpec, alpha: float, x, **kw) -> float:
    """Optimal discounted cost from ``x``."""
    return solve_discounted(spec, alpha, **kw).value(x)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    x_label: str
    two_alpha_J: float
    std_err: float = 0.0


@dataclass
class SweepReport:
    rows: list
    extrapolated_limit: float | None
    stationary_cost: float
    max_x_spread: float
    fit_residual: float | None
    mode: str = "formula"
    spreads: dict = field(default_factory=dict)
    riccati_gaps: dict = field(default_factory=dict)
    costate_gaps: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def alphas(self):
        return sorted({r.alpha for r in self.rows}, reverse=True)

    def fitted_C(self) -> float:
        """Smallest ``C`` with ``|2 alpha J - J_stat| <= C alpha`` on every row."""
        return max(abs(r.two_alpha_J - self.stationary_cost) / r.alpha for r in self.rows)

    def fitted_spread_C(self) -> float:
        return max(s / a for a, s in self.spreads.items())

    def summary(self):
        return {
            "mode": self.mode,
            "extrapolated_limit": self.extrapolated_limit,
            "stationary_cost": self.stationary_cost,
            "max_x_spread": self.max_x_spread,
            "fit_residual": self.fit_residual,
            "fitted_c": self.fitted_C(),
            "fitted_spread_c": self.fitted_spread_C(),
            "flags": list(self.flags),
            "per_alpha": [
                {"alpha": a, "x_spread": self.spreads[a], "riccati_gap": self.riccati_gaps.get(a),
                 "costate_gap": self.costate_gaps.get(a)}
                for a in self.alphas
            ],
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "x_label", "two_alpha_j", "std_err"])
            for r in self.rows:
                w.writerow([repr(r.alpha), r.x_label, repr(r.two_alpha_J), repr(r.std_err)])

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _x_label(x) -> str:
    return ";".join(f"{v:g}" for v in np.asarray(x, dtype=float).reshape(-1))


def _extrapolate(rows, alphas, labels):
    """Affine fit in alpha over the three smallest alphas, per x; returns mean intercept and max rms residual."""
    small = sorted(alphas)[:3]
    limits, resid = [], []
    for lab in labels:
        pts = [(r.alpha, r.two_alpha_J) for r in rows if r.x_label == lab and r.alpha in small]
        a, v = np.array(pts).T
        slope, icpt = np.polyfit(a, v, 1)
        limits.append(icpt)
        resid.append(float(np.sqrt(np.mean((v - (slope * a + icpt)) ** 2))))
    return float(np.mean(limits)), max(resid)


def vanishing_discount_sweep(spec: ProblemSpec, x_list, alpha_list, mode: str = "formula",
                             sim: SimConfig | None = None, grid: FactorGrid | None = None,
                             tol: float = 1e-10, dt: float = 1e-2) -> SweepReport:
    """Tabulate ``2 alpha J_alpha(x)`` and extrapolate to ``alpha = 0``.

    ``mode="montecarlo"`` estimates each entry by simulation under the
    alpha-optimal feedback law, with ``sim`` controlling the estimator.
    """
    if mode not in ("formula", "montecarlo"):
        raise ParameterError(f"unknown sweep mode {mode!r}")
    alphas = sorted((float(a) for a in alpha_list), reverse=True)
    if not alphas or alphas[-1] <= 0:
        raise ParameterError("alphas must be positive")
    if len(set(alphas)) != len(alphas):
        raise ParameterError("alphas must be distinct")
    xs = [np.asarray(x, dtype=float).reshape(-1) for x in x_list]
    if not xs:
        raise ParameterError("x_list is empty")
    if mode == "montecarlo" and sim is None:
        sim = SimConfig()
    if grid is None and spec.factor is not None:
        grid = FactorGrid.around(spec.factor)

    ric = minimal_stationary(spec, grid, tol=tol, dt=dt)
    g = gains(spec, ric)
    cs = solve_stationary_costate(spec, ric, g, tol=tol, dt=dt)
    j_stat = stationary_cost_formula(spec, ric, cs)

    rows, spreads, p_gaps, r_gaps = [], {}, {}, {}
    labels = [_x_label(x) for x in xs]
    for a in alphas:
        sol = solve_discounted(spec, a, grid, tol=tol, dt=dt)
        p_gaps[a] = float(np.max(np.linalg.norm(sol.riccati.p - ric.p, axis=(-2, -1))))
        r_gaps[a] = float(np.max(np.linalg.norm(sol.costate.rho - cs.rho, axis=-1)))
        law = sol.law if mode == "montecarlo" else None
        vals = []
        for x, lab in zip(xs, labels):
            if mode == "formula":
                row = SweepRow(a, lab, 2.0 * a * sol.value(x), 0.0)
            else:
                est = discounted_cost_mc(spec, law, x, a, sim)
                row = SweepRow(a, lab, 2.0 * a * est.mean, 2.0 * a * est.std_err)
            rows.append(row)
            vals.append(row.two_alpha_J)
        spreads[a] = float(max(vals) - min(vals))
        log.debug("alpha %g: 2aJ %s", a, vals)

    flags = []
    if len(alphas) < 3:
        flags.append("extrapolation_skipped: fewer than 3 alphas")
        limit, resid = None, None
    else:
        limit, resid = _extrapolate(rows, alphas, labels)
    return SweepReport(rows, limit, j_stat, max(spreads.values()), resid, mode, spreads, p_gaps, r_gaps, flags)


def _alt_law(law_opt: FeedbackLaw, Lam_alt, c_alt):
    from .simulate import LinearFeedback

    return LinearFeedback(np.asarray(Lam_alt, dtype=float).reshape(law_opt.Lam.shape),
                          np.asarray(c_alt, dtype=float).reshape(law_opt.u_aff.shape))


def optimality_gap(spec: ProblemSpec, law_opt: FeedbackLaw, Lam_alt, c_alt) -> tuple[float, float]:
    """Compare the cost excess of ``u = Lam_alt x + c_alt`` by two routes.

    ``gap_direct`` is the alternative's stationary cost minus the optimal
    stationary cost. ``gap_identity`` is ``E <N e, e>`` with
    ``e = u_alt - Lam X - u_aff`` under the alternative's stationary law.
    Both come from exact moments.

    Raises:
        NotMeanSquareStableError: the alternative loop is not stable.
    """
    if not spec.is_constant:
        raise ParameterError("optimality gap needs constant coefficients")
    alt = _alt_law(law_opt, Lam_alt, c_alt)
    mean, M2 = stationary_moments_constant(spec, alt)
    j_alt = moment_cost(spec, alt, mean, M2)
    j_opt = stationary_cost_formula(spec, law_opt.riccati, law_opt.costate)
    Lo, uo = law_opt.at(None)
    La, ua = alt.at(None)
    dL, dc = La - Lo, ua - uo
    N = law_opt.gains.N[0]
    gap_identity = float(np.trace(dL.T @ N @ dL @ M2) + 2.0 * dc @ N @ dL @ mean + dc @ N @ dc)
    return float(j_alt - j_opt), gap_identity


__all__ = [
    "discounted_spec",
    "stationary_weights",
    "stationary_cost_formula",
    "DiscountedSolution",
    "solve_discounted",
    "discounted_value",
    "SweepRow",
    "SweepReport",
    "vanishing_discount_sweep",
    "optimality_gap",
]
