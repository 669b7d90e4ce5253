"""Command-line front end.

Exit codes: 0 success, 1 validation or solver failure, 2 bad invocation.
Every JSON output embeds the resolved configuration and a content hash of the problem file; no
timestamps are written, so reruns with the same inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .closedloop import (
    burn_in_init,
    continue_paths,
    datko_fit,
    stationarity_check,
    stationary_moments_constant,
    moment_cost,
    synthesize_feedback,
)
from .costate import costate_residual, solve_stationary_costate
from .ergodic import optimality_gap, solve_discounted, stationary_cost_formula, vanishing_discount_sweep
from .errors import ErgolqError
from .linalg import meansquare_abscissa
from .model import load_spec, spec_hash, validate
from .riccati import FactorGrid, gains, minimal_stationary, residual_norm, stability_certificate
from .simulate import SimConfig, discounted_cost_mc, simulate_paths, stationary_cost_mc

log = logging.getLogger("ergolq")

COMMANDS = ("validate", "riccati", "costate", "stationary", "simulate", "sweep", "gap", "report")


class BadInvocation(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergolq", description="Stationary and ergodic LQ control with random coefficients.")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", required=True, help="problem spec JSON")
    common.add_argument("--out", default=None, help="output directory (default: print only)")
    common.add_argument("--tol", type=_positive(float), default=1e-10, help="solver tolerance")
    common.add_argument("--solver-dt", type=_positive(float), default=1e-2, help="Riccati/costate march step")
    common.add_argument("--grid-m", type=int, default=121, help="factor grid nodes")
    common.add_argument("-v", "--verbose", action="store_true")

    mc = argparse.ArgumentParser(add_help=False)
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--dt", type=_positive(float), default=1e-3, help="Monte Carlo step")
    mc.add_argument("--paths", type=_positive(int), default=10_000)
    mc.add_argument("--threads", type=_positive(int), default=1)
    mc.add_argument("--burn-tol", type=_positive(float), default=1e-8)

    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--alphas", type=_floats, default=[0.2, 0.1, 0.05, 0.025], help="comma-separated discount rates")
    sweep.add_argument("--x", action="append", type=_floats, default=None,
                       help="starting point, comma-separated components; repeatable (default: 0)")

    sub.add_parser("validate", parents=[common], help="check a spec")
    sub.add_parser("riccati", parents=[common], help="minimal stationary Riccati solution")
    sub.add_parser("costate", parents=[common], help="stationary costate and affine control")
    sub.add_parser("stationary", parents=[common, mc], help="burn-in samples, moments, stationarity")
    s = sub.add_parser("simulate", parents=[common, mc], help="Monte Carlo cost estimators")
    s.add_argument("--alpha", type=_positive(float), default=None, help="discounted cost at this rate")
    s.add_argument("--x0", type=_floats, default=None, help="initial state for the discounted cost")
    s.add_argument("--dump-paths", type=int, default=0, help="write this many forward paths to paths.csv")
    w = sub.add_parser("sweep", parents=[common, mc, sweep], help="vanishing-discount sweep")
    w.add_argument("--mode", choices=("formula", "montecarlo"), default="formula")
    g = sub.add_parser("gap", parents=[common], help="completion-of-squares optimality gap")
    g.add_argument("--alt-gain", type=_floats, required=True, help="alternative gain, k*n entries row-major")
    g.add_argument("--alt-offset", type=_floats, default=None, help="alternative offset, k entries (default 0)")
    sub.add_parser("report", parents=[common, mc, sweep], help="full comparison with figures")
    return p


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(payload) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


class _Context:
    def __init__(self, args):
        self.args = args
        try:
            self.spec = load_spec(args.spec)
        except OSError as exc:
            raise BadInvocation(f"cannot read spec: {exc}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise ErgolqError(f"malformed spec: {exc}") from exc
        self.out = None
        if args.out is not None:
            self.out = Path(args.out)
            try:
                self.out.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise BadInvocation(f"output directory not writable: {exc}") from None
        self.grid = None if self.spec.factor is None else FactorGrid.around(self.spec.factor, args.grid_m)

    def config(self):
        cfg = {k: v for k, v in vars(self.args).items() if k not in ("out", "verbose")}
        return cfg

    def sim(self, horizon=1.0, paths=None):
        a = self.args
        return SimConfig(a.dt, horizon, paths or a.paths, a.seed, a.threads)

    def envelope(self, result):
        return {"command": self.args.command, "config": self.config(), "spec_hash": spec_hash(self.spec),
                "result": result}

    def path(self, name):
        return None if self.out is None else self.out / name

    def write(self, name, result):
        text = _dump(self.envelope(result))
        if self.out is not None:
            (self.out / name).write_text(text, encoding="utf-8")
        return text

    def solve(self):
        a = self.args
        ric = minimal_stationary(self.spec, self.grid, tol=a.tol, dt=a.solver_dt)
        g = gains(self.spec, ric)
        cs = solve_stationary_costate(self.spec, ric, g, tol=a.tol, dt=a.solver_dt)
        return ric, g, cs


def _riccati_result(ctx, ric, g):
    res = ric.to_json()
    res["residual"] = residual_norm(ctx.spec, ric)
    res["certificate"] = stability_certificate(ctx.spec, g)
    res["dt"] = ric.dt
    return res


def cmd_validate(ctx):
    report = validate(ctx.spec)
    text = ctx.write("validate.json", report.to_json())
    print(report.format(), file=sys.stderr)
    return text, 0 if report.passed else 1


def cmd_riccati(ctx):
    ric = minimal_stationary(ctx.spec, ctx.grid, tol=ctx.args.tol, dt=ctx.args.solver_dt)
    g = gains(ctx.spec, ric)
    return ctx.write("riccati.json", _riccati_result(ctx, ric, g)), 0


def cmd_costate(ctx):
    ric, g, cs = ctx.solve()
    law = synthesize_feedback(ctx.spec, ric, cs)
    res = cs.to_json()
    res["residual"] = costate_residual(ctx.spec, ric, g, cs)
    res["u_aff"] = law.u_aff if ric.grid is not None else law.u_aff[0]
    res["stationary_cost"] = stationary_cost_formula(ctx.spec, ric, cs)
    return ctx.write("costate.json", res), 0


def _burn_in(ctx, law):
    return burn_in_init(ctx.spec, law, ctx.sim(), tol=ctx.args.burn_tol)


def _moments(ctx, law):
    if not ctx.spec.is_constant:
        return None
    m, M2 = stationary_moments_constant(ctx.spec, law)
    return {"mean": m, "second_moment": M2, "cost": moment_cost(ctx.spec, law, m, M2)}


def cmd_stationary(ctx):
    ric, g, cs = ctx.solve()
    law = synthesize_feedback(ctx.spec, ric, cs)
    b = _burn_in(ctx, law)
    paths = continue_paths(ctx.spec, law, b, ctx.sim())
    res = {
        "burn_in": b.summary(),
        "sample_mean": b.samples.mean(axis=0),
        "sample_second_moment": b.samples.T @ b.samples / b.samples.shape[0],
        "moments": _moments(ctx, law),
        "stationarity_discrepancy": stationarity_check(paths),
    }
    if ctx.out is not None:
        b.to_csv(ctx.path("burn_in.csv"))
    return ctx.write("stationary.json", res), 0


def cmd_simulate(ctx):
    a = ctx.args
    ric, g, cs = ctx.solve()
    law = synthesize_feedback(ctx.spec, ric, cs)
    res = {"stationary_cost_formula": stationary_cost_formula(ctx.spec, ric, cs)}
    if a.alpha is None:
        b = _burn_in(ctx, law)
        res["stationary_cost_mc"] = stationary_cost_mc(ctx.spec, law, b, ctx.sim()).to_json()
        res["burn_in"] = b.summary()
    else:
        x0 = np.zeros(ctx.spec.dims.n) if a.x0 is None else np.asarray(a.x0)
        if x0.shape != (ctx.spec.dims.n,):
            raise BadInvocation(f"--x0 needs {ctx.spec.dims.n} components")
        sol = solve_discounted(ctx.spec, a.alpha, ctx.grid, tol=a.tol, dt=a.solver_dt)
        res["discounted_value_formula"] = sol.value(x0)
        res["discounted_cost_mc"] = discounted_cost_mc(ctx.spec, sol.law, x0, a.alpha, ctx.sim()).to_json()
    if a.dump_paths > 0 and ctx.out is not None:
        x0 = np.zeros(ctx.spec.dims.n) if a.x0 is None else np.asarray(a.x0)
        bundle = simulate_paths(ctx.spec, law, x0, ctx.sim(paths=a.dump_paths),
                                record_every=max(1, int(round(0.01 / a.dt))))
        bundle.to_csv(ctx.path("paths.csv"))
    return ctx.write("simulate.json", res), 0


def _x_list(ctx):
    xs = ctx.args.x or [[0.0] * ctx.spec.dims.n]
    for x in xs:
        if len(x) != ctx.spec.dims.n:
            raise BadInvocation(f"--x needs {ctx.spec.dims.n} components, got {len(x)}")
    return xs


def _sweep(ctx, mode):
    a = ctx.args
    return vanishing_discount_sweep(ctx.spec, _x_list(ctx), a.alphas, mode, sim=ctx.sim(), grid=ctx.grid,
                                    tol=a.tol, dt=a.solver_dt)


def cmd_sweep(ctx):
    rep = _sweep(ctx, ctx.args.mode)
    if ctx.out is not None:
        rep.to_csv(ctx.path("sweep.csv"))
    return ctx.write("sweep.json", rep.summary()), 0


def cmd_gap(ctx):
    a = ctx.args
    n, k = ctx.spec.dims.n, ctx.spec.dims.k
    if len(a.alt_gain) != k * n:
        raise BadInvocation(f"--alt-gain needs {k * n} entries, got {len(a.alt_gain)}")
    offset = [0.0] * k if a.alt_offset is None else a.alt_offset
    if len(offset) != k:
        raise BadInvocation(f"--alt-offset needs {k} entries, got {len(offset)}")
    ric, g, cs = ctx.solve()
    law = synthesize_feedback(ctx.spec, ric, cs)
    direct, ident = optimality_gap(ctx.spec, law, np.reshape(a.alt_gain, (k, n)), offset)
    res = {"gap_direct": direct, "gap_identity": ident, "difference": abs(direct - ident)}
    return ctx.write("gap.json", res), 0


def cmd_report(ctx):
    from . import plotting

    ric, g, cs = ctx.solve()
    law = synthesize_feedback(ctx.spec, ric, cs)
    b = _burn_in(ctx, law)
    mc = stationary_cost_mc(ctx.spec, law, b, ctx.sim())
    paths = continue_paths(ctx.spec, law, b, ctx.sim())
    x0 = np.ones(ctx.spec.dims.n)
    fit = datko_fit(ctx.spec, g, ctx.sim(horizon=4.0), x0)
    ref_rate = meansquare_abscissa(g.H[0], list(g.K[0])) if ctx.spec.is_constant else float("nan")
    rep = _sweep(ctx, "formula")
    formula = stationary_cost_formula(ctx.spec, ric, cs)
    moments = _moments(ctx, law)
    res = {
        "costs": {
            "formula": formula,
            "monte_carlo": mc.to_json(),
            "moment_oracle": None if moments is None else moments["cost"],
            "mc_agrees": abs(mc.mean - formula) <= max(3 * mc.std_err, 5 * ctx.args.dt),
        },
        "riccati": {"residual": residual_norm(ctx.spec, ric), "certificate": stability_certificate(ctx.spec, g)},
        "costate_residual": costate_residual(ctx.spec, ric, g, cs),
        "burn_in": b.summary(),
        "stationarity_discrepancy": stationarity_check(paths),
        "datko": {"rate": fit.rate, "r2": fit.r2, "degenerate": fit.degenerate, "moment_rate": ref_rate},
        "sweep": rep.summary(),
    }
    if ctx.out is not None:
        rep.to_csv(ctx.path("report_sweep.csv"))
        b.to_csv(ctx.path("burn_in.csv"))
        plotting.sweep_figure(rep, ctx.path("sweep.png"))
        plotting.burn_in_figure(b, ctx.path("burn_in.png"))
        plotting.datko_figure(fit, ctx.path("datko.png"), ref_rate)
    return ctx.write("report.json", res), 0


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = _Context(args)
        text, code = HANDLERS[args.command](ctx)
    except BadInvocation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ErgolqError as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
