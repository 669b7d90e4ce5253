"""Forward Monte Carlo for the affine state equation.

Euler-Maruyama for the state,

    X' = X + (A X + B u + f) dt + sum_i (C^i X + D^i u) dW^i,

and the exact Gaussian transition for the factor, which reuses the
increment of its driving Brownian component.

Random numbers are keyed by ``(base_seed, phase, block, segment)``: paths
are grouped in blocks of ``BLOCK`` and time steps in segments of
``SEGMENT``. The numbers a path sees depend only on its index, never on
``n_paths`` or ``threads``, and a given absolute time step always gets the
same increment. The burn-in coupling relies on that last property.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ExplosionError, NotAdmissibleError, ParameterError
from .model import ProblemSpec, eval_coefficients, factor_stationary_law

BLOCK = 4096
SEGMENT = 256

PHASE_BURN_IN = 0
PHASE_FORWARD = 1
PHASE_FACTOR_INIT = 2
PHASE_PILOT = 3


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 1.0
    n_paths: int = 1000
    base_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError(f"dt must be > 0, got {self.dt}")
        if not self.horizon >= 0:
            raise ParameterError(f"horizon must be >= 0, got {self.horizon}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ParameterError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not 0 <= self.base_seed < 2**64:
            raise ParameterError("base_seed must fit in an unsigned 64-bit integer")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")

    def to_json(self):
        return {"dt": self.dt, "horizon": self.horizon, "n_paths": self.n_paths,
                "base_seed": self.base_seed, "threads": self.threads}


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    std_err: float
    n_paths: int
    meta: dict = field(default_factory=dict)

    def to_json(self):
        out = {"mean": self.mean, "std_err": self.std_err, "n_paths": self.n_paths}
        out.update(self.meta)
        return out


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Recorded trajectories: ``states`` is ``(T, paths, n)``, ``controls``
    ``(T, paths, k)``, ``factor`` ``(T, paths)``."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    factor: np.ndarray

    def to_csv(self, path) -> None:
        n = self.states.shape[-1]
        k = self.controls.shape[-1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "t", "y"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(k)])
            for p in range(self.states.shape[1]):
                for j, t in enumerate(self.times):
                    w.writerow([p, repr(float(t)), repr(float(self.factor[j, p]))]
                               + [repr(float(v)) for v in self.states[j, p]]
                               + [repr(float(v)) for v in self.controls[j, p]])


class LinearFeedback:
    """Control rule ``u = Lam(y) x + u_aff(y)``.

    ``Lam`` has shape ``(m, k, n)`` and ``u_aff`` shape ``(m, k)``. With a
    grid the node values are interpolated linearly in ``y`` and clamped at
    the edges; without one ``m`` must be 1.
    """

    def __init__(self, Lam, u_aff, grid=None):
        Lam = np.asarray(Lam, dtype=float)
        u_aff = np.asarray(u_aff, dtype=float)
        if Lam.ndim == 2:
            Lam = Lam[None]
        if u_aff.ndim == 1:
            u_aff = u_aff[None]
        self.Lam = Lam
        self.u_aff = u_aff
        self.grid = grid

    def at(self, y):
        if self.grid is None:
            return self.Lam[0], self.u_aff[0]
        g = self.grid
        s = np.clip((np.asarray(y, dtype=float) - g.y_lo) / g.h, 0.0, g.m - 1)
        i0 = np.minimum(np.floor(s).astype(int), g.m - 2)
        w = s - i0
        Lam = (1 - w)[:, None, None] * self.Lam[i0] + w[:, None, None] * self.Lam[i0 + 1]
        ua = (1 - w)[:, None] * self.u_aff[i0] + w[:, None] * self.u_aff[i0 + 1]
        return Lam, ua

    def __call__(self, t, x, y):
        Lam, ua = self.at(y)
        if Lam.ndim == 2:
            return x @ Lam.T + ua
        return np.einsum("pkn,pn->pk", Lam, x) + ua

    def homogeneous(self) -> "LinearFeedback":
        return LinearFeedback(self.Lam, np.zeros_like(self.u_aff), self.grid)


class _Noise:
    """Standard normals for one block, cached one segment at a time."""

    def __init__(self, seed, phase, block, n_paths, d):
        self.key = (int(seed), int(phase), int(block))
        self.n_paths = n_paths
        self.d = d
        self._seg = None
        self._buf = None

    def __call__(self, index: int) -> np.ndarray:
        seg, off = divmod(index, SEGMENT)
        if seg != self._seg:
            rng = np.random.default_rng(list(self.key) + [seg])
            self._buf = rng.standard_normal((self.n_paths, SEGMENT, self.d)).transpose(1, 0, 2)
            self._seg = seg
        return self._buf[off]


def _blocks(n_paths):
    return [(b, b * BLOCK, min((b + 1) * BLOCK, n_paths)) for b in range((n_paths + BLOCK - 1) // BLOCK)]


def stationary_factor_draw(spec: ProblemSpec, seed: int, block: int, size: int, tag: int = 0):
    if spec.factor is None:
        return np.zeros(size)
    mean, var = factor_stationary_law(spec.factor)
    rng = np.random.default_rng([int(seed), PHASE_FACTOR_INIT, int(block), int(tag)])
    return mean + math.sqrt(var) * rng.standard_normal(size)


@dataclass
class _BlockResult:
    x: np.ndarray
    y: np.ndarray
    integral: np.ndarray | None = None
    rec_x: list = field(default_factory=list)
    rec_u: list = field(default_factory=list)
    rec_y: list = field(default_factory=list)
    sq_sum: np.ndarray | None = None
    integrand_sum: np.ndarray | None = None


def _simulate_block(*args, **kw):
    """Run one block of paths; optionally integrate ``weight(t) * (<SX,X> + |u|^2)``."""
    # overflow is reported as ExplosionError below
    with np.errstate(over="ignore", invalid="ignore"):
        return _block_loop(*args, **kw)


def _block_loop(spec, control, x, y, dt, n_steps, noise, noise_index, t0=0.0, weight=None,
                record_every=None, track_moments=False, path_offset=0):
    x = np.array(x, dtype=float)
    y = np.array(y, dtype=float)
    model = spec.model
    fd = spec.factor
    sqdt = math.sqrt(dt)
    constant = spec.is_constant
    if constant:
        A, B, C, D, S, f = (getattr(model, a) for a in ("A", "B", "C", "D", "S", "f"))
    res = _BlockResult(x, y)
    if weight is not None:
        res.integral = np.zeros(x.shape[0])
    if track_moments:
        res.sq_sum = np.zeros(n_steps + 1)
        res.integrand_sum = np.zeros(n_steps + 1)

    def integrand(x, u, S):
        if S.ndim == 2:
            return np.einsum("pi,ij,pj->p", x, S, x) + np.sum(u * u, axis=1)
        return np.einsum("pi,pij,pj->p", x, S, x) + np.sum(u * u, axis=1)

    prev = None
    for j in range(n_steps + 1):
        t = t0 + j * dt
        u = control(t, x, y)
        if not constant:
            snap = eval_coefficients(model, y)
            A, B, C, D, S, f = snap.A, snap.B, snap.C, snap.D, snap.S, snap.f
        if weight is not None or track_moments:
            cur = integrand(x, u, S)
            if weight is not None:
                cur_w = weight(t) * cur
                if prev is not None:
                    res.integral += 0.5 * dt * (prev + cur_w)
                prev = cur_w
            if track_moments:
                res.sq_sum[j] = float(np.sum(np.sum(x * x, axis=1)))
                res.integrand_sum[j] = float(np.sum(cur))
        if record_every and j % record_every == 0:
            res.rec_x.append(x.copy())
            res.rec_u.append(u.copy())
            res.rec_y.append(y.copy())
        if j == n_steps:
            break
        dW = noise(noise_index(j)) * sqdt
        if constant:
            drift = x @ A.T + u @ B.T + f
            diff = np.einsum("pd,dpn->pn", dW, x @ np.swapaxes(C, -1, -2) + u @ np.swapaxes(D, -1, -2))
        else:
            drift = (np.einsum("pij,pj->pi", A, x) + np.einsum("pik,pk->pi", B, u) + f)
            vol = np.einsum("pdij,pj->pdi", C, x) + np.einsum("pdik,pk->pdi", D, u)
            diff = np.einsum("pd,pdi->pi", dW, vol)
        x = x + drift * dt + diff
        if fd is not None:
            y = fd.transition(y, dW[:, fd.drive] / sqdt, dt)
        if not np.all(np.isfinite(x)):
            bad = int(np.argmax(~np.all(np.isfinite(x), axis=1)))
            raise ExplosionError(f"state exploded on path {path_offset + bad} at t={t + dt:.6g}",
                                 path_offset + bad, t + dt)
    res.x, res.y = x, y
    return res


def _as_paths(x0, n_paths, n):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        if x0.shape[0] != n:
            raise ParameterError(f"x0 has length {x0.shape[0]}, expected {n}")
        return np.broadcast_to(x0, (n_paths, n))
    if x0.shape != (n_paths, n):
        raise ParameterError(f"x0 has shape {x0.shape}, expected {(n_paths, n)}")
    return x0


def _run(spec, control, x0, cfg: SimConfig, n_steps, y0=None, phase=PHASE_FORWARD, noise_index=None,
         t0=0.0, weight=None, record_every=None, track_moments=False, n_paths=None):
    n_paths = cfg.n_paths if n_paths is None else n_paths
    X0 = _as_paths(x0, n_paths, spec.dims.n)
    index = noise_index or (lambda j: j)

    def work(blk):
        b, lo, hi = blk
        yb = (stationary_factor_draw(spec, cfg.base_seed, b, hi - lo) if y0 is None
              else np.broadcast_to(np.asarray(y0, dtype=float), (n_paths,))[lo:hi])
        noise = _Noise(cfg.base_seed, phase, b, hi - lo, spec.dims.d)
        return _simulate_block(spec, control, X0[lo:hi], yb, cfg.dt, n_steps, noise, index, t0, weight,
                               record_every, track_moments, lo)

    blocks = _blocks(n_paths)
    if cfg.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            return list(ex.map(work, blocks))
    return [work(b) for b in blocks]


def simulate_paths(spec: ProblemSpec, control: Callable, x0, cfg: SimConfig, y0=None,
                   record_every: int = 1) -> PathBundle:
    """Simulate ``cfg.n_paths`` paths on ``[0, cfg.horizon]``.

    ``control`` is any callable ``(t, x, y) -> u`` on path batches; a
    ``LinearFeedback`` covers feedback laws and a function ignoring ``x``
    gives an open-loop control. ``x0`` is one state or one state per path.
    ``y0`` defaults to draws from the factor's stationary law.
    """
    n_steps = int(round(cfg.horizon / cfg.dt))
    parts = _run(spec, control, x0, cfg, n_steps, y0=y0, record_every=record_every)
    times = np.arange(0, n_steps + 1, record_every) * cfg.dt
    return PathBundle(
        times,
        np.concatenate([np.stack(p.rec_x) for p in parts], axis=1),
        np.concatenate([np.stack(p.rec_u) for p in parts], axis=1),
        np.concatenate([np.stack(p.rec_y) for p in parts], axis=1),
    )


def _estimate(values, meta):
    values = np.asarray(values)
    n = values.shape[0]
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CostEstimate(mean, se, n, meta)


def stationary_cost_mc(spec: ProblemSpec, law, burn_in, cfg: SimConfig) -> CostEstimate:
    """Per-path ``int_0^1 <S X, X> + |u|^2`` started from burn-in samples.

    The window is always ``[0, 1]``; ``cfg.n_paths`` is replaced by the
    number of burn-in samples.
    """
    n_steps = int(round(1.0 / cfg.dt))
    samples = np.asarray(burn_in.samples)
    parts = _run(spec, law, samples, cfg, n_steps, y0=burn_in.factor, weight=lambda t: 1.0,
                 n_paths=samples.shape[0])
    vals = np.concatenate([p.integral for p in parts])
    return _estimate(vals, {"dt": cfg.dt, "window": 1.0})


def mean_square_profile(spec, control, x0, cfg: SimConfig, y0=None, phase=PHASE_FORWARD):
    """Per-step Monte Carlo means of ``|X|^2`` and of the running cost integrand."""
    n_steps = int(round(cfg.horizon / cfg.dt))
    parts = _run(spec, control, x0, cfg, n_steps, y0=y0, phase=phase, track_moments=True)
    sq = sum(p.sq_sum for p in parts) / cfg.n_paths
    cost = sum(p.integrand_sum for p in parts) / cfg.n_paths
    return np.arange(n_steps + 1) * cfg.dt, sq, cost


def discounted_cost_mc(spec: ProblemSpec, control, x0, alpha: float, cfg: SimConfig,
                       tail_budget: float = 1e-4, pilot_paths: int = 256) -> CostEstimate:
    """Monte Carlo ``E int_0^inf e^{-2 alpha s} (<S X, X> + |u|^2) ds`` from ``x0``.

    A pilot run bounds the expected integrand by ``K``; the integral is
    truncated at ``T = log(K / (tail_budget * 2 alpha)) / (2 alpha)`` so the
    neglected tail is at most ``tail_budget``.

    Raises:
        NotAdmissibleError: the pilot integrand grows faster than ``e^{2 alpha s}``.
    """
    if not alpha > 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    pilot_T = min(max(4.0, 1.0 / alpha), 50.0)
    pilot_cfg = SimConfig(dt=max(cfg.dt, 1e-2), horizon=pilot_T, n_paths=min(cfg.n_paths, pilot_paths),
                          base_seed=cfg.base_seed, threads=cfg.threads)
    times, _, integrand = mean_square_profile(spec, control, x0, pilot_cfg, phase=PHASE_PILOT)
    K = 2.0 * float(np.max(integrand))
    half = times >= 0.5 * pilot_T
    positive = integrand[half] > 0
    if np.count_nonzero(positive) > 2:
        slope = np.polyfit(times[half][positive], np.log(integrand[half][positive]), 1)[0]
        if slope > 2.0 * alpha:
            raise NotAdmissibleError(
                f"integrand grows at rate {slope:.3g} > 2 alpha = {2 * alpha:.3g}: control not admissible")
    T = math.log(K / (tail_budget * 2.0 * alpha)) / (2.0 * alpha) if K > 0 else 0.0
    T = max(T, 1.0)
    n_steps = int(math.ceil(T / cfg.dt))
    parts = _run(spec, control, x0, cfg, n_steps, weight=lambda t: math.exp(-2.0 * alpha * t))
    vals = np.concatenate([p.integral for p in parts])
    return _estimate(vals, {"dt": cfg.dt, "alpha": alpha, "horizon": n_steps * cfg.dt,
                            "tail_budget": tail_budget, "integrand_bound": K})
