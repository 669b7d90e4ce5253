"""Problem data: coefficient families, hypothesis checks and JSON schema.

Two coefficient families are supported:

* ``ConstantModel`` -- time-homogeneous deterministic matrices.
* ``FactorModel`` -- every scalar entry is ``base + amp * tanh(rate * (y - center))``
  where ``y`` is a stationary mean-reverting factor

      dY = kappa * (level - Y) dt + sigma dW^{drive}

  driven by one of the ``d`` Brownian components of the state equation.

The state equation is

    dX = (A X + B u + f) dt + sum_i (C^i X + D^i u) dW^i

and the running cost is ``<S X, X> + |u|^2``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

from .errors import DimensionError, ParameterError

SCHEMA_VERSION = 1
N_SAMPLES = 64
SAMPLE_WIDTH = 6.0
SYMMETRY_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dims:
    n: int
    k: int
    d: int

    def __post_init__(self):
        for name in ("n", "k", "d"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterError(f"dimension {name} must be a positive integer, got {v!r}")


@dataclass(frozen=True)
class BoundedEntry:
    """Scalar entry ``base + amp * tanh(rate * (y - center))``."""

    base: float
    amp: float = 0.0
    rate: float = 0.0
    center: float = 0.0

    def value(self, y):
        return self.base + self.amp * np.tanh(self.rate * (np.asarray(y, dtype=float) - self.center))

    @property
    def bound(self) -> float:
        return abs(self.base) + abs(self.amp)

    @property
    def band(self) -> tuple[float, float]:
        return self.base - abs(self.amp), self.base + abs(self.amp)


@dataclass(frozen=True)
class FactorDynamics:
    """Mean-reverting factor ``dY = kappa (level - Y) dt + sigma dW^{drive_index}``.

    ``drive_index`` is 1-based, as in the JSON schema.
    """

    kappa: float
    level: float
    sigma: float
    drive_index: int = 1

    def __post_init__(self):
        if not (self.kappa > 0):
            raise ParameterError(f"factor kappa must be > 0, got {self.kappa}")
        if not (self.sigma > 0):
            raise ParameterError(f"factor sigma must be > 0, got {self.sigma}")
        if int(self.drive_index) != self.drive_index or self.drive_index < 1:
            raise ParameterError(f"drive_index must be a positive integer, got {self.drive_index}")

    @property
    def drive(self) -> int:
        """0-based index of the driving Brownian component."""
        return int(self.drive_index) - 1

    @property
    def stationary_std(self) -> float:
        return self.sigma / math.sqrt(2.0 * self.kappa)

    def transition(self, y, z, dt):
        """Exact one-step Gaussian transition given a standard normal ``z``."""
        decay = math.exp(-self.kappa * dt)
        scale = self.sigma * math.sqrt(-math.expm1(-2.0 * self.kappa * dt) / (2.0 * self.kappa))
        return self.level + (y - self.level) * decay + scale * z


def factor_stationary_law(fd: FactorDynamics) -> tuple[float, float]:
    """Mean and variance of the stationary Gaussian law of the factor."""
    if not (fd.kappa > 0) or not (fd.sigma > 0):
        raise ParameterError("kappa and sigma must be positive")
    return float(fd.level), fd.sigma**2 / (2.0 * fd.kappa)


def factor_samples(fd: FactorDynamics, count: int = N_SAMPLES, width: float = SAMPLE_WIDTH) -> np.ndarray:
    mean, var = factor_stationary_law(fd)
    sd = math.sqrt(var)
    return np.linspace(mean - width * sd, mean + width * sd, count)


class BoundedMatrix:
    """Array of ``BoundedEntry`` values stored as four parameter arrays."""

    __slots__ = ("base", "amp", "rate", "center")

    def __init__(self, base, amp=None, rate=None, center=None):
        base = np.asarray(base, dtype=float)
        z = np.zeros_like(base)
        self.base = _frozen(base)
        self.amp = _frozen(z if amp is None else amp)
        self.rate = _frozen(z if rate is None else rate)
        self.center = _frozen(z if center is None else center)
        for name in ("amp", "rate", "center"):
            if getattr(self, name).shape != self.base.shape:
                raise DimensionError(f"BoundedMatrix {name} shape mismatch")

    @classmethod
    def constant(cls, values) -> "BoundedMatrix":
        return cls(values)

    @property
    def shape(self):
        return self.base.shape

    def entry(self, *idx) -> BoundedEntry:
        return BoundedEntry(*(float(getattr(self, a)[idx]) for a in self.__slots__))

    def value(self, y):
        """Evaluate at ``y``; a 1-d ``y`` adds a leading axis."""
        y = np.asarray(y, dtype=float)
        yy = y.reshape(y.shape + (1,) * self.base.ndim)
        return self.base + self.amp * np.tanh(self.rate * (yy - self.center))

    def band(self):
        return self.base - np.abs(self.amp), self.base + np.abs(self.amp)

    def shifted(self, delta) -> "BoundedMatrix":
        return BoundedMatrix(self.base + delta, self.amp, self.rate, self.center)

    def __eq__(self, other):
        if not isinstance(other, BoundedMatrix):
            return NotImplemented
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in self.__slots__)

    def __repr__(self):
        return f"BoundedMatrix(shape={self.shape})"

    def to_json(self):
        def rec(idx):
            if len(idx) == self.base.ndim:
                e = self.entry(*idx)
                if e.amp == 0.0 and e.rate == 0.0 and e.center == 0.0:
                    return e.base
                return {"base": e.base, "amp": e.amp, "rate": e.rate, "center": e.center}
            return [rec(idx + (i,)) for i in range(self.base.shape[len(idx)])]

        return rec(())

    @classmethod
    def from_json(cls, obj) -> "BoundedMatrix":
        # plain numbers are accepted as constant entries
        def shape_of(o):
            return (len(o),) + shape_of(o[0]) if isinstance(o, list) else ()

        shape = shape_of(obj)
        arrays = {a: np.zeros(shape) for a in cls.__slots__}
        for idx in np.ndindex(*shape):
            o = obj
            for i in idx:
                o = o[i]
            if isinstance(o, dict):
                for a in cls.__slots__:
                    arrays[a][idx] = float(o.get(a, 0.0))
            else:
                arrays["base"][idx] = float(o)
        return cls(**arrays)


@dataclass(frozen=True)
class CoefficientSnapshot:
    """Concrete coefficient matrices. Arrays may carry a leading batch axis."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray  # (..., d, n, n)
    D: np.ndarray  # (..., d, n, k)
    S: np.ndarray
    f: np.ndarray


_MATRICES = ("A", "B", "C", "D", "S", "f")


@dataclass(frozen=True, eq=False)
class ConstantModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    S: np.ndarray
    f: np.ndarray

    kind = "constant"

    def __post_init__(self):
        for name in _MATRICES:
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def __eq__(self, other):
        if not isinstance(other, ConstantModel):
            return NotImplemented
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in _MATRICES)

    def shapes(self):
        return {a: getattr(self, a).shape for a in _MATRICES}

    def replace(self, **kw) -> "ConstantModel":
        data = {a: getattr(self, a) for a in _MATRICES}
        data.update(kw)
        return ConstantModel(**data)


@dataclass(frozen=True, eq=False)
class FactorModel:
    A: BoundedMatrix
    B: BoundedMatrix
    C: BoundedMatrix
    D: BoundedMatrix
    S: BoundedMatrix
    f: BoundedMatrix
    factor: FactorDynamics = field(default=None)

    kind = "factor"

    def __post_init__(self):
        for name in _MATRICES:
            v = getattr(self, name)
            if not isinstance(v, BoundedMatrix):
                object.__setattr__(self, name, BoundedMatrix(v))
        if self.factor is None:
            raise ParameterError("FactorModel needs factor dynamics")

    def __eq__(self, other):
        if not isinstance(other, FactorModel):
            return NotImplemented
        return self.factor == other.factor and all(getattr(self, a) == getattr(other, a) for a in _MATRICES)

    def shapes(self):
        return {a: getattr(self, a).shape for a in _MATRICES}

    def replace(self, **kw) -> "FactorModel":
        data = {a: getattr(self, a) for a in _MATRICES}
        data["factor"] = self.factor
        data.update(kw)
        return FactorModel(**data)


CoefficientModel = Union[ConstantModel, FactorModel]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    dims: Dims
    model: CoefficientModel
    beta: float

    def __eq__(self, other):
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return self.dims == other.dims and self.beta == other.beta and self.model == other.model

    @property
    def is_constant(self) -> bool:
        return isinstance(self.model, ConstantModel)

    @property
    def factor(self) -> FactorDynamics | None:
        return getattr(self.model, "factor", None)

    def replace_model(self, **kw) -> "ProblemSpec":
        return ProblemSpec(self.dims, self.model.replace(**kw), self.beta)


def constant_spec(A, B, C, D, S, f, beta) -> ProblemSpec:
    """Build a constant spec; ``C`` and ``D`` are lists of ``d`` matrices."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    # scalars and lists of scalars are read as 1x1 blocks
    C = C.reshape(-1, 1, 1) if C.ndim < 2 else (C[None] if C.ndim == 2 else C)
    D = D.reshape(-1, 1, 1) if D.ndim < 2 else (D[None] if D.ndim == 2 else D)
    n, k, d = A.shape[0], B.shape[1], C.shape[0]
    model = ConstantModel(A, B, C, D, np.atleast_2d(np.asarray(S, dtype=float)), np.atleast_1d(np.asarray(f, dtype=float)))
    return ProblemSpec(Dims(n, k, d), model, float(beta))


def check_dimensions(spec: ProblemSpec) -> None:
    n, k, d = spec.dims.n, spec.dims.k, spec.dims.d
    expected = {"A": (n, n), "B": (n, k), "C": (d, n, n), "D": (d, n, k), "S": (n, n), "f": (n,)}
    shapes = spec.model.shapes()
    for name, shp in expected.items():
        if tuple(shapes[name]) != shp:
            raise DimensionError(f"matrix {name} has shape {tuple(shapes[name])}, expected {shp}")
    fd = spec.factor
    if fd is not None and fd.drive_index > d:
        raise DimensionError(f"factor drive_index {fd.drive_index} exceeds d={d}")


def eval_coefficients(model: CoefficientModel, y=0.0) -> CoefficientSnapshot:
    """Realize the coefficients at factor level ``y``.

    A scalar ``y`` gives plain matrices; a 1-d array of levels gives a
    leading batch axis. The constant model ignores ``y``.
    """
    y_arr = np.asarray(y, dtype=float)
    if isinstance(model, ConstantModel):
        if y_arr.ndim == 0:
            return CoefficientSnapshot(*(getattr(model, a) for a in _MATRICES))
        m = y_arr.shape[0]
        return CoefficientSnapshot(*(np.broadcast_to(getattr(model, a), (m,) + getattr(model, a).shape) for a in _MATRICES))
    return CoefficientSnapshot(*(getattr(model, a).value(y_arr) for a in _MATRICES))


def coefficient_batch(spec: ProblemSpec, nodes=None) -> CoefficientSnapshot:
    """Coefficients with a leading node axis (length 1 for constant specs)."""
    if spec.is_constant or nodes is None:
        return eval_coefficients(spec.model, np.zeros(1))
    return eval_coefficients(spec.model, np.asarray(nodes, dtype=float))


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    witness: dict


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_json(self):
        return {
            "passed": self.passed,
            "checks": [{"name": c.name, "passed": c.passed, "witness": c.witness} for c in self.checks],
        }

    def format(self) -> str:
        lines = []
        for c in self.checks:
            wit = ", ".join(f"{k}={v}" for k, v in c.witness.items())
            lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  ({wit})")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check the standing hypotheses on ``spec``.

    Raises:
        DimensionError: a matrix does not match ``spec.dims``.
    """
    check_dimensions(spec)
    checks = [Check("dimensions", True, {"n": spec.dims.n, "k": spec.dims.k, "d": spec.dims.d})]
    if spec.is_constant:
        S_samples = spec.model.S[None]
        bound = float(max(np.max(np.abs(getattr(spec.model, a)), initial=0.0) for a in _MATRICES))
        finite = all(np.all(np.isfinite(getattr(spec.model, a))) for a in _MATRICES)
    else:
        ys = factor_samples(spec.factor)
        S_samples = spec.model.S.value(ys)
        bounds = []
        finite = True
        for a in _MATRICES:
            bm = getattr(spec.model, a)
            arrays = [getattr(bm, p) for p in BoundedMatrix.__slots__]
            finite &= all(np.all(np.isfinite(x)) for x in arrays)
            bounds.append(np.max(np.abs(bm.base) + np.abs(bm.amp), initial=0.0))
        bound = float(max(bounds))

    asym = float(np.max(np.abs(S_samples - np.swapaxes(S_samples, -1, -2))))
    checks.append(Check("S symmetric", asym <= SYMMETRY_TOL, {"max_asymmetry": asym}))

    S_sym = 0.5 * (S_samples + np.swapaxes(S_samples, -1, -2))
    min_eig = float(np.min(np.linalg.eigvalsh(S_sym)))
    beta_ok = spec.beta > 0 and min_eig >= spec.beta - SYMMETRY_TOL
    checks.append(Check("S >= beta I", bool(beta_ok), {"min_eigenvalue": min_eig, "beta": spec.beta,
                                                         "samples": int(S_samples.shape[0])}))
    checks.append(Check("entries bounded", bool(finite), {"uniform_bound": bound}))
    if spec.factor is not None:
        mean, var = factor_stationary_law(spec.factor)
        checks.append(Check("factor ergodic", True, {"mean": mean, "variance": var}))
    return ValidationReport(tuple(checks))


# -- JSON ---------------------------------------------------------------------


def spec_to_dict(spec: ProblemSpec) -> dict[str, Any]:
    m = spec.model
    if isinstance(m, ConstantModel):
        model = {"kind": "constant"}
        model.update({a: getattr(m, a).tolist() for a in _MATRICES})
    else:
        model = {"kind": "factor"}
        model.update({a: getattr(m, a).to_json() for a in _MATRICES})
        fd = m.factor
        model["factor"] = {"kappa": fd.kappa, "level": fd.level, "sigma": fd.sigma, "drive_index": int(fd.drive_index)}
    return {
        "version": SCHEMA_VERSION,
        "dims": {"n": spec.dims.n, "k": spec.dims.k, "d": spec.dims.d},
        "model": model,
        "beta": spec.beta,
    }


def spec_from_dict(obj: dict[str, Any]) -> ProblemSpec:
    try:
        dims = Dims(int(obj["dims"]["n"]), int(obj["dims"]["k"]), int(obj["dims"]["d"]))
        mo = obj["model"]
        kind = mo["kind"]
        beta = float(obj["beta"])
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"malformed spec document: missing {exc}") from None
    if kind == "constant":
        model = ConstantModel(*(np.array(mo[a], dtype=float) for a in _MATRICES))
    elif kind == "factor":
        fd = mo["factor"]
        factor = FactorDynamics(float(fd["kappa"]), float(fd["level"]), float(fd["sigma"]), int(fd.get("drive_index", 1)))
        model = FactorModel(*(BoundedMatrix.from_json(mo[a]) for a in _MATRICES), factor=factor)
    else:
        raise ParameterError(f"unknown model kind {kind!r}")
    spec = ProblemSpec(dims, model, beta)
    check_dimensions(spec)
    return spec


def dumps_spec(spec: ProblemSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True)


def loads_spec(text: str) -> ProblemSpec:
    return spec_from_dict(json.loads(text))


def load_spec(path) -> ProblemSpec:
    return loads_spec(Path(path).read_text(encoding="utf-8"))


def save_spec(spec: ProblemSpec, path) -> None:
    Path(path).write_text(dumps_spec(spec) + "\n", encoding="utf-8")


def spec_hash(spec: ProblemSpec) -> str:
    canon = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
