import math
from pathlib import Path

import numpy as np
import pytest

from ergolq.model import BoundedMatrix, Dims, FactorDynamics, FactorModel, ProblemSpec, constant_spec

SPECS = Path(__file__).resolve().parent.parent / "specs"

SQRT2 = math.sqrt(2.0)
SB1_P = SQRT2 - 1.0
SB1_R = (2.0 - SQRT2) / 2.0
SB2_P = (math.sqrt(13.0) - 1.0) / 6.0


def sb1(f=1.0):
    return constant_spec(-1.0, 1.0, 0.0, 0.0, 1.0, f, 1.0)


def sb2(f=1.0):
    return constant_spec(-1.0, 1.0, 0.0, 1.0, 1.0, f, 1.0)


def factor_smoke(f=1.0, amp=0.25):
    A = BoundedMatrix([[-1.0]], [[amp]], [[1.0]], [[0.0]])
    model = FactorModel(A, [[1.0]], [[[0.0]]], [[[0.0]]], [[1.0]], [f], factor=FactorDynamics(1.0, 0.0, 0.5, 1))
    return ProblemSpec(Dims(1, 1, 1), model, 1.0)


def kron_abscissa(H, Ks):
    n = H.shape[0]
    I = np.eye(n)
    op = np.kron(I, H) + np.kron(H, I) + sum((np.kron(K, K) for K in Ks), np.zeros((n * n, n * n)))
    return float(np.max(np.linalg.eigvals(op).real))


def random_constant_spec(rng, n=None, k=None, d=None, beta=0.5):
    """Random spec whose uncontrolled loop is already mean-square stable."""
    n = n or int(rng.integers(1, 5))
    k = k or int(rng.integers(1, 3))
    d = d or int(rng.integers(1, 3))
    A = rng.normal(size=(n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + 0.5 + rng.uniform()) * np.eye(n)
    C = rng.normal(size=(d, n, n))
    scale = 1.0
    while kron_abscissa(A, list(scale * C)) >= -0.2:
        scale *= 0.7
    C *= scale
    B = rng.normal(size=(n, k))
    D = 0.5 * rng.normal(size=(d, n, k))
    M = rng.normal(size=(n, n))
    S = M @ M.T + beta * np.eye(n)
    f = rng.normal(size=n)
    return constant_spec(A, B, C, D, S, f, beta)


@pytest.fixture
def spec_sb1():
    return sb1()


@pytest.fixture
def spec_sb2():
    return sb2()


@pytest.fixture
def spec_factor():
    return factor_smoke()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
