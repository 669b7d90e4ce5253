import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SPECS, factor_smoke, sb1
from ergolq.errors import DimensionError, ParameterError
from ergolq.model import (
    BoundedEntry,
    BoundedMatrix,
    Dims,
    FactorDynamics,
    check_dimensions,
    constant_spec,
    dumps_spec,
    eval_coefficients,
    factor_stationary_law,
    load_spec,
    loads_spec,
    spec_hash,
    validate,
)


def test_sb1_validates():
    rep = validate(sb1())
    assert rep.passed
    assert all(c.passed for c in rep.checks)


def test_indefinite_S_fails_with_witness():
    spec = constant_spec(-1.0, 1.0, 0.0, 0.0, 0.5, 1.0, 1.0)
    rep = validate(spec)
    assert not rep.passed
    (bad,) = rep.failures()
    assert bad.name == "S >= beta I"
    assert bad.witness["min_eigenvalue"] == pytest.approx(0.5)


def test_asymmetric_S_fails():
    spec = constant_spec(-np.eye(2), np.ones((2, 1)), np.zeros((1, 2, 2)), np.zeros((1, 2, 1)),
                         [[2.0, 0.1], [0.0, 2.0]], [1.0, 0.0], 1.0)
    assert "S symmetric" in [c.name for c in validate(spec).failures()]


def test_wrong_shape_names_matrix():
    spec = constant_spec(-np.eye(2), np.ones((3, 1)), np.zeros((1, 2, 2)), np.zeros((1, 2, 1)), np.eye(2),
                         np.ones(2), 1.0)
    with pytest.raises(DimensionError, match="B"):
        check_dimensions(spec)
    with pytest.raises(DimensionError, match="B"):
        validate(spec)


@pytest.mark.parametrize("kw", [dict(kappa=0.0), dict(kappa=-1.0), dict(sigma=-0.1), dict(drive_index=0)])
def test_factor_dynamics_rejects(kw):
    base = dict(kappa=1.0, level=0.0, sigma=0.5, drive_index=1)
    base.update(kw)
    with pytest.raises(ParameterError):
        FactorDynamics(**base)


def test_dims_rejects_zero():
    with pytest.raises(ParameterError):
        Dims(0, 1, 1)


def test_bounded_entry_band():
    e = BoundedEntry(-1.0, 0.25, 1.0, 0.0)
    lo, hi = e.band
    assert (lo, hi) == (-1.25, -0.75)
    ys = np.linspace(-50, 50, 201)
    v = np.array([e.value(y) for y in ys])
    assert np.all((v >= lo) & (v <= hi))
    assert e.value(0.0) == -1.0


def test_factor_stationary_law():
    mean, var = factor_stationary_law(FactorDynamics(2.0, 0.3, 0.5, 1))
    assert mean == 0.3
    assert var == pytest.approx(0.25 / 4.0)


def test_factor_transition_exact_moments():
    fd = FactorDynamics(1.0, 0.0, 0.5, 1)
    z = np.random.default_rng(0).standard_normal(200_000)
    y = fd.transition(np.full(z.shape, 1.0), z, 0.5)
    assert y.mean() == pytest.approx(np.exp(-0.5), abs=5e-3)
    assert y.var() == pytest.approx(0.25 * (1 - np.exp(-1.0)) / 2.0, rel=2e-2)


def test_eval_coefficients_batch():
    spec = factor_smoke()
    snap = eval_coefficients(spec.model, np.array([-1.0, 0.0, 1.0]))
    assert snap.A.shape == (3, 1, 1)
    np.testing.assert_allclose(snap.A[:, 0, 0], -1.0 + 0.25 * np.tanh([-1.0, 0.0, 1.0]))


@pytest.mark.parametrize("spec", [sb1(), factor_smoke()], ids=["constant", "factor"])
def test_json_roundtrip(spec):
    again = loads_spec(dumps_spec(spec))
    assert again == spec
    assert spec_hash(again) == spec_hash(spec)


def test_shipped_specs_load():
    for path in sorted(SPECS.glob("*.json")):
        assert validate(load_spec(path)).passed, path.name


def test_hash_changes_with_data():
    assert spec_hash(sb1()) != spec_hash(sb1(f=2.0))


def test_plain_numbers_are_constant_entries():
    bm = BoundedMatrix.from_json([[1.5, {"base": 2.0, "amp": 0.1, "rate": 1.0}]])
    assert bm.amp.tolist() == [[0.0, 0.1]]
    assert json.loads(json.dumps(bm.to_json()))[0][0] == 1.5


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2), st.floats(0.1, 5), st.floats(-2, 2), st.floats(-100, 100))
def test_bounded_entry_within_band(base, amp, rate, center, y):
    e = BoundedEntry(base, amp, rate, center)
    lo, hi = e.band
    assert lo - 1e-12 <= e.value(y) <= hi + 1e-12
