import math

import numpy as np
import pytest

from conftest import factor_smoke, sb1, sb2
from ergolq.errors import ExplosionError, NotAdmissibleError, ParameterError
from ergolq.model import constant_spec
from ergolq.simulate import (
    LinearFeedback,
    SimConfig,
    discounted_cost_mc,
    mean_square_profile,
    simulate_paths,
    stationary_cost_mc,
)

ZERO = LinearFeedback(np.zeros((1, 1)), np.zeros(1))


class _Samples:
    def __init__(self, x, n):
        self.samples = np.tile(np.atleast_1d(x), (n, 1)).astype(float)
        self.factor = np.zeros(n)


def test_sb1_zero_control_is_equilibrium():
    b = simulate_paths(sb1(), ZERO, [1.0], SimConfig(dt=1e-2, horizon=2.0, n_paths=3))
    assert np.all(b.states == 1.0)
    assert np.all(b.controls == 0.0)


def test_noiseless_decay():
    spec = constant_spec(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    dt = 1e-3
    b = simulate_paths(spec, ZERO, [1.0], SimConfig(dt=dt, horizon=1.0, n_paths=1))
    assert abs(b.states[-1, 0, 0] - math.exp(-1.0)) < dt


def test_euler_first_order():
    spec = constant_spec(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    errs = [abs(simulate_paths(spec, ZERO, [1.0], SimConfig(dt=dt, n_paths=1)).states[-1, 0, 0] - math.exp(-1))
            for dt in (4e-3, 2e-3, 1e-3)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.02)


def test_single_path_bitwise_determinism():
    cfg = SimConfig(dt=1e-2, horizon=1.0, n_paths=1, base_seed=42)
    law = LinearFeedback([[-0.3]], [0.1])
    a = simulate_paths(sb2(), law, [0.5], cfg)
    b = simulate_paths(sb2(), law, [0.5], cfg)
    np.testing.assert_array_equal(a.states, b.states)


def test_thread_count_invariance():
    law = LinearFeedback([[-0.3]], [0.1])
    one = simulate_paths(sb2(), law, [0.5], SimConfig(dt=1e-2, n_paths=9000, base_seed=3, threads=1))
    four = simulate_paths(sb2(), law, [0.5], SimConfig(dt=1e-2, n_paths=9000, base_seed=3, threads=4))
    np.testing.assert_array_equal(one.states, four.states)


def test_paths_do_not_depend_on_batch_size():
    law = LinearFeedback([[-0.3]], [0.1])
    small = simulate_paths(sb2(), law, [0.5], SimConfig(dt=1e-2, n_paths=10, base_seed=5))
    large = simulate_paths(sb2(), law, [0.5], SimConfig(dt=1e-2, n_paths=5000, base_seed=5))
    np.testing.assert_array_equal(small.states, large.states[:, :10])


def test_seeds_differ():
    law = LinearFeedback([[-0.3]], [0.1])
    a = simulate_paths(sb2(), law, [0.5], SimConfig(dt=1e-2, n_paths=4, base_seed=1))
    b = simulate_paths(sb2(), law, [0.5], SimConfig(dt=1e-2, n_paths=4, base_seed=2))
    assert not np.array_equal(a.states, b.states)


def test_factor_moves_with_exact_transition():
    spec = factor_smoke()
    b = simulate_paths(spec, ZERO, [0.5], SimConfig(dt=1e-2, horizon=1.0, n_paths=4000, base_seed=0))
    y = b.factor[-1]
    # stationary start stays stationary: N(0, sigma^2 / (2 kappa))
    assert abs(y.mean()) < 3 * math.sqrt(0.125 / 4000)
    assert y.var() == pytest.approx(0.125, rel=0.1)


def test_explosion_reports_path_and_time():
    spec = constant_spec(60.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    with pytest.raises(ExplosionError) as info:
        simulate_paths(spec, ZERO, [1.0], SimConfig(dt=1e-2, horizon=30.0, n_paths=2))
    assert info.value.path is not None
    assert info.value.time > 0


def test_stationary_cost_zero_forcing():
    est = stationary_cost_mc(sb1(f=0.0), ZERO, _Samples(0.0, 200), SimConfig(dt=1e-3))
    assert est.mean == 0.0
    assert est.std_err == 0.0


def test_stationary_cost_suboptimal_zero_law():
    # u = 0 on SB1 keeps X = 1, so the running cost is 1
    est = stationary_cost_mc(sb1(), ZERO, _Samples(1.0, 100), SimConfig(dt=1e-3))
    assert est.mean == pytest.approx(1.0, abs=1e-12)
    assert est.n_paths == 100


def test_discounted_scalar_integral():
    spec = constant_spec(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    dt = 1e-3
    est = discounted_cost_mc(spec, ZERO, [1.0], 0.5, SimConfig(dt=dt, n_paths=100))
    assert abs(est.mean - 1.0 / 3.0) <= 3 * est.std_err + 5 * dt
    assert est.meta["tail_budget"] == 1e-4
    K = est.meta["integrand_bound"]
    assert K * math.exp(-est.meta["horizon"]) / 1.0 <= 1e-4 * (1 + 1e-9)


def test_discounted_zero_start():
    spec = constant_spec(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    est = discounted_cost_mc(spec, ZERO, [0.0], 0.5, SimConfig(dt=1e-3, n_paths=10))
    assert est.mean == 0.0


def test_discounted_with_multiplicative_noise():
    # E X_t^2 = exp((2A + C^2) t) = exp(-1.75 t), so J = 1 / (1.75 + 2 alpha)
    spec = constant_spec(-1.0, 0.0, 0.5, 0.0, 1.0, 0.0, 1.0)
    dt = 1e-3
    est = discounted_cost_mc(spec, ZERO, [1.0], 0.5, SimConfig(dt=dt, n_paths=4000, base_seed=11))
    assert abs(est.mean - 1.0 / 2.75) <= 3 * est.std_err + 5 * dt


def test_discounted_rejects_inadmissible():
    spec = constant_spec(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    with pytest.raises(NotAdmissibleError):
        discounted_cost_mc(spec, ZERO, [1.0], 0.1, SimConfig(dt=1e-2, n_paths=10))


def test_discounted_requires_positive_alpha():
    with pytest.raises(ParameterError):
        discounted_cost_mc(sb1(), ZERO, [1.0], 0.0, SimConfig())


def test_mean_square_profile_deterministic():
    spec = constant_spec(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    t, sq, cost = mean_square_profile(spec, ZERO, [1.0], SimConfig(dt=1e-3, horizon=1.0, n_paths=2))
    np.testing.assert_allclose(sq, np.exp(-2 * t), rtol=2e-3)
    np.testing.assert_allclose(cost, sq)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(horizon=-1.0), dict(n_paths=0), dict(base_seed=-1),
                                dict(threads=0)])
def test_simconfig_rejects(kw):
    with pytest.raises(ParameterError):
        SimConfig(**kw)


def test_path_csv(tmp_path):
    b = simulate_paths(sb1(), ZERO, [1.0], SimConfig(dt=0.25, horizon=0.5, n_paths=2))
    out = tmp_path / "paths.csv"
    b.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "path,t,y,x_1,u_1"
    assert len(lines) == 1 + 2 * 3
    assert lines[1].split(",")[:2] == ["0", "0.0"]


def test_open_loop_control():
    spec = constant_spec(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    b = simulate_paths(spec, lambda t, x, y: np.ones((x.shape[0], 1)), [0.0], SimConfig(dt=1e-2, n_paths=1))
    assert b.states[-1, 0, 0] == pytest.approx(1.0)
