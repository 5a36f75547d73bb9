import numpy as np
import pytest

from wsls_commons.analysis import ode_reference
from wsls_commons.dynamics import landing_kernel
from wsls_commons.model import (
    AdaptiveConfig,
    GoodSpec,
    ScenarioConfig,
    ShiftPolicy,
    ToleranceProfile,
    TypeSpec,
    WorkloadSchedule,
    table1_scenario,
)
from wsls_commons.simulator import (
    BACKENDS,
    AgentState,
    SimulationError,
    adapt_step,
    run,
    shift_target,
)


def _same(a, b):
    for f in ("times", "occupancy", "failures", "resolved", "agent_tol_min", "agent_tol_max",
              "sojourns", "sojourn_attempts", "initial_occupancy", "final_tolerances"):
        assert np.array_equal(getattr(a, f), getattr(b, f)), f
    assert np.array_equal(a.mean_tolerance, b.mean_tolerance, equal_nan=True)
    assert a.shifts == b.shifts and a.digest == b.digest


def test_deterministic_and_conserving():
    cfg = table1_scenario(1.0, horizon=200.0, seed=3)
    a, b = run(cfg), run(cfg)
    _same(a, b)
    assert np.all(a.occupancy.sum(axis=1) == 1000)
    assert a.initial_occupancy.sum() == 1000
    assert len(a.times) == 200 and a.times[0] == 1.0
    c = run(cfg.with_overrides(seed=4))
    assert not np.array_equal(a.occupancy, c.occupancy)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernel not built")
@pytest.mark.parametrize(
    "cfg",
    [
        table1_scenario(1.25, horizon=150.0, seed=1),
        table1_scenario(0.75, adaptive=True, horizon=150.0, seed=2, init="random_split"),
        table1_scenario(1.0, tolerance=3, horizon=150.0, seed=5, shift_policy="proportional",
                        loss_latency="zero", delay_model="service"),
        table1_scenario(horizon=150.0, seed=6,
                        schedule=WorkloadSchedule(((50.0, 0.5), (50.0, 1.25), (50.0, 0.0)))),
    ],
    ids=["fixed", "adaptive", "variants", "schedule"],
)
def test_backends_agree_bitwise(cfg):
    _same(run(cfg, backend="cython"), run(cfg, backend="python"))


def test_nothing_fails_on_a_huge_single_server():
    cfg = ScenarioConfig(
        goods=(GoodSpec(mu=1000.0, k=100_000, d=0.0),),
        types=(TypeSpec(50, ToleranceProfile((1,))),),
        n_users=50,
        timeout=1e9,
        schedule=WorkloadSchedule.constant(0.5),
        horizon=100.0,
    )
    rec = run(cfg)
    assert rec.failures.sum() == 0 and rec.shifts == 0
    assert np.all(rec.occupancy == 50)
    assert rec.resolved.sum() > 0


def test_invalid_config_rejected(table1):
    with pytest.raises(ValueError):
        run(table1.with_overrides(horizon=-1.0))
    with pytest.raises(ValueError):
        run(table1, backend="fortran")


def test_zero_tolerance_good_never_holds_users():
    cfg = table1_scenario(1.0, horizon=200.0).with_tolerances([(0, 1, 1)])
    rec = run(cfg)
    assert np.all(rec.occupancy[:, 0] == 0)
    assert rec.resolved[:, 0].sum() == 0


def test_adaptive_tolerance_sum_is_conserved():
    cfg = table1_scenario(1.25, adaptive=True, t0=5, horizon=400.0, seed=1)
    rec = run(cfg)
    assert np.all(rec.agent_tol_min == 15) and np.all(rec.agent_tol_max == 15)
    t = rec.final_tolerances
    assert t.min() >= 1 and t.max() <= 13
    assert np.allclose(rec.mean_tolerance.sum(axis=1), 15.0)
    # learning actually moved something
    assert (t != 5).any()


def test_fixed_runs_report_no_tolerance():
    rec = run(table1_scenario(horizon=20.0))
    assert np.all(np.isnan(rec.mean_tolerance))
    assert np.all(rec.agent_tol_min == -1)


def _agent(x, t, good=0, attempts=25):
    return AgentState(type_id=0, current_good=good, t=np.array(t), x=np.array(x, dtype=float),
                      beta=0.1, adaptive=True, attempts=attempts)


def test_adapt_step_examples():
    a = adapt_step(_agent([0.3, 0.1, 0.5], [5, 5, 5]), 0)
    assert a.x[0] == pytest.approx(0.29)
    assert list(a.t) == [4, 6, 5]
    a = adapt_step(_agent([0.3, 0.1, 0.5], [1, 7, 7], attempts=3), 0)
    assert list(a.t) == [1, 7, 7]
    a = adapt_step(_agent([0.0, 0.1, 0.5], [5, 5, 5]), 0)
    assert list(a.t) == [5, 5, 5]
    with pytest.raises(SimulationError):
        adapt_step(_agent([0.3, 0.1, 0.5], [5, 5, 5], attempts=4), 0)


def test_adapt_step_ties_go_to_first_index():
    a = adapt_step(_agent([0.9, 0.05, 0.05], [5, 5, 5], attempts=5), 0)
    assert list(a.t) == [4, 6, 5]


def test_shift_target_two_goods():
    rng = np.random.default_rng(0)
    ag = _agent([0, 0], [1, 1], good=1)
    assert {shift_target(ag, rng) for _ in range(100)} == {0}


def _chi2_ok(counts, probs):
    n = counts.sum()
    exp = n * np.asarray(probs)
    assert np.all(np.abs(counts - exp) <= 3 * np.sqrt(exp * (1 - np.asarray(probs))))


def test_shift_target_frequencies():
    rng = np.random.default_rng(42)
    ag = _agent([0, 0, 0], [1, 1, 1], good=0)
    c = np.bincount([shift_target(ag, rng) for _ in range(100_000)], minlength=3)
    assert c[0] == 0
    _chi2_ok(c[1:], [0.5, 0.5])
    ag = _agent([0, 0, 0], [7, 1, 3], good=0)
    c = np.bincount([shift_target(ag, rng, ShiftPolicy.PROPORTIONAL) for _ in range(100_000)], minlength=3)
    assert c[0] == 0
    _chi2_ok(c[1:], [0.25, 0.75])


def test_shift_target_skips_and_stays():
    rng = np.random.default_rng(1)
    # bouncing off the zero-tolerance good may lead back home, as in the ODE kernel
    ag = _agent([0, 0, 0], [1, 0, 1], good=0)
    c = np.bincount([shift_target(ag, rng) for _ in range(30_000)], minlength=3)
    assert c[1] == 0
    _chi2_ok(c[[0, 2]], landing_kernel(np.array([1, 0, 1]))[0, [0, 2]])
    ag = _agent([0, 0, 0], [1, 0, 0], good=0)
    assert shift_target(ag, rng) == 0
    assert shift_target(ag, rng, ShiftPolicy.PROPORTIONAL) == 0


def test_requests_per_sojourn_follow_t_over_p():
    # fixed T, constant load: mean attempts per sojourn approximates T / P
    cfg = table1_scenario(0.75, tolerance=5, horizon=3000.0, seed=12)
    rec = run(cfg)
    sl = rec.tail(0.8)
    p = rec.tail_p_fail(sl)
    mean_r = rec.sojourn_attempts / rec.sojourns
    assert np.all(np.abs(mean_r - 5 / p) / (5 / p) < 0.10)


@pytest.mark.parametrize("rho", [0.5, 0.75, 1.0, 1.25])
def test_tracks_mean_field(rho):
    cfg = table1_scenario(rho, horizon=1000.0, seed=int(rho * 100))
    rec = run(cfg)
    traj = ode_reference(cfg, initial=rec.initial_occupancy)
    idx = np.searchsorted(traj.times, rec.times - 1e-9)
    ode = traj.totals[idx]
    # 50-second block means after a 200-second transient
    sim_b = rec.occupancy[200:].reshape(-1, 50, 3).mean(axis=1)
    ode_b = ode[200:].reshape(-1, 50, 3).mean(axis=1)
    assert np.abs(sim_b - ode_b).max() < 0.05 * 1000


def test_learning_config_is_respected():
    ts = TypeSpec(1000, ToleranceProfile((10, 10, 10)), True, AdaptiveConfig(t0=10, x0=0.0, beta=0.1))
    cfg = table1_scenario(0.75, horizon=50.0).with_overrides(types=(ts,))
    rec = run(cfg)
    assert np.all(rec.agent_tol_max == 30)


def test_window_helpers():
    rec = run(table1_scenario(1.0, horizon=100.0))
    assert rec.window(10.0, 20.0) == slice(9, 20)
    assert rec.tail(0.1) == slice(90, 100)
    assert 0.0 < rec.tail_system_p_fail(rec.tail(0.5)) < 1.0
    assert rec.p_fail.shape == (100, 3)
