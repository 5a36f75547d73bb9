import math

import numpy as np
import pytest

from wsls_commons.model import DelayModel, GoodSpec, table1_goods
from wsls_commons.queueing import (
    FailureBreakdown,
    FailureModel,
    ParameterError,
    delay_exceedance,
    erlang_tail,
    failure_probability,
    loss_probability,
    sojourn_tail,
    stationary_distribution,
)

from _oracles import balance_solve, erlang_tail_mc, single_queue_mc

TAU = 0.100


def test_empty_system():
    pi = stationary_distribution(0.0, GoodSpec(mu=100))
    assert pi[0] == 1.0 and not pi[1:].any()
    assert loss_probability(0.0, GoodSpec(mu=100)) == 0.0


def test_unit_load_is_uniform():
    pi = stationary_distribution(400.0, GoodSpec(mu=400, k=10))
    assert np.allclose(pi, 1 / 11, atol=1e-14)
    assert loss_probability(400.0, GoodSpec(mu=400, k=10)) == pytest.approx(1 / 11, abs=1e-14)


def test_stationary_matches_linear_solve():
    pi = stationary_distribution(350.0, GoodSpec(mu=400, k=10))
    assert np.abs(pi - balance_solve(350.0, 400.0, 1, 10)).max() < 1e-10
    assert abs(pi.sum() - 1) < 1e-12


def test_loss_closed_form():
    a = 350 / 400
    closed = (1 - a) * a**10 / (1 - a**11)
    assert loss_probability(350.0, GoodSpec(mu=400, k=10)) == pytest.approx(closed, rel=1e-12)
    assert closed == pytest.approx(0.0427, abs=5e-5)


@pytest.mark.parametrize("rate", [1e-3, 50.0, 399.999, 400.001, 1e4, 1e7])
def test_loss_extreme_loads_stay_finite(rate):
    p = loss_probability(rate, GoodSpec(mu=400, k=10))
    assert 0.0 <= p <= 1.0
    assert abs(p - balance_solve(rate, 400.0, 1, 10)[-1]) < 1e-9


def test_multi_server_matches_linear_solve():
    rng = np.random.default_rng(3)
    for _ in range(10):
        c = int(rng.integers(2, 5))
        k = int(rng.integers(c, 20))
        mu = float(rng.uniform(10, 500))
        lam = float(rng.uniform(0, 2 * mu))
        pi = stationary_distribution(lam, GoodSpec(mu=mu, c=c, k=k))
        assert np.abs(pi - balance_solve(lam, mu, c, k)).max() < 1e-10


def test_bad_spec_rejected():
    with pytest.raises(ParameterError):
        stationary_distribution(1.0, GoodSpec(mu=0))
    with pytest.raises(ParameterError):
        stationary_distribution(-1.0, GoodSpec(mu=10))


def test_erlang_tail_values():
    assert erlang_tail(3, 50.0, 0.0) == 1.0
    assert erlang_tail(3, 50.0, -1.0) == 1.0
    assert erlang_tail(1, 100.0, 0.01) == pytest.approx(math.exp(-1), rel=1e-14)
    assert erlang_tail(2, 100.0, 0.02) == pytest.approx(3 * math.exp(-2), rel=1e-14)
    with pytest.raises(ParameterError):
        erlang_tail(0, 1.0, 1.0)


def test_erlang_tail_monte_carlo():
    p, half = erlang_tail_mc(2, 100.0, 0.02, 400_000, seed=11)
    assert abs(erlang_tail(2, 100.0, 0.02) - p) < half


def test_erlang_tail_large_stage_count():
    # mean of Erlang(200, 1) is 200; median sits just below it
    assert erlang_tail(200, 1.0, 199.67) == pytest.approx(0.5, abs=2e-3)
    assert 0.0 <= erlang_tail(500, 1.0, 1.0) <= 1.0


def test_delay_exceedance_cases():
    g = GoodSpec(mu=100, d=0.06)
    assert delay_exceedance(50.0, g, TAU) == 1.0
    g = GoodSpec(mu=100, d=0.01)
    assert delay_exceedance(0.0, g, TAU) == pytest.approx(erlang_tail(1, 100.0, 0.08), rel=1e-12)


def test_service_only_reading_ignores_queue():
    g = GoodSpec(mu=100, d=0.01)
    lo = delay_exceedance(90.0, g, TAU, DelayModel.SERVICE)
    assert lo == pytest.approx(math.exp(-100 * 0.08), rel=1e-12)
    assert delay_exceedance(90.0, g, TAU) > lo


def test_composition():
    b = FailureBreakdown.compose(0.1, 0.2)
    assert b.p_fail == pytest.approx(0.28, abs=1e-15)
    g = table1_goods()[0]
    zero = failure_probability(0.0, 0.5, g, TAU)
    assert zero.p_loss == 0.0
    assert zero.p_fail == pytest.approx(erlang_tail(1, g.mu, TAU - 2 * g.d), rel=1e-12)
    b = failure_probability(200.0, 0.525, g, TAU)
    assert b.p_fail == pytest.approx(b.p_loss + (1 - b.p_loss) * b.p_delay, abs=1e-15)


def test_vectorized_model_agrees_with_scalar():
    goods = table1_goods()
    fm = FailureModel(goods, TAU)
    n = np.array([120.0, 310.5, 569.5])
    vec = fm.p_fail(n, 0.7)
    for i, g in enumerate(goods):
        assert vec[i] == pytest.approx(failure_probability(n[i], 0.7, g, TAU).p_fail, abs=1e-13)
        assert fm.p_fail_one(i, n[i], 0.7) == pytest.approx(vec[i], abs=1e-15)
    assert np.allclose(fm.p_fail(np.zeros(3), 0.7), fm.p_fail_empty)


def test_monotone_on_table1_grid():
    fm = FailureModel(table1_goods(), TAU)
    grid = np.arange(0, 1001)
    for lam in (0.175, 0.35, 0.525, 0.7, 0.875):
        p = np.array([fm.p_fail(np.full(3, n), lam) for n in grid])
        assert np.all(np.diff(p, axis=0) >= -1e-15)


def test_sojourn_tail_multi_server_monte_carlo():
    # accepted arrival finding j=4 in an M/M/2 system: wait Erlang(3, mu) then Exp(mu/2)
    g = GoodSpec(mu=200, c=2, k=10)
    rng = np.random.default_rng(5)
    n = 400_000
    x = rng.gamma(3, 1 / 200.0, n) + rng.exponential(2 / 200.0, n)
    p = (x > 0.02).mean()
    assert abs(sojourn_tail(4, g, 0.02) - p) < 2.576 * math.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize(
    "mu, c, k, d, rate",
    [
        (400.0, 1, 10, 0.030, 350.0),
        (100.0, 1, 10, 0.010, 105.0),
        (200.0, 2, 8, 0.020, 180.0),
    ],
)
def test_failure_probability_monte_carlo(mu, c, k, d, rate):
    g = GoodSpec(mu=mu, c=c, k=k, d=d)
    p, half = single_queue_mc(rate, mu, c, k, d, TAU, 1_000_000, seed=17)
    analytic = failure_probability(rate, 1.0, g, TAU).p_fail
    assert abs(analytic - p) < half
