"""Failure probability of a finite-buffer M/M/c/k server.

A request fails when it is lost at a full buffer, or when it is accepted but
its round trip ``2*d + response`` exceeds the timeout.  ``response`` is the
sojourn (waiting + service) by default; ``DelayModel.SERVICE`` counts the
service time only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DelayModel, GoodSpec


class ParameterError(ValueError):
    pass


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class FailureBreakdown:
    p_loss: float
    p_delay: float
    p_fail: float

    @classmethod
    def compose(cls, p_loss: float, p_delay: float) -> "FailureBreakdown":
        return cls(p_loss, p_delay, p_loss + (1.0 - p_loss) * p_delay)


def _check_spec(spec: GoodSpec) -> None:
    if not spec.mu > 0:
        raise ParameterError(f"service capacity must be positive, got mu={spec.mu}")
    if spec.c < 1 or spec.k < spec.c:
        raise ParameterError(f"need k >= c >= 1, got c={spec.c}, k={spec.k}")


def _log_weights(spec: GoodSpec) -> np.ndarray:
    """log of prod_{i<=j} 1/death_i for j = 0..k (birth rate factored out)."""
    j = np.arange(1, spec.k + 1)
    deaths = np.minimum(j, spec.c) * spec.service_rate
    return np.concatenate(([0.0], -np.cumsum(np.log(deaths))))


def stationary_distribution(arrival_rate: float, spec: GoodSpec) -> np.ndarray:
    """Stationary occupancy distribution pi_0..pi_k of the M/M/c/k chain."""
    _check_spec(spec)
    if arrival_rate < 0:
        raise ParameterError(f"arrival rate must be >= 0, got {arrival_rate}")
    if arrival_rate == 0:
        pi = np.zeros(spec.k + 1)
        pi[0] = 1.0
        return pi
    logp = np.arange(spec.k + 1) * math.log(arrival_rate) + _log_weights(spec)
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum()


def loss_probability(arrival_rate: float, spec: GoodSpec) -> float:
    """Blocking probability pi_k (Poisson arrivals see time averages)."""
    _check_spec(spec)
    if arrival_rate < 0:
        raise ParameterError(f"arrival rate must be >= 0, got {arrival_rate}")
    if arrival_rate == 0:
        return 0.0
    if spec.c == 1:
        a = arrival_rate / spec.mu
        k = spec.k
        if abs(a - 1.0) < 1e-7:
            return float(stationary_distribution(arrival_rate, spec)[-1])
        if a < 1.0:
            return (1.0 - a) * a**k / (1.0 - a ** (k + 1))
        return (a - 1.0) / (a - a ** (-k))
    return float(stationary_distribution(arrival_rate, spec)[-1])


def erlang_tail(m: int, rate: float, t: float) -> float:
    """P(Erlang(m, rate) > t)."""
    if m < 1:
        raise ParameterError(f"stage count must be >= 1, got {m}")
    if not rate > 0:
        raise ParameterError(f"rate must be positive, got {rate}")
    if t <= 0:
        return 1.0
    x = rate * t
    term = math.exp(-x)
    total = term
    for j in range(1, m):
        term *= x / j
        total += term
    return min(total, 1.0)


def _erlang_tails(m_max: int, rate: float, t: float) -> np.ndarray:
    """erlang_tail(m, rate, t) for m = 1..m_max in one pass."""
    if t <= 0:
        return np.ones(m_max)
    x = rate * t
    out = np.empty(m_max)
    term = math.exp(-x)
    total = term
    out[0] = total
    for j in range(1, m_max):
        term *= x / j
        total += term
        out[j] = total
    return np.minimum(out, 1.0)


def sojourn_tail(j: int, spec: GoodSpec, t: float) -> float:
    """P(sojourn > t) for an accepted request that finds ``j`` in system.

    With all c processors busy the wait is Erlang(j-c+1, mu) (departures at
    the aggregate rate), followed by an Exp(mu/c) service.  For c=1 this is
    Erlang(j+1, mu).
    """
    if t <= 0:
        return 1.0
    s = spec.service_rate
    if j < spec.c:
        return math.exp(-s * t)
    m = j - spec.c + 1
    if spec.c == 1:
        return erlang_tail(m + 1, s, t)
    a = spec.mu
    # Erlang(m, a) + Exp(s), a > s
    conv = math.exp(-s * t) * (a / (a - s)) ** m * (1.0 - erlang_tail(m, a - s, t))
    return min(1.0, erlang_tail(m, a, t) + conv)


def _conditional_tails(spec: GoodSpec, budget: float, delay_model: DelayModel) -> np.ndarray:
    """Exceedance probability given j = 0..k-1 found in system."""
    if budget <= 0:
        return np.ones(spec.k)
    if DelayModel(delay_model) is DelayModel.SERVICE:
        return np.full(spec.k, math.exp(-spec.service_rate * budget))
    if spec.c == 1:
        return _erlang_tails(spec.k, spec.mu, budget)
    return np.array([sojourn_tail(j, spec, budget) for j in range(spec.k)])


def delay_exceedance(
    arrival_rate: float,
    spec: GoodSpec,
    timeout: float,
    delay_model: DelayModel = DelayModel.SOJOURN,
) -> float:
    """P(round trip > timeout | request accepted)."""
    if not timeout > 0:
        raise ParameterError(f"timeout must be positive, got {timeout}")
    budget = timeout - 2.0 * spec.d
    if budget <= 0:
        return 1.0
    pi = stationary_distribution(arrival_rate, spec)
    accept = 1.0 - pi[-1]
    if accept <= 0:
        return 1.0
    tails = _conditional_tails(spec, budget, delay_model)
    return float(min(1.0, np.dot(pi[:-1], tails) / accept))


def failure_probability(
    n_users: float,
    per_user_rate: float,
    spec: GoodSpec,
    timeout: float,
    delay_model: DelayModel = DelayModel.SOJOURN,
) -> FailureBreakdown:
    if n_users < 0:
        raise ParameterError(f"n_users must be >= 0, got {n_users}")
    rate = n_users * per_user_rate
    return FailureBreakdown.compose(
        loss_probability(rate, spec), delay_exceedance(rate, spec, timeout, delay_model)
    )


class FailureModel:
    """Vectorised P^(F) for a fixed set of goods and timeout.

    The conditional exceedance tails do not depend on the load, so
    P^(F)(lambda) = sum_j w_j g_j lambda^j / sum_j g_j lambda^j with weights
    precomputed once (w_k = 1 accounts for loss).
    """

    def __init__(
        self,
        goods: Sequence[GoodSpec],
        timeout: float,
        delay_model: DelayModel = DelayModel.SOJOURN,
    ):
        self.goods = tuple(goods)
        self.timeout = timeout
        kmax = max(g.k for g in self.goods)
        ng = len(self.goods)
        self._j = np.arange(kmax + 1, dtype=float)
        self._logg = np.full((ng, kmax + 1), -np.inf)
        self._w = np.zeros((ng, kmax + 1))
        for i, g in enumerate(self.goods):
            _check_spec(g)
            self._logg[i, : g.k + 1] = _log_weights(g)
            self._w[i, : g.k] = _conditional_tails(g, timeout - 2 * g.d, delay_model)
            self._w[i, g.k] = 1.0
        self.p_fail_empty = self._w[:, 0].copy()

    def __len__(self):
        return len(self.goods)

    def p_fail(self, n: np.ndarray, lambda_u: float) -> np.ndarray:
        """Per-good failure probability for occupancies ``n`` (one per good)."""
        rates = np.asarray(n, dtype=float) * lambda_u
        if rates.min() > 0:
            logt = np.multiply.outer(np.log(rates), self._j)
            logt += self._logg
            logt -= logt.max(axis=1)[:, None]
            e = np.exp(logt)
            return (e * self._w).sum(axis=1) / e.sum(axis=1)
        out = self.p_fail_empty.copy()
        live = rates > 0
        if live.any():
            logt = self._j * np.log(rates[live])[:, None] + self._logg[live]
            logt -= logt.max(axis=1, keepdims=True)
            e = np.exp(logt)
            out[live] = (e * self._w[live]).sum(axis=1) / e.sum(axis=1)
        return out

    def p_fail_one(self, i: int, n: float, lambda_u: float) -> float:
        rate = n * lambda_u
        if rate <= 0:
            return float(self.p_fail_empty[i])
        logt = self._j * math.log(rate) + self._logg[i]
        logt -= logt.max()
        e = np.exp(logt)
        return float((e * self._w[i]).sum() / e.sum())

    def assert_monotone(self, lambda_u: float, n_max: float, samples: int = 201) -> None:
        """Raise ModelError if some good's P^(F) decreases on a sampled grid."""
        grid = np.linspace(0.0, n_max, samples)
        for i in range(len(self.goods)):
            vals = np.array([self.p_fail_one(i, x, lambda_u) for x in grid])
            if np.any(np.diff(vals) < -1e-12):
                raise ModelError(f"failure probability of good {i + 1} is not monotone in n")
