"""Equalised-quality (ideal free) distributions and the tolerances that reach them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import DelayModel, GoodSpec
from .queueing import FailureModel, ParameterError


class InfeasibleError(ValueError):
    def __init__(self, message: str, gamma_c: float | None = None):
        super().__init__(message)
        self.gamma_c = gamma_c


class BracketError(RuntimeError):
    pass


@dataclass
class EqualizedDistribution:
    n_star: np.ndarray
    y: float
    used: tuple[int, ...] = field(default=())

    @property
    def n_min(self) -> float:
        return float(self.n_star.min())


def _bisect(f, lo: float, hi: float, iters: int = 200) -> float:
    """Largest x in [lo, hi] with f(x) <= 0, for non-decreasing f."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return lo


def solve_equalized(
    goods: Sequence[GoodSpec],
    n_users: float,
    lambda_u: float,
    timeout: float,
    delay_model: DelayModel = DelayModel.SOJOURN,
    tol: float = 1e-12,
) -> EqualizedDistribution:
    """Water-filling on the common failure level y.

    Each good is filled up to the occupancy where its failure probability
    reaches y (nothing if it already exceeds y when empty); y is bisected
    until the fill matches the population.
    """
    fm = FailureModel(goods, timeout, delay_model)
    ng = len(goods)
    if n_users <= 0:
        return EqualizedDistribution(np.zeros(ng), float(fm.p_fail_empty.min()), ())
    fm.assert_monotone(lambda_u, n_users)

    def fill(y: float) -> np.ndarray:
        out = np.zeros(ng)
        for i in range(ng):
            if fm.p_fail_empty[i] >= y:
                continue
            if fm.p_fail_one(i, n_users, lambda_u) <= y:
                out[i] = n_users
                continue
            out[i] = _bisect(lambda x: fm.p_fail_one(i, x, lambda_u) - y, 0.0, n_users)
        return out

    y_lo = float(fm.p_fail_empty.min())
    y_hi = float(fm.p_fail(np.full(ng, n_users), lambda_u).max())
    if fill(y_hi).sum() < n_users * (1 - 1e-9):
        raise BracketError("cannot bracket the equalised failure level")
    y = y_hi
    for _ in range(300):
        y = 0.5 * (y_lo + y_hi)
        total = fill(y).sum()
        if abs(total - n_users) <= tol * n_users or y_hi - y_lo <= 1e-16:
            break
        if total < n_users:
            y_lo = y
        else:
            y_hi = y
    n = fill(y)
    used = tuple(int(i) for i in np.flatnonzero(n > 0))
    # residual mass from the bisection tolerance goes to used goods pro rata
    if used:
        n[list(used)] *= n_users / n.sum()
    return EqualizedDistribution(n, float(y), used)


def tolerance_for_distribution(n_star: Sequence[float], type_sizes: Sequence[float]) -> list[np.ndarray]:
    """Identical tolerance shares n*_i / N_u for every type.

    Any family of share vectors with zero ``theorem_residual`` reaches the
    same equalised distribution; this returns the simplest one.
    """
    n_star = np.asarray(n_star, dtype=float)
    sizes = np.asarray(type_sizes, dtype=float)
    if np.any(n_star < 0):
        raise ParameterError("requested distribution has negative entries")
    total = n_star.sum()
    if not np.isclose(total, sizes.sum(), rtol=1e-9):
        raise ParameterError(f"type sizes sum to {sizes.sum():g}, distribution to {total:g}")
    shares = n_star / total
    return [shares.copy() for _ in sizes]


def theorem_residual(shares: Sequence[Sequence[float]], type_sizes: Sequence[float], n_star: Sequence[float]) -> float:
    """max_i |sum_k N_k * share_ik - n*_i| / N_u for normalised shares."""
    s = np.asarray(shares, dtype=float)
    s = s / s.sum(axis=1, keepdims=True)
    sizes = np.asarray(type_sizes, dtype=float)
    n_star = np.asarray(n_star, dtype=float)
    return float(np.abs(sizes @ s - n_star).max() / sizes.sum())


def integerize(shares: Sequence[float], rel_tol: float = 0.01, max_scale: int = 1000) -> np.ndarray:
    """Smallest integer tolerance vector whose normalised shares are within rel_tol.

    Zero shares stay zero; every other entry is at least 1.  If no scale up to
    ``max_scale`` meets the tolerance, the best vector found is returned.
    """
    s = np.asarray(shares, dtype=float)
    s = s / s.sum()
    nz = s > 0
    best, best_err = None, np.inf
    for scale in range(1, max_scale + 1):
        t = np.where(nz, np.maximum(np.rint(s * scale), 1), 0).astype(int)
        with np.errstate(over="ignore"):
            err = np.max(np.abs(t[nz] / t.sum() - s[nz]) / s[nz])
        if best is None:
            best, best_err = t, err
        if err <= rel_tol:
            return t
        if err < best_err:
            best, best_err = t, err
    return best


def critical_selectivity(n_star: Sequence[float], n_users: float, n_goods: int) -> float:
    """Smallest selective fraction for which a hybrid population can equalise."""
    n_min = float(np.min(n_star))
    return float(np.clip((n_users - n_goods * n_min) / n_users, 0.0, 1.0))


def hybrid_tolerances(n_star: Sequence[float], n_users: float, n_goods: int, gamma: float) -> np.ndarray:
    """Tolerance shares of the selective type when non-selective users spread evenly."""
    if not 0.0 < gamma <= 1.0:
        raise ParameterError(f"gamma must lie in (0, 1], got {gamma}")
    n_star = np.asarray(n_star, dtype=float)
    gamma_c = critical_selectivity(n_star, n_users, n_goods)
    # (n* - (1 - gamma) N / N_g) / (gamma N), arranged to avoid cancellation
    shares = (n_star - n_users / n_goods) / (gamma * n_users) + 1.0 / n_goods
    if np.any(shares < -1e-12):
        raise InfeasibleError(
            f"gamma={gamma:g} is below the critical selective fraction {gamma_c:.6g}", gamma_c
        )
    # at gamma = gamma_c the argmin share is zero up to rounding
    return np.where(shares <= 1e-12, 0.0, shares)
