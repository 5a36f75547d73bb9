"""Mean-field dynamics of a WSLS population.

Users of type k on good i fail at rate ``lambda_u * P_i(n_i)`` and leave after
``T_ik`` failures, so they shift out at rate ``lambda_u * n_ik * P_i / T_ik``.
Shifting mass lands on the other goods according to a per-type landing kernel
(uniform over the other goods by default).  A good with zero tolerance is
passed through instantly: mass landing there re-shifts before submitting
anything.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import PopulationState, ScenarioConfig, ShiftPolicy
from .queueing import FailureModel, ModelError, ParameterError

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    pass


class EquilibriumError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def landing_kernel(tolerance: np.ndarray, policy: ShiftPolicy = ShiftPolicy.UNIFORM) -> np.ndarray:
    """L[j, i] = probability that a user leaving good j ends up on good i.

    Zero-tolerance goods are transient states of the shift chain and never
    receive mass.  If no other usable good exists the user stays (L[j, j] = 1).
    """
    t = np.asarray(tolerance, dtype=float)
    ng = len(t)
    if ng == 1:
        return np.ones((1, 1))
    if ShiftPolicy(policy) is ShiftPolicy.PROPORTIONAL:
        step = np.tile(t, (ng, 1))
        np.fill_diagonal(step, 0.0)
        rows = step.sum(axis=1)
        out = np.zeros((ng, ng))
        for j in range(ng):
            if rows[j] > 0:
                out[j] = step[j] / rows[j]
            else:
                out[j, j] = 1.0
        return out
    step = (np.ones((ng, ng)) - np.eye(ng)) / (ng - 1)
    allowed = t > 0
    zero = ~allowed
    out = np.zeros((ng, ng))
    if not zero.any():
        return step
    if allowed.sum() == 0:
        raise ModelError("type has zero tolerance on every good")
    # absorption probabilities from transient (zero-tolerance) goods
    pzz = step[np.ix_(zero, zero)]
    pza = step[np.ix_(zero, allowed)]
    absorb = np.linalg.solve(np.eye(zero.sum()) - pzz, pza)
    out[:, allowed] = step[:, allowed] + step[:, zero] @ absorb
    return out


def _stationary_flux(kernel: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Stationary shift-flux split over goods (left Perron vector of the kernel)."""
    idx = np.flatnonzero(allowed)
    sub = kernel[np.ix_(idx, idx)]
    m = len(idx)
    a = np.vstack([sub.T - np.eye(m), np.ones(m)])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    phi_sub, *_ = np.linalg.lstsq(a, b, rcond=None)
    phi = np.zeros(len(allowed))
    phi[idx] = np.clip(phi_sub, 0.0, None)
    return phi / phi.sum()


def release_parked(n: np.ndarray, tolerances: np.ndarray, policy: ShiftPolicy = ShiftPolicy.UNIFORM) -> np.ndarray:
    """Move mass sitting on zero-tolerance goods to where its shifts land.

    Used when tolerances change under a population, e.g. at a workload switch.
    """
    n = np.array(n, dtype=float)
    tol = np.asarray(tolerances, dtype=float)
    for k, t in enumerate(tol):
        zero = t <= 0
        parked = np.where(zero, n[:, k], 0.0)
        if parked.any():
            n[:, k] = np.where(zero, 0.0, n[:, k]) + parked @ landing_kernel(t, policy)
    return n


class MeanField:
    """Right-hand side of the occupancy ODE for one scenario and tolerance set."""

    def __init__(self, cfg: ScenarioConfig, tolerances: np.ndarray | None = None):
        self.cfg = cfg
        self.tol = np.asarray(
            cfg.tolerance_matrix() if tolerances is None else tolerances, dtype=float
        )
        if self.tol.shape != (len(cfg.types), cfg.n_goods):
            raise ParameterError(
                f"tolerances must have shape {(len(cfg.types), cfg.n_goods)}, got {self.tol.shape}"
            )
        if np.any(self.tol < 0):
            raise ParameterError("tolerances must be non-negative")
        self.failure = FailureModel(cfg.goods, cfg.timeout, cfg.delay_model)
        self.sizes = cfg.type_sizes()
        self.allowed = (self.tol > 0).T  # goods x types
        self.any_blocked = not self.allowed.all()
        self.kernels = np.stack([landing_kernel(t, cfg.shift_policy) for t in self.tol])
        self.flux_split = np.stack(
            [_stationary_flux(L, self.tol[k] > 0) for k, L in enumerate(self.kernels)], axis=1
        )
        with np.errstate(divide="ignore"):
            self.inv_tol = np.where(self.allowed, 1.0 / self.tol.T, 0.0)

    @property
    def n_users(self) -> float:
        return float(self.sizes.sum())

    def outflow(self, n: np.ndarray, lambda_u: float) -> np.ndarray:
        """Shift-out rate per (good, type)."""
        p = self.failure.p_fail(n.sum(axis=1), lambda_u)
        return lambda_u * n * p[:, None] * self.inv_tol

    def rhs(self, n: np.ndarray, rho: float) -> np.ndarray:
        lam = self.cfg.lambda_u(rho)
        if self.any_blocked:
            stuck = (~self.allowed) & (n > 1e-9 * max(self.n_users, 1.0))
        if self.any_blocked and stuck.any():
            i, k = np.argwhere(stuck)[0]
            raise ModelError(f"type {k} has mass {n[i, k]:g} parked on zero-tolerance good {i}")
        out = self.outflow(n, lam)
        inflow = np.empty_like(out)
        for k in range(out.shape[1]):
            inflow[:, k] = out[:, k] @ self.kernels[k]
        return inflow - out


def ode_rhs(
    state: PopulationState,
    cfg: ScenarioConfig,
    rho: float,
    tolerances: np.ndarray | None = None,
) -> np.ndarray:
    """Occupancy derivative dn_ik/dt at ``state`` under workload ``rho``."""
    if np.any(state.n < 0):
        raise ParameterError("occupancies must be non-negative")
    return MeanField(cfg, tolerances).rhs(state.n, rho)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # samples x goods x types
    rhos: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        """Users per good at each sample (samples x goods)."""
        return self.states.sum(axis=2)

    @property
    def final(self) -> PopulationState:
        return PopulationState(self.states[-1].copy())

    def at(self, t: float) -> PopulationState:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return PopulationState(self.states[max(idx, 0)].copy())


def _rk4_step(field: MeanField, n: np.ndarray, rho: float, h: float) -> np.ndarray:
    k1 = field.rhs(n, rho)
    k2 = field.rhs(n + 0.5 * h * k1, rho)
    k3 = field.rhs(n + 0.5 * h * k2, rho)
    k4 = field.rhs(n + h * k3, rho)
    return n + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _clamped(n: np.ndarray, n_users: float, t: float) -> np.ndarray:
    if not np.all(np.isfinite(n)):
        raise IntegrationError(f"non-finite occupancy at t={t:g}; reduce dt")
    if n.min() < -1e-9 * n_users:
        raise IntegrationError(
            f"occupancy {n.min():.3e} below clamp threshold at t={t:g}; reduce dt"
        )
    return np.maximum(n, 0.0)


def integrate(
    state0: PopulationState,
    cfg: ScenarioConfig,
    t_end: float,
    dt: float | None = None,
    tolerances: np.ndarray | None = None,
    sample_every: float | None = None,
) -> Trajectory:
    """Fixed-step RK4 integration following the scenario's workload schedule.

    ``dt`` defaults to 0.1 / lambda_u at the busiest segment.  Steps are cut
    at segment boundaries so every workload switch lands on a step edge.
    """
    field = MeanField(cfg, tolerances)
    pieces = cfg.schedule.breakpoints(t_end)
    if dt is None:
        lam_max = max(cfg.lambda_u(r) for _, _, r in pieces)
        dt = 0.1 / lam_max if lam_max > 0 else t_end
    if not dt > 0:
        raise ParameterError("dt must be positive")
    n = np.array(state0.n, dtype=float)
    nu = field.n_users
    times, states, rhos = [0.0], [n.copy()], [pieces[0][2]]
    next_sample = sample_every if sample_every else None
    for start, end, rho in pieces:
        steps = max(1, int(np.ceil((end - start) / dt - 1e-9)))
        h = (end - start) / steps
        for s in range(steps):
            n = _clamped(_rk4_step(field, n, rho, h), nu, start + (s + 1) * h)
            t = start + (s + 1) * h
            if s == steps - 1:
                t = end
            if next_sample is None or t >= next_sample - 1e-9 * dt or t >= t_end:
                if t > times[-1]:
                    times.append(t)
                    states.append(n.copy())
                    rhos.append(rho)
                if next_sample is not None:
                    while next_sample <= t + 1e-9 * dt:
                        next_sample += sample_every
    return Trajectory(np.array(times), np.array(states), np.array(rhos))


def equilibrium_residual(state: PopulationState, cfg: ScenarioConfig, rho: float, tolerances=None) -> float:
    """Equal-flux violation, normalised by lambda_u * N_u.

    For each type the per-good shift fluxes must match the stationary flux
    split (uniform over usable goods under the default policy).
    """
    field = MeanField(cfg, tolerances)
    return _residual(field, state.n, cfg.lambda_u(rho))


def _residual(field: MeanField, n: np.ndarray, lam: float) -> float:
    if lam == 0:
        return 0.0
    out = field.outflow(n, lam)
    dev = out - field.flux_split * out.sum(axis=0)
    return float(np.abs(dev).max() / (lam * field.n_users))


def _split(field: MeanField, totals: np.ndarray, lam: float) -> np.ndarray:
    """Per-type occupancy matching the equal-flux condition at fixed P(totals)."""
    p = field.failure.p_fail(totals, lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(field.allowed, field.flux_split * field.tol.T / p[:, None], 0.0)
    if not np.all(np.isfinite(w)):
        raise EquilibriumError("zero failure probability on a used good", np.inf)
    return w / w.sum(axis=0) * field.sizes


def solve_equilibrium(
    cfg: ScenarioConfig,
    rho: float,
    tolerances: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 20000,
    damping: float = 0.5,
    initial: PopulationState | None = None,
) -> PopulationState:
    """Equal-flux equilibrium by damped fixed-point iteration.

    Iterates totals <- totals + w * (split(totals).sum - totals).  The damping
    ``w`` starts at ``damping`` and is halved whenever the update grows; if the
    iteration stalls, the ODE is integrated for a while and the iteration
    restarted from there.
    """
    field = MeanField(cfg, tolerances)
    lam = cfg.lambda_u(rho)
    nu = field.n_users
    if lam == 0:
        raise EquilibriumError("workload is zero; every distribution is stationary", np.inf)
    n0 = (initial.n if initial is not None else PopulationState.uniform(cfg).n)
    n0 = np.where(field.allowed, n0, 0.0)
    totals = n0.sum(axis=1)

    def iterate(totals, budget):
        w = damping
        prev = np.inf
        for _ in range(budget):
            target = _split(field, totals, lam).sum(axis=1)
            step = target - totals
            size = np.abs(step).max()
            if size < 1e-13 * nu:
                return target, True
            if size > prev:
                w = max(w * 0.5, 1e-4)
            else:
                w = min(w * 1.05, damping)
            prev = size
            totals = totals + w * step
        return totals, False

    totals, ok = iterate(totals, max_iter // 2)
    if not ok:
        log.info("fixed-point iteration stalled; integrating the ODE before retrying")
        start = PopulationState(_split(field, totals, lam))
        horizon = 50.0 / (lam * max(field.failure.p_fail(totals, lam).min(), 1e-6))
        traj = integrate(start, cfg.with_rho(rho), min(horizon, 1e6), tolerances=tolerances,
                         dt=1.0 / lam)
        totals, ok = iterate(traj.final.totals, max_iter // 2)
    n = _split(field, totals, lam)
    res = _residual(field, n, lam)
    if not ok or res > tol:
        raise EquilibriumError("equilibrium iteration did not converge", res)
    return PopulationState(n)


def quality(state: PopulationState, cfg: ScenarioConfig, rho: float) -> np.ndarray:
    """Per-good quality Q_i = 1 - P_i^(F) at the given occupancy."""
    fm = FailureModel(cfg.goods, cfg.timeout, cfg.delay_model)
    return 1.0 - fm.p_fail(state.totals, cfg.lambda_u(rho))


@dataclass
class StabilityProbe:
    """Deviation of a (occupancy, tolerance) point from an equilibrium."""

    n_star: np.ndarray
    t_star: np.ndarray
    n: np.ndarray
    t: np.ndarray

    @property
    def deviation(self) -> np.ndarray:
        n_star, n = np.ravel(self.n_star), np.ravel(self.n)
        t_star, t = np.ravel(self.t_star), np.ravel(self.t)
        if n_star.shape != n.shape or t_star.shape != t.shape:
            raise ParameterError("probe dimensions are inconsistent")
        return np.concatenate([n - n_star, t - t_star])


def lyapunov_value(probe: StabilityProbe) -> float:
    """V(z) = sum of squared deviations of occupancies and tolerances."""
    z = probe.deviation
    return float(np.dot(z, z))


def lyapunov_series(traj: Trajectory, n_star: np.ndarray, t_star: np.ndarray, t: np.ndarray) -> np.ndarray:
    """V along a trajectory whose tolerances are held at ``t``."""
    return np.array(
        [lyapunov_value(StabilityProbe(n_star, t_star, s.sum(axis=1), t)) for s in traj.states]
    )
