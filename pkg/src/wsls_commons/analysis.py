"""Pipelines joining the simulator with the mean-field reference."""
from __future__ import annotations

import numpy as np

from .dynamics import Trajectory, integrate, release_parked, solve_equilibrium
from .ifd import critical_selectivity, hybrid_tolerances, solve_equalized, tolerance_for_distribution
from .metrics import SeriesBundle, equalization_spread, smooth, tail_mean
from .model import PopulationState, ScenarioConfig, ToleranceProfile, TypeSpec
from .queueing import FailureModel


def is_adaptive(cfg: ScenarioConfig) -> bool:
    return any(t.adaptive for t in cfg.types)


def ideal_tolerances(cfg: ScenarioConfig, rho: float) -> np.ndarray:
    """Tolerance shares (types x goods) that make the ODE settle on the equalised distribution."""
    eq = solve_equalized(cfg.goods, cfg.n_users, cfg.lambda_u(rho), cfg.timeout, cfg.delay_model)
    return np.array(tolerance_for_distribution(eq.n_star, cfg.type_sizes()))


def reference_equilibrium(cfg: ScenarioConfig, rho: float) -> np.ndarray:
    """Mean-field target occupancy per good.

    Adaptive populations are compared with the equalised distribution; fixed
    tolerances with the equal-flux equilibrium.
    """
    if is_adaptive(cfg):
        return solve_equalized(
            cfg.goods, cfg.n_users, cfg.lambda_u(rho), cfg.timeout, cfg.delay_model
        ).n_star
    return solve_equilibrium(cfg, rho).totals


def ode_reference(
    cfg: ScenarioConfig,
    initial: np.ndarray | None = None,
    dt: float | None = None,
    sample_every: float | None = None,
) -> Trajectory:
    """Integrate the ODE over the scenario horizon.

    With adaptive types the tolerances are fixed per workload segment at the
    values that equalise failure probabilities.
    """
    sizes = cfg.type_sizes()
    if initial is None:
        state = PopulationState.uniform(cfg)
    else:
        totals = np.asarray(initial, dtype=float)
        state = PopulationState(np.outer(totals / totals.sum(), sizes))
    sample_every = sample_every or cfg.sampling_interval
    if not is_adaptive(cfg):
        return integrate(state, cfg, cfg.horizon, dt=dt, sample_every=sample_every)
    times, states, rhos = [], [], []
    for start, end, rho in cfg.schedule.breakpoints(cfg.horizon):
        seg_cfg = cfg.with_overrides(horizon=end - start).with_rho(rho)
        tols = ideal_tolerances(cfg, rho)
        state = PopulationState(release_parked(state.n, tols, cfg.shift_policy))
        traj = integrate(
            state, seg_cfg, end - start, dt=dt, tolerances=tols, sample_every=sample_every,
        )
        skip = 1 if times else 0
        times.extend(traj.times[skip:] + start)
        states.extend(traj.states[skip:])
        rhos.extend(traj.rhos[skip:])
        state = traj.final
    return Trajectory(np.array(times), np.array(states), np.array(rhos))


def hybrid_plan(cfg: ScenarioConfig, rho: float, gamma: float | None = None) -> dict:
    """Hybrid population reaching the equalised distribution at workload ``rho``.

    Non-selective users carry tolerance 1 everywhere; the selective fraction
    ``gamma`` (default: the critical value) carries the returned shares.
    The equilibrium of the two-type population is solved with fractional
    type sizes.  Raises InfeasibleError when gamma is below critical.
    """
    nu, ng = cfg.n_users, cfg.n_goods
    eq = solve_equalized(cfg.goods, nu, cfg.lambda_u(rho), cfg.timeout, cfg.delay_model)
    gamma_c = critical_selectivity(eq.n_star, nu, ng)
    if gamma is None:
        gamma = gamma_c
    shares = hybrid_tolerances(eq.n_star, nu, ng, gamma)
    types = (
        TypeSpec((1.0 - gamma) * nu, ToleranceProfile((1,) * ng)),
        TypeSpec(gamma * nu, ToleranceProfile(tuple(1 if s > 0 else 0 for s in shares))),
    )
    mixed = cfg.with_overrides(types=types).with_rho(rho)
    tols = np.vstack([np.ones(ng), shares])
    state = solve_equilibrium(mixed, rho, tolerances=tols)
    p = FailureModel(cfg.goods, cfg.timeout, cfg.delay_model).p_fail(state.totals, cfg.lambda_u(rho))
    return {
        "rho": rho,
        "gamma": gamma,
        "gamma_c": gamma_c,
        "shares": shares,
        "n_star": eq.n_star,
        "y": eq.y,
        "equilibrium": state.n,
        "equilibrium_totals": state.totals,
        "pfail": p,
        "pfail_spread": float(p.max() - p.min()),
    }


def _at(traj: Trajectory, times: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(traj.times, times, side="right") - 1, 0, len(traj.times) - 1)
    return traj.totals[idx]


def compare(cfg: ScenarioConfig, record, traj: Trajectory, tail: float = 0.2, alpha: float = 0.05):
    """Joined sim/ODE columns plus a summary of the tail gaps."""
    ng = cfg.n_goods
    ode_n = _at(traj, record.times)
    fm = FailureModel(cfg.goods, cfg.timeout, cfg.delay_model)
    lam = np.array([cfg.lambda_u(cfg.schedule.rho_at(t - 1e-9)) for t in record.times])
    ode_p = np.array([fm.p_fail(n, l) for n, l in zip(ode_n, lam)])
    sim_p = record.p_fail
    cols = {"time": record.times}
    for i in range(ng):
        cols[f"sim_n_{i + 1}"] = record.occupancy[:, i]
        cols[f"ode_n_{i + 1}"] = ode_n[:, i]
    for i in range(ng):
        cols[f"sim_pfail_{i + 1}"] = sim_p[:, i]
        cols[f"ode_pfail_{i + 1}"] = ode_p[:, i]
    sl = record.tail(tail)
    sim_tail = record.occupancy[sl].mean(axis=0)
    ode_tail = ode_n[sl].mean(axis=0)
    sim_tail_p = record.tail_p_fail(sl)
    ode_tail_p = ode_p[sl].mean(axis=0)
    smoothed = np.column_stack([smooth(sim_p[:, i], alpha) for i in range(ng)])
    tail_smoothed = np.array([tail_mean(smoothed[:, i], 0.1) for i in range(ng)])
    summary = {
        "tail_fraction": tail,
        "sim_tail_occupancy": sim_tail,
        "ode_tail_occupancy": ode_tail,
        "occupancy_gap": np.abs(sim_tail - ode_tail),
        "occupancy_gap_max_fraction": float(np.abs(sim_tail - ode_tail).max() / cfg.n_users),
        "sim_tail_pfail": sim_tail_p,
        "ode_tail_pfail": ode_tail_p,
        "pfail_gap": np.abs(sim_tail_p - ode_tail_p),
        "sim_system_pfail": record.tail_system_p_fail(sl),
        "equalization_spread": equalization_spread(tail_smoothed),
        "config_digest": record.digest,
        "seed": record.seed,
    }
    bundle = SeriesBundle(cols, {"config_digest": record.digest, "seed": record.seed, "module": "compare"})
    return bundle, summary
