"""Agent-based discrete-event simulation of WSLS users on M/M/c/k servers.

Servers see arrivals in issue order (the network delay to each server is
deterministic), so queueing is resolved when a request is issued: its
departure time follows from the departures already scheduled at that server.
Only the moment the user learns the outcome goes through the event queue.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ..model import (
    InitMode,
    LossLatency,
    DelayModel,
    ScenarioConfig,
    ShiftPolicy,
    errors,
    validate,
)
from . import _pykernel

log = logging.getLogger(__name__)

try:
    from . import _ckernel
except ImportError:  # pragma: no cover - exercised when the extension is not built
    _ckernel = None

BACKENDS = ("cython", "python") if _ckernel is not None else ("python",)
DEFAULT_BACKEND = os.environ.get("WSLS_BACKEND", BACKENDS[0])


class SimulationError(RuntimeError):
    pass


class EventKind(IntEnum):
    REQUEST_ISSUED = 0
    ARRIVAL_AT_SERVER = 1
    SERVICE_COMPLETE = 2
    RESPONSE_RECEIVED = 3
    TIMEOUT_FIRED = 4


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    agent_id: int = field(compare=False)
    good_id: int = field(compare=False)
    request_id: int = field(compare=False, default=-1)


@dataclass
class AgentState:
    type_id: int
    current_good: int
    t: np.ndarray
    x: np.ndarray
    beta: float = 0.1
    adaptive: bool = False
    fail_count: int = 0
    attempts: int = 0


def adapt_step(agent: AgentState, good: int) -> AgentState:
    """Update the failure estimate for ``good`` and move one tolerance unit.

    Called when the agent has just hit its tolerance at ``good`` after
    ``agent.attempts`` resolved requests.  One unit moves from ``good`` to the
    good with the lowest estimate when that estimate is strictly lower and
    the tolerance at ``good`` exceeds 1.
    """
    tg = int(agent.t[good])
    r = agent.attempts
    if tg < 1 or r < tg:
        raise SimulationError(f"accounting error: {r} attempts for tolerance {tg}")
    agent.x[good] = (1.0 - agent.beta) * agent.x[good] + agent.beta * tg / r
    lo = int(np.argmin(agent.x))
    if agent.x[lo] < agent.x[good] and tg > 1:
        agent.t[good] -= 1
        agent.t[lo] += 1
    return agent


class _GeneratorDraws:
    def __init__(self, rng):
        self.rng = rng

    def __call__(self):
        return float(self.rng.random())


def shift_target(agent: AgentState, rng: np.random.Generator, policy: ShiftPolicy = ShiftPolicy.UNIFORM) -> int:
    """Next good for a shifting agent.

    Uniform: any other good with equal probability; landing on a
    zero-tolerance good shifts again immediately.  Proportional: other goods
    weighted by tolerance.  With no usable alternative the agent stays.
    """
    t = [int(v) for v in agent.t]
    return _pykernel._shift(
        agent.current_good,
        t,
        len(t),
        ShiftPolicy(policy) is ShiftPolicy.PROPORTIONAL,
        _GeneratorDraws(rng),
    )


@dataclass
class RunRecord:
    times: np.ndarray
    occupancy: np.ndarray  # samples x goods
    failures: np.ndarray  # per-window failure counts
    resolved: np.ndarray  # per-window resolved request counts
    mean_tolerance: np.ndarray  # samples x goods, NaN without adaptive agents
    agent_tol_min: np.ndarray
    agent_tol_max: np.ndarray
    sojourns: np.ndarray
    sojourn_attempts: np.ndarray
    shifts: int
    seed: int
    digest: str
    backend: str
    initial_occupancy: np.ndarray = field(repr=False, default=None)
    final_tolerances: np.ndarray = field(repr=False, default=None)

    @property
    def p_fail(self) -> np.ndarray:
        """Per-good failure rate per sampling window (NaN if nothing resolved)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.resolved > 0, self.failures / np.maximum(self.resolved, 1), np.nan)

    @property
    def system_p_fail(self) -> np.ndarray:
        f = self.failures.sum(axis=1)
        r = self.resolved.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, f / np.maximum(r, 1), np.nan)

    def tail(self, fraction: float) -> slice:
        n = len(self.times)
        return slice(n - max(1, int(np.ceil(fraction * n))), n)

    def window(self, start: float, end: float) -> slice:
        lo = int(np.searchsorted(self.times, start, side="left"))
        hi = int(np.searchsorted(self.times, end, side="right"))
        return slice(lo, hi)

    def tail_p_fail(self, sl: slice) -> np.ndarray:
        """Aggregate per-good failure rate over a range of windows."""
        f = self.failures[sl].sum(axis=0)
        r = self.resolved[sl].sum(axis=0)
        return f / np.maximum(r, 1)

    def tail_system_p_fail(self, sl: slice) -> float:
        return float(self.failures[sl].sum() / max(self.resolved[sl].sum(), 1))


def _initial_goods(cfg: ScenarioConfig, rng: np.random.Generator, tol: np.ndarray) -> np.ndarray:
    na, ng = tol.shape
    if cfg.init is InitMode.RANDOM_SPLIT:
        cuts = np.sort(rng.random(ng - 1))
        edges = np.concatenate([cuts, [1.0]])
        u = rng.random(na)
        goods = np.searchsorted(edges, u, side="right")
        goods = np.minimum(goods, ng - 1)
    else:
        goods = (rng.random(na) * ng).astype(np.int64)
    draws = _GeneratorDraws(rng)
    for a in np.flatnonzero(tol[np.arange(na), goods] == 0):
        goods[a] = _pykernel._shift(int(goods[a]), tol[a].tolist(), ng, False, draws)
    return goods.astype(np.int64)


def _kernel_input(cfg: ScenarioConfig, rng: np.random.Generator) -> dict:
    ng = cfg.n_goods
    type_of = np.repeat(np.arange(len(cfg.types)), [t.size for t in cfg.types])
    tol = np.array([cfg.types[k].tolerance.t for k in type_of], dtype=np.int64).reshape(-1, ng)
    adaptive = np.array([cfg.types[k].adaptive for k in type_of], dtype=np.uint8)
    beta = np.array(
        [cfg.types[k].learning.beta if cfg.types[k].adaptive else 0.0 for k in type_of]
    )
    x = np.array(
        [[cfg.types[k].learning.x0 if cfg.types[k].adaptive else 0.0] * ng for k in type_of],
        dtype=np.float64,
    ).reshape(-1, ng)
    for k, ts in enumerate(cfg.types):
        if ts.adaptive:
            tol[type_of == k] = ts.learning.t0
    pieces = cfg.schedule.breakpoints(cfg.horizon)
    return {
        "mu": np.array([g.mu for g in cfg.goods], dtype=np.float64),
        "c": np.array([g.c for g in cfg.goods], dtype=np.int64),
        "k": np.array([g.k for g in cfg.goods], dtype=np.int64),
        "d": np.array([g.d for g in cfg.goods], dtype=np.float64),
        "timeout": float(cfg.timeout),
        "service_only": cfg.delay_model is DelayModel.SERVICE,
        "loss_zero": cfg.loss_latency is LossLatency.ZERO,
        "proportional": cfg.shift_policy is ShiftPolicy.PROPORTIONAL,
        "agent_good": _initial_goods(cfg, rng, tol),
        "tol": tol,
        "adaptive": adaptive,
        "beta": beta,
        "x": x,
        "seg_end": np.array([e for _, e, _ in pieces], dtype=np.float64),
        "seg_lam": np.array([cfg.lambda_u(r) for _, _, r in pieces], dtype=np.float64),
        "horizon": float(cfg.horizon),
        "interval": float(cfg.sampling_interval),
        "n_samples": int(np.floor(cfg.horizon / cfg.sampling_interval + 1e-9)),
    }


def run(cfg: ScenarioConfig, backend: str | None = None) -> RunRecord:
    """Simulate ``cfg`` and return the sampled time series.

    Deterministic in (cfg, seed); both backends consume the same PCG64
    stream and produce identical records.
    """
    bad = errors(validate(cfg))
    if bad:
        raise ValueError("invalid scenario: " + "; ".join(map(str, bad)))
    if any(float(t.size) != int(t.size) for t in cfg.types):
        raise ValueError("simulation needs integer type sizes")
    backend = backend or DEFAULT_BACKEND
    if backend not in BACKENDS:
        raise ValueError(f"backend {backend!r} unavailable; choose from {BACKENDS}")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    params = _kernel_input(cfg, rng)
    if backend == "cython":
        out = _ckernel.run_kernel(params, rng.bit_generator)
    else:
        out = _pykernel.run_kernel(params, rng)
    n_adaptive = int(params["adaptive"].sum())
    nsamp = params["n_samples"]
    times = cfg.sampling_interval * np.arange(1, nsamp + 1)
    mean_tol = out["tol_sum"] / n_adaptive if n_adaptive else np.full_like(out["tol_sum"], np.nan)
    return RunRecord(
        times=times,
        occupancy=out["occupancy"],
        failures=out["failures"],
        resolved=out["resolved"],
        mean_tolerance=mean_tol,
        agent_tol_min=out["agent_tol_min"],
        agent_tol_max=out["agent_tol_max"],
        sojourns=out["sojourns"],
        sojourn_attempts=out["sojourn_attempts"],
        shifts=int(out["shifts"]),
        seed=cfg.seed,
        digest=cfg.digest(),
        backend=backend,
        initial_occupancy=np.bincount(params["agent_good"], minlength=cfg.n_goods),
        final_tolerances=out["final_tol"],
    )
