"""Domain types and scenario configuration.

Everything here is immutable once built; the analytic modules and the
simulator only read from these objects.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ShiftPolicy(str, Enum):
    UNIFORM = "uniform"
    PROPORTIONAL = "proportional"


class DelayModel(str, Enum):
    """Which part of the server response time counts against the timeout."""

    SOJOURN = "sojourn"  # waiting + service
    SERVICE = "service"  # service only


class LossLatency(str, Enum):
    ROUND_TRIP = "round_trip"  # rejection observed after 2*d
    ZERO = "zero"


class InitMode(str, Enum):
    UNIFORM = "uniform"  # every agent picks a good uniformly at random
    RANDOM_SPLIT = "random_split"  # random proportions, then agents assigned


@dataclass(frozen=True)
class GoodSpec:
    mu: float
    c: int = 1
    k: int = 10
    d: float = 0.0
    id: int = 0

    @property
    def service_rate(self) -> float:
        """Exponential rate of a single processor."""
        return self.mu / self.c


@dataclass(frozen=True)
class ToleranceProfile:
    t: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "t", tuple(int(v) for v in self.t))

    def __len__(self):
        return len(self.t)

    def shares(self) -> np.ndarray:
        t = np.asarray(self.t, dtype=float)
        return t / t.sum()


@dataclass(frozen=True)
class AdaptiveConfig:
    t0: int = 5
    x0: float = 0.0
    beta: float = 0.10


@dataclass(frozen=True)
class TypeSpec:
    size: int
    tolerance: ToleranceProfile
    adaptive: bool = False
    learning: AdaptiveConfig | None = None


@dataclass(frozen=True)
class WorkloadSchedule:
    """Piecewise-constant workload; the last segment extends past its end."""

    segments: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "segments", tuple((float(a), float(b)) for a, b in self.segments)
        )

    @classmethod
    def constant(cls, rho: float, duration: float = 1.0) -> "WorkloadSchedule":
        return cls(((duration, rho),))

    @property
    def boundaries(self) -> np.ndarray:
        """Segment end times (cumulative durations)."""
        return np.cumsum([s[0] for s in self.segments])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([s[1] for s in self.segments])

    @property
    def duration(self) -> float:
        return float(sum(s[0] for s in self.segments))

    def rho_at(self, t: float) -> float:
        ends = self.boundaries
        idx = int(np.searchsorted(ends, t, side="right"))
        return self.segments[min(idx, len(self.segments) - 1)][1]

    def breakpoints(self, horizon: float) -> list[tuple[float, float, float]]:
        """(start, end, rho) triples covering [0, horizon]."""
        out = []
        start = 0.0
        for i, (dur, rho) in enumerate(self.segments):
            end = start + dur if i < len(self.segments) - 1 else max(horizon, start + dur)
            end = min(end, horizon)
            if end > start:
                out.append((start, end, rho))
            start += dur
            if start >= horizon:
                break
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    goods: tuple[GoodSpec, ...]
    types: tuple[TypeSpec, ...]
    n_users: int
    timeout: float
    schedule: WorkloadSchedule
    shift_policy: ShiftPolicy = ShiftPolicy.UNIFORM
    horizon: float = 1000.0
    seed: int = 0
    sampling_interval: float = 1.0
    delay_model: DelayModel = DelayModel.SOJOURN
    loss_latency: LossLatency = LossLatency.ROUND_TRIP
    init: InitMode = InitMode.UNIFORM
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "goods", tuple(self.goods))
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "shift_policy", ShiftPolicy(self.shift_policy))
        object.__setattr__(self, "delay_model", DelayModel(self.delay_model))
        object.__setattr__(self, "loss_latency", LossLatency(self.loss_latency))
        object.__setattr__(self, "init", InitMode(self.init))

    @property
    def n_goods(self) -> int:
        return len(self.goods)

    @property
    def capacity(self) -> float:
        """Total service capacity (sum of mu over goods)."""
        return float(sum(g.mu for g in self.goods))

    def lambda_u(self, rho: float) -> float:
        """Per-user request rate giving system workload ``rho``."""
        return rho * self.capacity / self.n_users

    def tolerance_matrix(self) -> np.ndarray:
        """Tolerances as a (types x goods) float array."""
        return np.array([t.tolerance.t for t in self.types], dtype=float)

    def type_sizes(self) -> np.ndarray:
        return np.array([t.size for t in self.types], dtype=float)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def with_rho(self, rho: float) -> "ScenarioConfig":
        return replace(self, schedule=WorkloadSchedule.constant(rho, self.horizon))

    def with_tolerances(self, tolerances: Sequence[Sequence[int]]) -> "ScenarioConfig":
        types = tuple(
            replace(ts, tolerance=ToleranceProfile(tuple(t)))
            for ts, t in zip(self.types, tolerances)
        )
        return replace(self, types=types)

    def digest(self) -> str:
        blob = json.dumps(to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class PopulationState:
    """Occupancy matrix, goods-major: ``n[i, k]`` users of type k on good i."""

    n: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        if self.n.ndim == 1:
            self.n = self.n[:, None]
        if self.n.size and self.n.min() < -1e-9 * max(1.0, abs(self.n.sum())):
            raise ValueError(f"negative occupancy {self.n.min():g}")

    @classmethod
    def uniform(cls, cfg: ScenarioConfig) -> "PopulationState":
        sizes = cfg.type_sizes()
        return cls(np.tile(sizes / cfg.n_goods, (cfg.n_goods, 1)))

    @property
    def totals(self) -> np.ndarray:
        """Users per good, summed over types."""
        return self.n.sum(axis=1)

    @property
    def population(self) -> float:
        return float(self.n.sum())

    def copy(self) -> "PopulationState":
        return PopulationState(self.n.copy())


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    severity: str = "error"

    def __str__(self):
        return f"[{self.severity}] {self.field}: {self.message}"


def validate(cfg: ScenarioConfig) -> list[Violation]:
    """Check every scenario invariant; returns an empty list for a clean config."""
    out: list[Violation] = []
    if cfg.n_goods == 0:
        out.append(Violation("goods", "at least one good is required"))
    for i, g in enumerate(cfg.goods):
        tag = f"goods[{i}]"
        if not g.mu > 0:
            out.append(Violation(f"{tag}.mu", f"mu must be > 0, got {g.mu}"))
        if g.c < 1:
            out.append(Violation(f"{tag}.c", f"c must be >= 1, got {g.c}"))
        if g.k < g.c:
            out.append(Violation(f"{tag}.k", f"k must be >= c ({g.c}), got {g.k}"))
        if g.d < 0:
            out.append(Violation(f"{tag}.d", f"d must be >= 0, got {g.d}"))
        if cfg.timeout <= 2 * g.d:
            out.append(
                Violation(
                    f"{tag}.d",
                    f"good {i + 1} unusable: 2·d ≥ τ ({2 * g.d:g} >= {cfg.timeout:g})",
                    "warning",
                )
            )
    if not cfg.types:
        out.append(Violation("types", "at least one type is required"))
    total = sum(t.size for t in cfg.types)
    if not math.isclose(total, cfg.n_users, rel_tol=1e-9, abs_tol=1e-9):
        out.append(
            Violation("types.size", f"TypeSpec sizes sum to {total}, expected n_users={cfg.n_users}")
        )
    for k, ts in enumerate(cfg.types):
        tag = f"types[{k}]"
        if ts.size < 0:
            out.append(Violation(f"{tag}.size", "size must be >= 0"))
        if len(ts.tolerance) != cfg.n_goods:
            out.append(
                Violation(
                    f"{tag}.tolerance",
                    f"expected {cfg.n_goods} entries, got {len(ts.tolerance)}",
                )
            )
        if any(v < 0 for v in ts.tolerance.t):
            out.append(Violation(f"{tag}.tolerance", "tolerances must be >= 0"))
        elif not any(v > 0 for v in ts.tolerance.t):
            out.append(Violation(f"{tag}.tolerance", "at least one good needs tolerance >= 1"))
        if ts.adaptive:
            if ts.learning is None:
                out.append(Violation(f"{tag}.learning", "adaptive type needs a learning config"))
            else:
                lc = ts.learning
                if lc.t0 < 1:
                    out.append(Violation(f"{tag}.learning.t0", "t0 must be >= 1"))
                if not 0.0 <= lc.x0 <= 1.0:
                    out.append(Violation(f"{tag}.learning.x0", "x0 must be a probability"))
                if not 0.0 < lc.beta <= 1.0:
                    out.append(Violation(f"{tag}.learning.beta", "beta must lie in (0, 1]"))
        elif ts.learning is not None:
            out.append(Violation(f"{tag}.learning", "learning config given for a non-adaptive type"))
    if cfg.n_users < 0:
        out.append(Violation("n_users", "n_users must be >= 0"))
    if not cfg.timeout > 0:
        out.append(Violation("timeout", "timeout must be > 0"))
    if not cfg.horizon > 0:
        out.append(Violation("horizon", "horizon must be > 0"))
    if not cfg.sampling_interval > 0:
        out.append(Violation("sampling_interval", "sampling_interval must be > 0"))
    if not cfg.schedule.segments:
        out.append(Violation("schedule", "schedule needs at least one segment"))
    for j, (dur, rho) in enumerate(cfg.schedule.segments):
        if dur <= 0:
            out.append(Violation(f"schedule[{j}].duration", "duration must be > 0"))
        if rho < 0:
            out.append(Violation(f"schedule[{j}].rho", "rho must be >= 0"))
    return out


def errors(violations: Iterable[Violation]) -> list[Violation]:
    return [v for v in violations if v.severity == "error"]


# -- serialization ---------------------------------------------------------


def to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "name": cfg.name,
        "goods": [asdict(g) for g in cfg.goods],
        "types": [
            {
                "size": t.size,
                "tolerance": list(t.tolerance.t),
                "adaptive": t.adaptive,
                **({"learning": asdict(t.learning)} if t.learning is not None else {}),
            }
            for t in cfg.types
        ],
        "n_users": cfg.n_users,
        "timeout": cfg.timeout,
        "schedule": [{"duration": d, "rho": r} for d, r in cfg.schedule.segments],
        "shift_policy": cfg.shift_policy.value,
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "sampling_interval": cfg.sampling_interval,
        "delay_model": cfg.delay_model.value,
        "loss_latency": cfg.loss_latency.value,
        "init": cfg.init.value,
    }


def from_dict(data: dict) -> ScenarioConfig:
    goods = tuple(
        GoodSpec(
            mu=float(g["mu"]),
            c=int(g.get("c", 1)),
            k=int(g.get("k", 10)),
            d=float(g.get("d", 0.0)),
            id=int(g.get("id", i)),
        )
        for i, g in enumerate(data["goods"])
    )
    types = []
    for t in data["types"]:
        learning = t.get("learning")
        types.append(
            TypeSpec(
                size=int(t["size"]),
                tolerance=ToleranceProfile(tuple(t["tolerance"])),
                adaptive=bool(t.get("adaptive", False)),
                learning=AdaptiveConfig(**learning) if learning is not None else None,
            )
        )
    sched = data["schedule"]
    if isinstance(sched, dict):
        sched = sched["segments"]
    segments = tuple(
        (s["duration"], s["rho"]) if isinstance(s, dict) else tuple(s) for s in sched
    )
    return ScenarioConfig(
        goods=goods,
        types=tuple(types),
        n_users=int(data["n_users"]),
        timeout=float(data["timeout"]),
        schedule=WorkloadSchedule(segments),
        shift_policy=data.get("shift_policy", "uniform"),
        horizon=float(data.get("horizon", 1000.0)),
        seed=int(data.get("seed", 0)),
        sampling_interval=float(data.get("sampling_interval", 1.0)),
        delay_model=data.get("delay_model", "sojourn"),
        loss_latency=data.get("loss_latency", "round_trip"),
        init=data.get("init", "uniform"),
        name=data.get("name", "scenario"),
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        return from_dict(json.load(fh))


def dump_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(cfg), fh, indent=2)
        fh.write("\n")


# -- reference system ------------------------------------------------------

TABLE1_MU = (100.0, 200.0, 400.0)
TABLE1_D = (0.010, 0.020, 0.030)


def table1_goods() -> tuple[GoodSpec, ...]:
    return tuple(GoodSpec(mu=m, c=1, k=10, d=d, id=i) for i, (m, d) in enumerate(zip(TABLE1_MU, TABLE1_D)))


def table1_scenario(
    rho: float = 1.0,
    tolerance: int = 1,
    adaptive: bool = False,
    t0: int = 5,
    horizon: float = 1000.0,
    seed: int = 0,
    n_users: int = 1000,
    name: str = "table1",
    **kw,
) -> ScenarioConfig:
    """Three-server reference system (N_u=1000, mu={100,200,400}, k=10, tau=100 ms)."""
    goods = table1_goods()
    if adaptive:
        ts = TypeSpec(n_users, ToleranceProfile((t0,) * len(goods)), True, AdaptiveConfig(t0=t0))
    else:
        ts = TypeSpec(n_users, ToleranceProfile((tolerance,) * len(goods)))
    schedule = kw.pop("schedule", None) or WorkloadSchedule.constant(rho, horizon)
    return ScenarioConfig(
        goods=goods,
        types=(ts,),
        n_users=n_users,
        timeout=0.100,
        schedule=schedule,
        horizon=horizon,
        seed=seed,
        name=name,
        **kw,
    )


FIG6_RHOS = (0.75, 1.25, 0.75, 1.25, 0.75, 0.5, 0.25, 0.5, 0.75)


def fig6_schedule(segment: float = 3600.0) -> WorkloadSchedule:
    return WorkloadSchedule(tuple((segment, r) for r in FIG6_RHOS))
