"""Win-Stay, Lose-Shift users sharing queueing servers: analysis and simulation."""
from .model import (
    AdaptiveConfig,
    DelayModel,
    GoodSpec,
    InitMode,
    LossLatency,
    PopulationState,
    ScenarioConfig,
    ShiftPolicy,
    ToleranceProfile,
    TypeSpec,
    WorkloadSchedule,
    load_scenario,
    dump_scenario,
    table1_scenario,
    validate,
)
from .queueing import FailureModel, failure_probability, loss_probability, delay_exceedance
from .dynamics import integrate, ode_rhs, solve_equilibrium, equilibrium_residual
from .ifd import solve_equalized, tolerance_for_distribution, critical_selectivity, hybrid_tolerances
from .simulator import RunRecord, run

__all__ = [
    "AdaptiveConfig",
    "DelayModel",
    "GoodSpec",
    "InitMode",
    "LossLatency",
    "PopulationState",
    "ScenarioConfig",
    "ShiftPolicy",
    "ToleranceProfile",
    "TypeSpec",
    "WorkloadSchedule",
    "load_scenario",
    "dump_scenario",
    "table1_scenario",
    "validate",
    "FailureModel",
    "failure_probability",
    "loss_probability",
    "delay_exceedance",
    "integrate",
    "ode_rhs",
    "solve_equilibrium",
    "equilibrium_residual",
    "solve_equalized",
    "tolerance_for_distribution",
    "critical_selectivity",
    "hybrid_tolerances",
    "RunRecord",
    "run",
]

__version__ = "0.1.0"
