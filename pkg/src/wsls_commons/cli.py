"""Command-line entry point: ``wsls <subcommand> --scenario <file|name> [overrides]``.

Artifacts are written to ``--out`` as ``<scenario>_<seed>_<kind>.{csv,json}``.
Exit codes: 0 success, 2 invalid scenario or arguments, 3 numerical failure.
Errors are reported on stderr as a JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis
from .dynamics import EquilibriumError, IntegrationError, equilibrium_residual, solve_equilibrium
from .ifd import (
    BracketError,
    InfeasibleError,
    critical_selectivity,
    integerize,
    solve_equalized,
    theorem_residual,
    tolerance_for_distribution,
)
from .metrics import artifact_name, record_bundle, trajectory_bundle, write_json
from .model import AdaptiveConfig, ScenarioConfig, ToleranceProfile, errors, load_scenario, validate
from .queueing import FailureModel, ModelError, ParameterError
from .simulator import BACKENDS, run

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
SUBCOMMANDS = ("simulate", "ode", "equilibrium", "ifd", "hybrid", "compare", "sweep")


class ScenarioError(Exception):
    def __init__(self, message: str, report: list | None = None):
        super().__init__(message)
        self.report = report or []


def shipped_scenarios() -> list[str]:
    root = resources.files("wsls_commons") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(ref: str) -> ScenarioConfig:
    path = Path(ref)
    if not path.exists():
        shipped = resources.files("wsls_commons") / "scenarios" / f"{ref}.json"
        if not shipped.is_file():
            raise ScenarioError(
                f"no scenario file {ref!r}",
                [{"field": "scenario", "message": f"not a file or shipped scenario ({', '.join(shipped_scenarios())})"}],
            )
        path = Path(str(shipped))
    try:
        return load_scenario(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}",
                            [{"field": "scenario", "message": str(exc)}]) from exc


def apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    """Return a modified copy; the file on disk is never touched."""
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if args.horizon is not None:
        cfg = cfg.with_overrides(horizon=args.horizon)
    if args.rho is not None:
        cfg = cfg.with_rho(args.rho)
    if args.policy is not None:
        cfg = cfg.with_overrides(shift_policy=args.policy)
    if args.adaptive is not None:
        on = args.adaptive == "on"
        types = []
        for ts in cfg.types:
            if on and not ts.adaptive:
                lc = AdaptiveConfig()
                types.append(replace(ts, adaptive=True, learning=lc,
                                     tolerance=ToleranceProfile((lc.t0,) * cfg.n_goods)))
            elif not on and ts.adaptive:
                t0 = ts.learning.t0 if ts.learning else 5
                types.append(replace(ts, adaptive=False, learning=None,
                                     tolerance=ToleranceProfile((t0,) * cfg.n_goods)))
            else:
                types.append(ts)
        cfg = cfg.with_overrides(types=tuple(types))
    return cfg


def _checked(cfg: ScenarioConfig) -> ScenarioConfig:
    report = validate(cfg)
    for v in report:
        if v.severity != "error":
            log.warning("%s", v)
    bad = errors(report)
    if bad:
        raise ScenarioError(
            "scenario failed validation",
            [{"field": v.field, "message": v.message, "severity": v.severity} for v in bad],
        )
    return cfg


def _rhos(cfg: ScenarioConfig, args) -> list[float]:
    if args.rho is not None:
        return [float(args.rho)]
    seen = []
    for r in cfg.schedule.rhos:
        if float(r) not in seen:
            seen.append(float(r))
    return seen


class Writer:
    def __init__(self, out: Path, cfg: ScenarioConfig):
        self.out = out
        self.cfg = cfg
        self.paths: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, kind: str, ext: str, name: str | None = None) -> Path:
        p = self.out / artifact_name(name or self.cfg.name, self.cfg.seed, kind, ext)
        self.paths.append(str(p))
        return p

    def json(self, kind: str, obj: dict) -> None:
        body = {"scenario": self.cfg.name, "config_digest": self.cfg.digest(), "seed": self.cfg.seed}
        body.update(obj)
        write_json(body, self.path(kind, "json"))


# -- subcommands ----------------------------------------------------------


def cmd_simulate(cfg, args, w: Writer) -> None:
    rec = run(cfg, backend=args.backend)
    bundle = record_bundle(rec, alpha=args.alpha)
    bundle.write_csv(w.path("sim", "csv"))
    bundle.write_json(w.path("sim", "json"))
    sl = rec.tail(args.tail)
    w.json("sim_summary", {
        "tail_fraction": args.tail,
        "tail_occupancy": rec.occupancy[sl].mean(axis=0),
        "tail_pfail": rec.tail_p_fail(sl),
        "tail_system_pfail": rec.tail_system_p_fail(sl),
        "initial_occupancy": rec.initial_occupancy,
        "shifts": rec.shifts,
        "sojourns": rec.sojourns,
        "sojourn_attempts": rec.sojourn_attempts,
    })


def cmd_ode(cfg, args, w: Writer) -> None:
    traj = analysis.ode_reference(cfg, dt=args.dt)
    trajectory_bundle(traj, cfg.digest(), cfg.seed).write_csv(w.path("ode", "csv"))


def cmd_equilibrium(cfg, args, w: Writer) -> None:
    fm = FailureModel(cfg.goods, cfg.timeout, cfg.delay_model)
    points = []
    for rho in _rhos(cfg, args):
        state = solve_equilibrium(cfg, rho)
        points.append({
            "rho": rho,
            "n": state.n,
            "totals": state.totals,
            "population": state.population,
            "pfail": fm.p_fail(state.totals, cfg.lambda_u(rho)),
            "residual": equilibrium_residual(state, cfg, rho),
        })
    w.json("equilibrium", {"points": points})


def cmd_ifd(cfg, args, w: Writer) -> None:
    points = []
    sizes = cfg.type_sizes()
    for rho in _rhos(cfg, args):
        eq = solve_equalized(cfg.goods, cfg.n_users, cfg.lambda_u(rho), cfg.timeout, cfg.delay_model)
        shares = tolerance_for_distribution(eq.n_star, sizes)
        points.append({
            "rho": rho,
            "n_star": eq.n_star,
            "y": eq.y,
            "used": list(eq.used),
            "shares": shares,
            "integer_tolerances": [integerize(s) for s in shares],
            "theorem_residual": theorem_residual(shares, sizes, eq.n_star),
            "gamma_c": critical_selectivity(eq.n_star, cfg.n_users, cfg.n_goods),
        })
    w.json("ifd", {"points": points})


def cmd_hybrid(cfg, args, w: Writer) -> None:
    points = []
    for rho in _rhos(cfg, args):
        plan = analysis.hybrid_plan(cfg, rho, args.gamma)
        plan.pop("y")
        points.append(plan)
    w.json("hybrid", {"points": points})


def cmd_compare(cfg, args, w: Writer) -> None:
    rec = run(cfg, backend=args.backend)
    traj = analysis.ode_reference(cfg, initial=rec.initial_occupancy, dt=args.dt)
    bundle, summary = analysis.compare(cfg, rec, traj, tail=args.tail, alpha=args.alpha)
    bundle.write_csv(w.path("compare", "csv"))
    w.json("compare_summary", summary)


def _sweep_job(job):
    cfg, rho, seed, out, alpha, tail, backend = job
    point = cfg.with_overrides(seed=seed, name=f"{cfg.name}_rho{rho:g}").with_rho(rho)
    rec = run(point, backend=backend)
    path = Path(out) / artifact_name(point.name, seed, "sim", "csv")
    record_bundle(rec, alpha=alpha).write_csv(path)
    sl = rec.tail(tail)
    return {
        "rho": rho,
        "seed": seed,
        "file": path.name,
        "config_digest": point.digest(),
        "tail_occupancy": rec.occupancy[sl].mean(axis=0).tolist(),
        "tail_pfail": rec.tail_p_fail(sl).tolist(),
        "tail_system_pfail": rec.tail_system_p_fail(sl),
    }


def cmd_sweep(cfg, args, w: Writer) -> None:
    rhos = args.rhos or _rhos(cfg, args)
    seeds = args.seeds or [cfg.seed]
    jobs = [(cfg, float(r), int(s), str(w.out), args.alpha, args.tail, args.backend)
            for r in rhos for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    w.paths.extend(str(w.out / r["file"]) for r in results)
    w.json("sweep", {"points": results})


COMMANDS = {
    "simulate": cmd_simulate,
    "ode": cmd_ode,
    "equilibrium": cmd_equilibrium,
    "ifd": cmd_ifd,
    "hybrid": cmd_hybrid,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


# -- argument parsing -------------------------------------------------------


def _alpha(text: str) -> float:
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1]")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("fraction must lie in (0, 1]")
    return v


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _csv_floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _csv_ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part.strip("-"):
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--scenario", required=True,
                        help="scenario JSON path or shipped scenario name")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--seed", type=_u64, help="override the scenario seed")
    common.add_argument("--rho", type=float, help="constant workload over the whole horizon")
    common.add_argument("--horizon", type=float, help="simulated seconds")
    common.add_argument("--policy", choices=["uniform", "proportional"], help="shift policy")
    common.add_argument("--adaptive", choices=["on", "off"], help="force adaptive tolerances on or off")
    common.add_argument("--alpha", type=_alpha, default=0.05, help="smoothing factor (default 0.05)")
    common.add_argument("--tail", type=_fraction, default=0.2,
                        help="fraction of trailing samples in summaries (default 0.2)")
    common.add_argument("--backend", choices=list(BACKENDS), help="simulator kernel")
    common.add_argument("--dt", type=float, help="ODE step (default 0.1/lambda_u)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wsls", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    helps = {
        "simulate": "agent-based run; writes the sampled series",
        "ode": "integrate the mean-field ODE over the horizon",
        "equilibrium": "equal-flux equilibrium per workload",
        "ifd": "equalised distribution and tolerance shares",
        "hybrid": "critical selective fraction and hybrid shares",
        "compare": "simulation next to the ODE, with gap summary",
        "sweep": "one simulation per (rho, seed) grid point",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name], allow_abbrev=False)
        if name == "hybrid":
            p.add_argument("--gamma", type=float, help="selective fraction (default: critical value)")
        if name == "sweep":
            p.add_argument("--rhos", type=_csv_floats, help="comma-separated workloads")
            p.add_argument("--seeds", type=_csv_ints, help="comma-separated seeds or ranges (e.g. 0-14)")
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return parser


def _report(code: int, kind: str, message: str, **extra) -> int:
    body = {"status": "error", "exit_code": code, "kind": kind, "message": message}
    body.update(extra)
    print(json.dumps(_jsonable(body), sort_keys=True), file=sys.stderr)
    return code


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def dispatch(args) -> int:
    try:
        cfg = _checked(apply_overrides(resolve_scenario(args.scenario), args))
    except ScenarioError as exc:
        return _report(EXIT_INVALID, "invalid_scenario", str(exc), violations=exc.report)
    except (ParameterError, ValueError) as exc:
        return _report(EXIT_INVALID, "invalid_scenario", str(exc))
    w = Writer(Path(args.out), cfg)
    try:
        COMMANDS[args.command](cfg, args, w)
    except InfeasibleError as exc:
        return _report(EXIT_NUMERIC, "infeasible", str(exc), gamma_c=exc.gamma_c)
    except EquilibriumError as exc:
        return _report(EXIT_NUMERIC, "no_convergence", str(exc), residual=exc.residual)
    except (IntegrationError, BracketError, ModelError) as exc:
        return _report(EXIT_NUMERIC, "numerical", str(exc))
    except ParameterError as exc:
        return _report(EXIT_INVALID, "invalid_argument", str(exc))
    for p in w.paths:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
