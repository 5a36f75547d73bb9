"""Series post-processing and CSV/JSON export."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .queueing import ParameterError


def smooth(series: Sequence[float], alpha: float = 0.05) -> np.ndarray:
    """Exponential low-pass filter y_t = (1-alpha) y_{t-1} + alpha x_t, y_0 = x_0.

    NaN inputs (windows with no resolved requests) hold the previous output.
    """
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ParameterError("cannot smooth an empty series")
    y = np.empty_like(x)
    prev = x[0]
    y[0] = prev
    keep = 1.0 - alpha
    for i in range(1, len(x)):
        v = x[i]
        if v == v:
            prev = v if prev != prev else keep * prev + alpha * v
        y[i] = prev
    return y


def tail_mean(series: Sequence[float], fraction: float) -> float:
    """Mean of the trailing ceil(fraction * len) samples."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ParameterError("tail_mean of an empty series")
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    count = math.ceil(fraction * len(x) - 1e-9)
    if count < 1:
        raise ParameterError(f"series of length {len(x)} is too short for fraction {fraction}")
    return float(x[-count:].mean())


def equalization_spread(rates: Sequence[float]) -> float:
    """(max - min) / mean of per-good failure rates; 0 when all rates are 0."""
    r = np.asarray(rates, dtype=float)
    if r.size < 2:
        raise ParameterError("need at least two goods")
    m = r.mean()
    if m == 0:
        return 0.0
    return float((r.max() - r.min()) / m)


def artifact_name(scenario: str, seed: int, kind: str, ext: str = "csv") -> str:
    return f"{scenario}_{seed}_{kind}.{ext}"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class SeriesBundle:
    columns: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = {k: np.asarray(v) for k, v in self.columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ParameterError(f"columns have unequal lengths {sorted(lengths)}")
        if "time" in self.columns and len(self.columns["time"]) > 1:
            if np.any(np.diff(self.columns["time"]) <= 0):
                raise ParameterError("time column must be strictly increasing")

    @property
    def names(self) -> list[str]:
        names = list(self.columns)
        if "time" in names:
            names.remove("time")
            names.insert(0, "time")
        return names

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def write_csv(self, path: str | Path) -> None:
        names = self.names
        cols = [self.columns[n] for n in names]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in zip(*cols):
                w.writerow([_fmt(v) for v in row])

    @classmethod
    def read_csv(cls, path: str | Path) -> "SeriesBundle":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        cols = {}
        for j, name in enumerate(header):
            raw = [r[j] for r in body]
            if all(_is_int(v) for v in raw):
                cols[name] = np.array([int(v) for v in raw], dtype=np.int64)
            else:
                cols[name] = np.array([float(v) for v in raw])
        return cls(cols)

    def to_json(self) -> dict:
        def enc(a):
            if a.dtype.kind in "iu":
                return [int(v) for v in a]
            return [None if not math.isfinite(v) else float(v) for v in a]

        return {
            "provenance": self.provenance,
            "columns": {n: enc(self.columns[n]) for n in self.names},
        }

    def write_json(self, path: str | Path) -> None:
        write_json(self.to_json(), path)

    @classmethod
    def read_json(cls, path: str | Path) -> "SeriesBundle":
        with open(path) as fh:
            data = json.load(fh)
        cols = {}
        for k, v in data["columns"].items():
            if all(isinstance(x, int) for x in v):
                cols[k] = np.array(v, dtype=np.int64)
            else:
                cols[k] = np.array([np.nan if x is None else x for x in v], dtype=float)
        return cls(cols, data.get("provenance", {}))


def _is_int(s: str) -> bool:
    return s.lstrip("-").isdigit()


def write_json(obj, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def record_bundle(record, alpha: float = 0.05, module: str = "simulator") -> SeriesBundle:
    """Flatten a simulator RunRecord into named columns."""
    ng = record.occupancy.shape[1]
    cols: dict[str, np.ndarray] = {"time": record.times}
    p = record.p_fail
    for i in range(ng):
        cols[f"n_{i + 1}"] = record.occupancy[:, i]
    for i in range(ng):
        cols[f"pfail_{i + 1}"] = p[:, i]
    cols["pfail_system"] = record.system_p_fail
    for i in range(ng):
        cols[f"pfail_smooth_{i + 1}"] = smooth(p[:, i], alpha)
    cols["pfail_smooth_system"] = smooth(record.system_p_fail, alpha)
    for i in range(ng):
        cols[f"requests_{i + 1}"] = record.resolved[:, i]
        cols[f"failures_{i + 1}"] = record.failures[:, i]
    if not np.all(np.isnan(record.mean_tolerance)):
        for i in range(ng):
            cols[f"mean_tol_{i + 1}"] = record.mean_tolerance[:, i]
        cols["agent_tol_sum_min"] = record.agent_tol_min
        cols["agent_tol_sum_max"] = record.agent_tol_max
    prov = {"config_digest": record.digest, "seed": record.seed, "module": module}
    return SeriesBundle(cols, prov)


def trajectory_bundle(traj, digest: str = "", seed: int | None = None) -> SeriesBundle:
    cols: dict[str, np.ndarray] = {"time": traj.times, "rho": traj.rhos}
    totals = traj.totals
    for i in range(totals.shape[1]):
        cols[f"n_{i + 1}"] = totals[:, i]
    ntypes = traj.states.shape[2]
    if ntypes > 1:
        for i in range(totals.shape[1]):
            for k in range(ntypes):
                cols[f"n_{i + 1}_{k + 1}"] = traj.states[:, i, k]
    return SeriesBundle(cols, {"config_digest": digest, "seed": seed, "module": "dynamics"})
