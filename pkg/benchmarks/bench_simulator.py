"""Time the compiled and pure-Python simulator kernels on the same scenarios.

    python3 benchmarks/bench_simulator.py [--horizon 200] [--repeat 3]

Both backends consume the same random stream, so the script also checks that
their records agree before reporting the speed-up.
"""
import argparse
import time

import numpy as np

from wsls_commons.model import table1_scenario
from wsls_commons.simulator import BACKENDS, run


def _cases(horizon):
    return {
        "fixed T=1, rho=1": table1_scenario(1.0, horizon=horizon, seed=1),
        "fixed T=5, rho=1.25": table1_scenario(1.25, tolerance=5, horizon=horizon, seed=2),
        "adaptive, rho=0.75": table1_scenario(0.75, adaptive=True, horizon=horizon, seed=3),
    }


def _best(cfg, backend, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        rec = run(cfg, backend=backend)
        times.append(time.perf_counter() - t0)
    return min(times), rec


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=200.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if "cython" not in BACKENDS:
        print("compiled kernel unavailable; only the Python backend can run")
    print(f"{'scenario':<22} {'requests':>10} " + " ".join(f"{b + ' [s]':>12}" for b in BACKENDS)
          + (f" {'speed-up':>9}" if len(BACKENDS) > 1 else ""))
    for name, cfg in _cases(args.horizon).items():
        secs, recs = {}, {}
        for b in BACKENDS:
            secs[b], recs[b] = _best(cfg, b, args.repeat)
        n_req = int(recs[BACKENDS[0]].resolved.sum())
        line = f"{name:<22} {n_req:>10d} " + " ".join(f"{secs[b]:>12.3f}" for b in BACKENDS)
        if len(BACKENDS) > 1:
            same = np.array_equal(recs["cython"].occupancy, recs["python"].occupancy)
            line += f" {secs['python'] / secs['cython']:>8.1f}x" + ("" if same else "  MISMATCH")
        print(line)


if __name__ == "__main__":
    main()
