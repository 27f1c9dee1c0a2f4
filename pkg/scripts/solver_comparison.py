"""QAOA-BCD against SCA, greedy and (when small enough) the brute-force oracle.

    python scripts/solver_comparison.py --seeds 10 --devices 3 --channels 2
"""
import argparse
import csv
import time
from pathlib import Path

import numpy as np

from qflnoma.baselines import MAX_ALLOCATION_CASES, brute_force_allocation, default_power_levels, greedy_allocation
from qflnoma.orchestrator import BcdOptions, LatencyModel, bcd_optimize, latency
from qflnoma.qubo import power_step
from qflnoma.scenario import ScenarioConfig, generate_scenario, sum_rate

SOLVERS = ("qaoa", "exact", "sca", "greedy", "oracle")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--devices", type=int, default=3)
    ap.add_argument("--channels", type=int, default=2)
    ap.add_argument("--out", default="runs/solver_comparison.csv")
    args = ap.parse_args()

    rows = []
    for seed in range(args.seeds):
        scn, state = generate_scenario(ScenarioConfig(n_devices=args.devices, n_channels=args.channels, seed=seed))
        bw = scn.bandwidth_hz
        for solver in SOLVERS:
            t0 = time.perf_counter()
            if solver in ("qaoa", "exact", "sca"):
                alloc = bcd_optimize(scn, state, BcdOptions(solver=solver, seed=seed)).final
            elif solver == "greedy":
                alloc = greedy_allocation(scn, state)
            else:
                levels = np.union1d(default_power_levels(scn.p_max_w), power_step(scn.p_max_w, 3) * np.arange(8))
                if (scn.n_channels + 1) ** scn.n_devices * len(levels) ** scn.n_devices > MAX_ALLOCATION_CASES:
                    continue
                alloc = brute_force_allocation(scn, state, levels).best_alloc
            dt = time.perf_counter() - t0
            rows.append([seed, solver, sum_rate(alloc, state, bw), latency(alloc, state, bw, LatencyModel()), dt])

    by = {}
    for seed, solver, rate, lat, dt in rows:
        by.setdefault(solver, []).append((rate, dt))
    for solver, vals in by.items():
        r = np.array(vals)
        print(f"{solver:7s} mean sum-rate {r[:, 0].mean() / 1e6:8.3f} Mbps   mean runtime {r[:, 1].mean():.3f}s")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write("# schema=solver-comparison/v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "solver", "sum_rate_bps", "latency_s", "runtime_s"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
