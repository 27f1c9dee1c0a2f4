"""Command-line harness: ``qflnoma {scenario,optimize,baseline,qfl,report}``.

Exit codes: 0 success, 2 usage or config error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .baselines import brute_force_allocation, greedy_allocation
from .config import ExperimentConfig, PRESETS, load_config, parse_shots
from .orchestrator import (
    BcdTrace,
    IterationRecord,
    MODES,
    bcd_optimize,
    compare_runs,
    latency,
    read_trace_csv,
    scenario_id,
    write_allocation_csv,
    write_trace_csv,
)
from .qfl import INF, read_run_csv, run_qfl
from .scenario import ConfigError, generate_scenario, read_snapshot, state_at_block, sum_rate, write_snapshot

BCD_SOLVERS = ("qaoa", "exact", "greedy-seeded")
BASELINES = ("sca", "greedy", "brute-force")
REPORT_SCHEMA = "report/v1"


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int | None
    output_dir: Path
    preset: str | None = None


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qflnoma", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_default="runs"):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--seed", type=int, help="overrides every seed in the config")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--preset", choices=sorted(PRESETS))

    p = sub.add_parser("scenario", help="write a replayable scenario snapshot")
    common(p)
    for name, choices, default in (("optimize", BCD_SOLVERS, "qaoa"), ("baseline", BASELINES, "sca")):
        p = sub.add_parser(name, help="run BCD" if name == "optimize" else "run a classical baseline")
        common(p)
        p.add_argument("--solver", choices=choices, default=default)
        p.add_argument("--snapshot", help="scenario snapshot to load instead of generating one")
        if name == "optimize":
            p.add_argument("--mode", choices=MODES)
            p.add_argument("--max-iters", type=int)
    p = sub.add_parser("qfl", help="shot-count sweep of federated training")
    common(p)
    p.add_argument("--shots", help="comma list, e.g. 1,40,100 (inf = exact)")
    p.add_argument("--rounds", type=int)
    p = sub.add_parser("report", help="summarise trace and QFL CSVs")
    common(p)
    p.add_argument("--in", dest="in_dir", help="directory to scan (default: --out)")
    return ap


def _manifest(args) -> RunManifest:
    return RunManifest(args.command, args.config, args.seed, Path(args.out), args.preset)


def _experiment(man: RunManifest) -> ExperimentConfig:
    exp = load_config(man.config_path, man.preset)
    if man.seed is not None:
        exp = exp.with_seed(man.seed)
    return exp


def _scenario(exp: ExperimentConfig, snapshot: str | None):
    if snapshot is None:
        scn, _ = generate_scenario(exp.scenario)
    else:
        if not Path(snapshot).is_file():
            raise UsageError(f"snapshot not found: {snapshot}")
        scn, _ = read_snapshot(snapshot)
    return scn, state_at_block(scn, exp.block)


def _write_runtime(trace_path: Path, trace: BcdTrace):
    side = trace_path.with_suffix(".runtime.json")
    side.write_text(json.dumps({"wall_clock_s": trace.wall_clock_s, "iterations": trace.iterations}) + "\n")


def _summary(trace: BcdTrace, path: Path):
    print(
        f"solver={trace.solver} mode={trace.mode} final_sum_rate_bps={trace.final_sum_rate:.6g} "
        f"iterations={trace.iterations} latency_s={trace.final_latency:.6g} trace={path}"
    )


def cmd_scenario(man: RunManifest, args) -> int:
    exp = _experiment(man)
    scn, _ = generate_scenario(exp.scenario)
    man.output_dir.mkdir(parents=True, exist_ok=True)
    path = write_snapshot(scn, man.output_dir / f"scenario-s{exp.scenario.seed}-{exp.scenario.digest()}.csv")
    print(f"n_devices={scn.n_devices} n_channels={scn.n_channels} epsilon={exp.scenario.epsilon} snapshot={path}")
    return 0


def cmd_optimize(man: RunManifest, args) -> int:
    exp = _experiment(man)
    bcd = replace(exp.bcd, solver=args.solver)
    if args.mode:
        bcd = replace(bcd, mode=args.mode)
    if args.max_iters is not None:
        if args.max_iters < 1:
            raise UsageError("--max-iters must be >= 1")
        bcd = replace(bcd, max_iters=args.max_iters)
    exp = replace(exp, bcd=bcd)
    scn, state = _scenario(exp, args.snapshot)
    exp = replace(exp, scenario=scn.cfg)
    trace = bcd_optimize(scn, state, bcd)
    man.output_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{bcd.solver}-{bcd.mode}-s{bcd.seed}-{exp.digest(repr(bcd))}"
    path = write_trace_csv(trace, man.output_dir / f"trace-{stem}.csv")
    write_allocation_csv(trace.final, man.output_dir / f"alloc-{stem}.csv")
    _write_runtime(path, trace)
    _summary(trace, path)
    return 0


def _single_row_trace(label, mode, alloc, scn, state, exp, seed, t0) -> BcdTrace:
    rec = IterationRecord(
        0, sum_rate(alloc, state, scn.bandwidth_hz), latency(alloc, state, scn.bandwidth_hz, exp.bcd.latency)
    )
    return BcdTrace([rec], alloc.normalized(), label, mode, seed, scenario_id(scn, state), converged=True,
                    wall_clock_s=time.perf_counter() - t0)


def cmd_baseline(man: RunManifest, args) -> int:
    exp = _experiment(man)
    scn, state = _scenario(exp, args.snapshot)
    exp = replace(exp, scenario=scn.cfg)
    seed = exp.bcd.seed
    t0 = time.perf_counter()
    if args.solver == "sca":
        trace = bcd_optimize(scn, state, replace(exp.bcd, solver="sca"))
    elif args.solver == "greedy":
        trace = _single_row_trace("greedy", "channel", greedy_allocation(scn, state), scn, state, exp, seed, t0)
    else:
        rep = brute_force_allocation(scn, state)
        trace = _single_row_trace("brute-force", "joint", rep.best_alloc, scn, state, exp, seed, t0)
    man.output_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{trace.solver}-{trace.mode}-s{seed}-{exp.digest(repr(exp.bcd))}"
    path = write_trace_csv(trace, man.output_dir / f"trace-{stem}.csv")
    write_allocation_csv(trace.final, man.output_dir / f"alloc-{stem}.csv")
    _write_runtime(path, trace)
    _summary(trace, path)
    return 0


def cmd_qfl(man: RunManifest, args) -> int:
    exp = _experiment(man)
    shots = parse_shots(args.shots) if args.shots else exp.qfl_shots
    cfg = exp.qfl
    if args.rounds is not None:
        if args.rounds < 1:
            raise UsageError("--rounds must be >= 1")
        cfg = replace(cfg, rounds=args.rounds)
    digest = exp.digest(repr(replace(cfg, shots=1, data_split="iid")))
    man.output_dir.mkdir(parents=True, exist_ok=True)
    for h in shots:
        for split in exp.qfl_splits:
            rec = run_qfl(replace(cfg, shots=h, data_split=split))
            tag = "inf" if h == INF else str(int(h))
            path = rec.write_csv(man.output_dir / f"qfl-H{tag}-{split}-s{cfg.seed}-{digest}.csv")
            print(f"H={tag} split={split} final_loss={rec.global_loss[-1]:.6g} "
                  f"final_accuracy={rec.global_accuracy[-1]:.4g} csv={path}")
    return 0


def _fmt(v, pct=False):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{100 * v:.2f}" if pct else f"{v:.6g}"


def build_report(in_dir: Path) -> tuple[list, list, list]:
    """Rows for the trace table, the informational runtimes, and the QFL table."""
    traces = []
    for p in sorted(in_dir.glob("trace-*.csv")):
        t = read_trace_csv(p)
        side = p.with_suffix(".runtime.json")
        t.wall_clock_s = json.loads(side.read_text())["wall_clock_s"] if side.is_file() else math.nan
        traces.append(t)
    qfl_runs = [read_run_csv(p) for p in sorted(in_dir.glob("qfl-*.csv"))]
    if not traces and not qfl_runs:
        raise FileNotFoundError(f"no trace-*.csv or qfl-*.csv files in {in_dir}")

    groups = {}
    for t in traces:
        groups.setdefault((t.scenario_id, t.seed), []).append(t)
    rows, runtimes = [], []
    for (sid, seed), ts in sorted(groups.items()):
        ts = sorted(ts, key=lambda t: (t.solver, t.mode))
        ref = next((i for i, t in enumerate(ts) if t.solver == "sca"), 0)
        cmp = compare_runs(ts) if len(ts) > 1 else None
        for i, t in enumerate(ts):
            gain = cmp.sum_rate_gain[i, ref] if cmp else None
            red = cmp.latency_reduction[i, ref] if cmp else None
            rows.append([sid, seed, t.solver, t.mode, _fmt(t.final_sum_rate), _fmt(t.final_latency),
                         t.iterations, f"{ts[ref].solver}/{ts[ref].mode}" if cmp else "",
                         _fmt(gain, pct=True), _fmt(red, pct=True)])
            runtimes.append(_fmt(t.wall_clock_s))
    qrows = [[r.split, "inf" if r.shots == INF else int(r.shots), r.n_devices, r.seed, len(r.global_loss),
              _fmt(r.global_loss[-1]), _fmt(r.global_accuracy[-1])]
             for r in sorted(qfl_runs, key=lambda r: (r.split, r.shots, r.seed))]
    return rows, runtimes, qrows


TRACE_COLS = ["scenario", "seed", "solver", "mode", "final_sum_rate_bps", "final_latency_s", "iterations",
              "reference", "sum_rate_gain_pct", "latency_reduction_pct"]
QFL_COLS = ["split", "H", "N", "seed", "rounds", "final_loss", "final_accuracy"]


def cmd_report(man: RunManifest, args) -> int:
    if man.config_path is not None:
        load_config(man.config_path, man.preset)  # validate only
    in_dir = Path(args.in_dir) if args.in_dir else man.output_dir
    if not in_dir.is_dir():
        raise UsageError(f"input directory not found: {in_dir}")
    rows, runtimes, qrows = build_report(in_dir)
    man.output_dir.mkdir(parents=True, exist_ok=True)
    with open(man.output_dir / "report.csv", "w", newline="") as fh:
        fh.write(f"# schema={REPORT_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["table"] + TRACE_COLS)
        w.writerows(["bcd"] + r for r in rows)
        if qrows:
            w.writerow(["table"] + QFL_COLS)
            w.writerows(["qfl"] + r for r in qrows)
    lines = []
    if rows:
        cols = TRACE_COLS + ["runtime_s (informational)"]
        lines += ["## Resource allocation", "", "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        lines += ["| " + " | ".join(str(v) for v in r + [rt]) + " |" for r, rt in zip(rows, runtimes)]
        lines += ["", "Runtimes are wall-clock measurements for orientation only; they are not reproducible.", ""]
    if qrows:
        lines += ["## Federated training", "", "| " + " | ".join(QFL_COLS) + " |", "|" + "---|" * len(QFL_COLS)]
        lines += ["| " + " | ".join(str(v) for v in r) + " |" for r in qrows]
        lines.append("")
    (man.output_dir / "report.md").write_text("\n".join(lines))
    print(f"report rows={len(rows)} qfl_rows={len(qrows)} out={man.output_dir / 'report.md'}")
    return 0


COMMANDS = {
    "scenario": cmd_scenario,
    "optimize": cmd_optimize,
    "baseline": cmd_baseline,
    "qfl": cmd_qfl,
    "report": cmd_report,
}


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    man = _manifest(args)
    try:
        return COMMANDS[args.command](man, args)
    except (ConfigError, UsageError) as exc:
        print(f"qflnoma: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"qflnoma: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
