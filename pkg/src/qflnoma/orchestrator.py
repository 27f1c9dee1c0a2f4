"""Block coordinate descent over channel selection and power bits.

Every candidate block update is checked against the true sum-rate and kept
only if that rate does not drop, so traces are monotone whatever the
sub-solver returns.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import brute_force_qubo, greedy_allocation, sca_power_allocation
from .qaoa import MAX_QUBITS, QaoaConfig, ResourceError, solve_qubo
from .qubo import (
    PenaltyConfig,
    build_channel_qubo,
    build_power_qubo,
    decode_solution,
    one_hot_feasible,
)
from .scenario import AllocationState, ChannelState, NetworkScenario, device_rates, sum_rate
from .seeding import child_seed

SOLVERS = ("qaoa", "exact", "greedy-seeded", "sca")
MODES = ("joint", "channel", "power")
TRACE_SCHEMA = "bcd-trace/v1"


@dataclass(frozen=True)
class LatencyModel:
    """Upload payload per device; ``model_bits = bits_per_param * n_params``."""

    bits_per_param: int = 32
    n_params: int = 20
    aggregation: str = "max"

    def __post_init__(self):
        if self.model_bits <= 0:
            raise ValueError("model_bits must be positive")
        if self.aggregation not in ("max", "mean"):
            raise ValueError("aggregation must be 'max' or 'mean'")

    @property
    def model_bits(self) -> int:
        return self.bits_per_param * self.n_params


def latency(alloc: AllocationState, state: ChannelState, bandwidth_hz: float, lm: LatencyModel = LatencyModel()) -> float:
    """Upload time of the transmitting devices, aggregated by ``lm.aggregation``.

    Returns ``inf`` if a transmitting device has zero rate or nobody transmits.
    """
    alloc = alloc.normalized()
    active = alloc.channel_of >= 0
    if not active.any():
        return math.inf
    rates = device_rates(alloc, state, bandwidth_hz)[active]
    if np.any(rates <= 0):
        return math.inf
    times = lm.model_bits / rates
    return float(times.max() if lm.aggregation == "max" else times.mean())


@dataclass(frozen=True)
class BcdOptions:
    solver: str = "qaoa"
    mode: str = "joint"
    max_iters: int = 20
    tol: float = 1e-3
    patience: int = 3
    q_bits: int = 3
    block_size: int | None = 1  # devices per block; None = one block with everybody
    linearization: str = "pricing"
    order: str = "power-first"  # half-step order inside a joint iteration
    penalties: PenaltyConfig = PenaltyConfig()
    qaoa: QaoaConfig = QaoaConfig()
    latency: LatencyModel = LatencyModel()
    sca_iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.order not in ("power-first", "channel-first"):
            raise ValueError("order must be 'power-first' or 'channel-first'")
        if self.max_iters < 1 or self.patience < 1:
            raise ValueError("max_iters and patience must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    sum_rate: float
    latency: float
    channel_energies: list = field(default_factory=list)
    power_energies: list = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0


@dataclass
class BcdTrace:
    records: list
    final: AllocationState | None
    solver: str
    mode: str
    seed: int
    scenario_id: str
    converged: bool = False
    wall_clock_s: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def final_sum_rate(self) -> float:
        return self.records[-1].sum_rate

    @property
    def final_latency(self) -> float:
        return self.records[-1].latency

    def sum_rates(self) -> list:
        return [r.sum_rate for r in self.records]


def scenario_id(scn: NetworkScenario, state: ChannelState) -> str:
    return f"{scn.cfg.digest()}-b{state.block_index}"


def strongest_channel_init(scn: NetworkScenario, state: ChannelState) -> AllocationState:
    """Every device on its own best channel at full power."""
    return AllocationState(state.legit_gain.argmax(axis=1), np.full(scn.n_devices, scn.p_max_w))


def make_blocks(n_devices: int, block_size: int | None) -> list:
    if block_size is None or block_size >= n_devices:
        return [tuple(range(n_devices))]
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    return [tuple(range(s, min(s + block_size, n_devices))) for s in range(0, n_devices, block_size)]


def _solve(qubo, opts: BcdOptions, seed: int):
    """Returns (bitstring, energy) from the configured sub-solver."""
    if opts.solver == "exact":
        rep = brute_force_qubo(qubo)
        return rep.best_bits, rep.best_value
    if qubo.n_vars > MAX_QUBITS:
        raise ResourceError(f"block QUBO has {qubo.n_vars} variables; shrink block_size")
    res = solve_qubo(qubo, replace(opts.qaoa, seed=seed), feasible=one_hot_feasible(qubo))
    return res.best_bitstring, res.best_energy


def solve_block_decomposed(
    scn: NetworkScenario,
    state: ChannelState,
    current: AllocationState,
    blocks: Sequence[Sequence[int]],
    half: str,
    opts: BcdOptions = BcdOptions(),
    seed_key: tuple = (),
) -> tuple[AllocationState, list, int, int]:
    """One half-step: sweep ``blocks`` in order, re-solving each with the rest frozen.

    Returns the new allocation, the sub-problem energies, and the counts of
    accepted and rejected block updates.
    """
    bw = scn.bandwidth_hz
    energies, acc, rej = [], 0, 0
    value = sum_rate(current, state, bw)
    for b, block in enumerate(blocks):
        seed = child_seed(opts.seed, *seed_key, half, b)
        if half == "channel":
            # silent devices are scored as if at full power, otherwise they could never move
            trial = np.where(current.power_w > 0, current.power_w, scn.p_max_w)
            qubo = build_channel_qubo(
                state, trial, opts.penalties, bandwidth_hz=bw,
                current_channels=current.channel_of, devices=block, linearization=opts.linearization,
            )
        elif half == "power":
            qubo = build_power_qubo(
                state, current.channel_of, opts.q_bits, opts.penalties, p_max_w=scn.p_max_w,
                bandwidth_hz=bw, current_powers=current.power_w, devices=block, linearization=opts.linearization,
            )
        else:
            raise ValueError(f"unknown half-step {half!r}")
        bits, energy = _solve(qubo, opts, seed)
        energies.append(energy)
        frag = decode_solution(qubo, bits)
        if not frag.feasible:
            rej += 1
            continue
        ch, pw = current.channel_of.copy(), current.power_w.copy()
        idx = list(frag.devices)
        if half == "channel":
            ch[idx] = frag.channel_of
        else:
            pw[idx] = frag.power_w
        cand = AllocationState(ch, pw)
        cand_value = sum_rate(cand, state, bw)
        if cand_value >= value:
            current, value = cand, cand_value
            acc += 1
        else:
            rej += 1
    return current, energies, acc, rej


def _record(i, alloc, state, scn, opts, **kw) -> IterationRecord:
    return IterationRecord(
        i, sum_rate(alloc, state, scn.bandwidth_hz), latency(alloc, state, scn.bandwidth_hz, opts.latency), **kw
    )


def _run_sca(scn, state, opts, t0) -> BcdTrace:
    greedy = greedy_allocation(scn, state)
    current = greedy
    records = [_record(0, current, state, scn, opts)]
    res = sca_power_allocation(scn, state, greedy.channel_of, iters=opts.sca_iters)
    for r, p in enumerate(res.power_trace, start=1):
        cand = AllocationState(greedy.channel_of, p)
        ok = sum_rate(cand, state, scn.bandwidth_hz) >= records[-1].sum_rate
        if ok:
            current = cand
        records.append(_record(r, current, state, scn, opts, accepted=int(ok), rejected=int(not ok)))
    # devices parked at the SCA power floor are switched off if that costs nothing
    floor = (current.channel_of >= 0) & (current.power_w <= scn.p_max_w * 1e-6 * (1 + 1e-9))
    if floor.any():
        cand = AllocationState(np.where(floor, -1, current.channel_of), np.where(floor, 0.0, current.power_w))
        if sum_rate(cand, state, scn.bandwidth_hz) >= records[-1].sum_rate:
            current = cand
            records[-1] = _record(records[-1].iteration, current, state, scn, opts,
                                  accepted=records[-1].accepted, rejected=records[-1].rejected)
    return BcdTrace(records, current.normalized(), "sca", "power", opts.seed, scenario_id(scn, state),
                    converged=res.rounds < opts.sca_iters, wall_clock_s=time.perf_counter() - t0)


def bcd_optimize(
    scn: NetworkScenario,
    state: ChannelState,
    opts: BcdOptions = BcdOptions(),
    init: AllocationState | None = None,
) -> BcdTrace:
    """Alternate power and channel half-steps until the sum-rate settles.

    Stops after ``patience`` consecutive iterations with relative change
    below ``tol``, or after ``max_iters``.
    """
    t0 = time.perf_counter()
    if opts.solver == "sca":
        return _run_sca(scn, state, opts, t0)
    if init is None:
        init = greedy_allocation(scn, state) if opts.solver == "greedy-seeded" else strongest_channel_init(scn, state)
    current = init
    blocks = make_blocks(scn.n_devices, opts.block_size)
    records = [_record(0, current, state, scn, opts)]
    streak, converged = 0, False
    for it in range(1, opts.max_iters + 1):
        rec_kw = {"channel_energies": [], "power_energies": [], "accepted": 0, "rejected": 0}
        halves = {"joint": ["power", "channel"], "channel": ["channel"], "power": ["power"]}[opts.mode]
        if opts.order == "channel-first":
            halves = halves[::-1]
        for half in halves:
            current, e, a, r = solve_block_decomposed(scn, state, current, blocks, half, opts, (it,))
            rec_kw[f"{half}_energies"] = e
            rec_kw["accepted"] += a
            rec_kw["rejected"] += r
        rec = _record(it, current, state, scn, opts, **rec_kw)
        prev = records[-1].sum_rate
        records.append(rec)
        change = (rec.sum_rate - prev) / prev if prev > 0 else (math.inf if rec.sum_rate > 0 else 0.0)
        streak = streak + 1 if change < opts.tol else 0
        if streak >= opts.patience:
            converged = True
            break
    return BcdTrace(records, current.normalized(), opts.solver, opts.mode, opts.seed, scenario_id(scn, state),
                    converged=converged, wall_clock_s=time.perf_counter() - t0)


# -- comparison ----------------------------------------------------------------

def improvement(a: float, b: float) -> float:
    """Relative gain of ``a`` over ``b``."""
    return (a - b) / b


@dataclass
class ComparisonReport:
    labels: list
    final_sum_rate: list
    final_latency: list
    iterations: list
    wall_clock_s: list
    sum_rate_gain: np.ndarray  # [i, j] = improvement(S_i, S_j)
    latency_reduction: np.ndarray  # [i, j] = (L_j - L_i) / L_j


def compare_runs(traces: Sequence[BcdTrace]) -> ComparisonReport:
    if len(traces) < 2:
        raise ValueError("need at least two traces")
    ref = (traces[0].scenario_id, traces[0].seed)
    for t in traces[1:]:
        if (t.scenario_id, t.seed) != ref:
            raise ValueError(f"traces come from different scenarios/seeds: {ref} vs {(t.scenario_id, t.seed)}")
    s = np.array([t.final_sum_rate for t in traces])
    lat = np.array([t.final_latency for t in traces])
    k = len(traces)
    gain = np.zeros((k, k))
    red = np.zeros((k, k))
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(k):
            for j in range(k):
                gain[i, j] = improvement(s[i], s[j]) if s[j] > 0 else math.nan
                red[i, j] = (lat[j] - lat[i]) / lat[j] if np.isfinite(lat[j]) and lat[j] > 0 else math.nan
    return ComparisonReport(
        [f"{t.solver}/{t.mode}" for t in traces], s.tolist(), lat.tolist(),
        [t.iterations for t in traces], [t.wall_clock_s for t in traces], gain, red,
    )


# -- CSV I/O -------------------------------------------------------------------

def write_trace_csv(trace: BcdTrace, path: str | Path) -> Path:
    """Columns ``iter,sum_rate_bps,latency_s,solver,seed``; run metadata in the first line."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={TRACE_SCHEMA} scenario={trace.scenario_id} mode={trace.mode} "
                 f"converged={int(trace.converged)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "sum_rate_bps", "latency_s", "solver", "seed"])
        for r in trace.records:
            w.writerow([r.iteration, repr(r.sum_rate), repr(r.latency), trace.solver, trace.seed])
    return path


def read_trace_csv(path: str | Path) -> BcdTrace:
    path = Path(path)
    with open(path, newline="") as fh:
        head = fh.readline()
        if not head.startswith("# schema="):
            raise ValueError(f"{path}: missing schema line")
        meta = dict(tok.split("=", 1) for tok in head[2:].split())
        if meta["schema"] != TRACE_SCHEMA:
            raise ValueError(f"{path}: unsupported schema {meta['schema']}")
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no trace rows")
    records = [IterationRecord(int(r["iter"]), float(r["sum_rate_bps"]), float(r["latency_s"])) for r in rows]
    return BcdTrace(records, None, rows[0]["solver"], meta.get("mode", "joint"), int(rows[0]["seed"]),
                    meta["scenario"], converged=meta.get("converged") == "1")


def write_allocation_csv(alloc: AllocationState, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("# schema=allocation/v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["device", "channel", "power_w"])
        for n, (c, p) in enumerate(zip(alloc.channel_of, alloc.power_w)):
            w.writerow([n, int(c), repr(float(p))])
    return path
