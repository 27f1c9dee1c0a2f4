"""Exit criteria, each run at its stated tolerance and time limit.

Every test appends one ``AC <n>: PASS|FAIL ...`` line that the terminal
summary prints, so ``pytest tests/test_acceptance.py`` doubles as a report.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from qflnoma.baselines import brute_force_allocation, brute_force_qubo, default_power_levels, greedy_allocation
from qflnoma.cli import main
from qflnoma.orchestrator import MODES, BcdOptions, bcd_optimize
from qflnoma.qaoa import QaoaConfig, solve_qubo
from qflnoma.qfl import (
    INF,
    FedConfig,
    ShotNoiseBoundInputs,
    exact_expectation,
    lemma4_bound,
    parameter_shift_gradient,
    random_circuit,
    run_qfl,
)
from qflnoma.qubo import (
    QuboProblem,
    build_channel_qubo,
    index_to_bits,
    ising_energies,
    ising_energy,
    one_hot_feasible,
    power_step,
    qubo_energies,
    qubo_energy,
    qubo_to_ising,
    spins_from_bits,
)
from qflnoma.scenario import ScenarioConfig, generate_scenario, jakes_trajectory, sum_rate
from qflnoma.seeding import stream

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance


def _report(n, ok, detail, elapsed, limit):
    within = elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    ACCEPTANCE_LINES.append(f"AC {n}: {status}  {detail}  [{elapsed:.1f}s / limit {limit:g}s]")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail
    assert within, f"took {elapsed:.1f}s, limit {limit}s"


def test_ac1_ising_equivalence():
    t0 = time.perf_counter()
    rng = stream(0, "ac1")
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 13))
        q = QuboProblem.from_matrix(np.triu(rng.normal(size=(n, n))), float(rng.normal()))
        h = qubo_to_ising(q)
        e_q, e_i = qubo_energies(q), ising_energies(h)
        worst = max(worst, float(np.max(np.abs(e_q - e_i) / np.maximum(np.abs(e_q), 1e-12))))
        # scalar path on a few bitstrings, index order shared with the vectorized one
        for k in rng.integers(0, 1 << n, size=4):
            x = index_to_bits(int(k), n)
            ok_scalar = abs(qubo_energy(q, x) - ising_energy(h, spins_from_bits(x))) <= 1e-9 * max(abs(e_q[k]), 1)
            worst = max(worst, 0.0 if ok_scalar else math.inf)
    _report(1, worst <= 1e-9, f"max relative error {worst:.2e} over 200 QUBOs (tol 1e-9)",
            time.perf_counter() - t0, 10)


def test_ac2_qaoa_optimality_gap():
    t0 = time.perf_counter()
    hits = 0
    for seed in range(20):
        scn, s = generate_scenario(ScenarioConfig(n_devices=3, n_channels=2, seed=seed))
        q = build_channel_qubo(s, np.full(3, scn.p_max_w))
        opt = brute_force_qubo(q).best_value
        res = solve_qubo(q, QaoaConfig(layers=2, max_iters=150, tol=0.0, seed=seed), feasible=one_hot_feasible(q))
        hits += abs(res.best_energy - opt) <= 0.05 * abs(opt)
    _report(2, hits >= 18, f"{hits}/20 instances within 5% of optimum (need 18)", time.perf_counter() - t0, 120)


def test_ac3_bcd_monotone_and_feasible():
    t0 = time.perf_counter()
    good = 0
    for seed in range(50):
        n, c = 1 + seed % 10, 2 + seed % 3
        scn, s = generate_scenario(ScenarioConfig(n_devices=n, n_channels=c, seed=seed))
        tr = bcd_optimize(scn, s, BcdOptions(solver="qaoa", seed=seed))
        good += bool(np.all(np.diff(tr.sum_rates()) >= 0) and tr.final.is_feasible(c, scn.p_max_w))
    _report(3, good == 50, f"{good}/50 runs monotone and feasible (need 50)", time.perf_counter() - t0, 120)


def test_ac4_joint_beats_single_block():
    t0 = time.perf_counter()
    wins = 0
    for seed in range(20):
        scn, s = generate_scenario(ScenarioConfig(n_devices=6, n_channels=3, seed=seed))
        r = {m: bcd_optimize(scn, s, BcdOptions(solver="qaoa", mode=m, seed=seed)).final_sum_rate for m in MODES}
        wins += r["joint"] >= r["channel"] and r["joint"] >= r["power"]
    _report(4, wins >= 17, f"joint >= channel-only and power-only in {wins}/20 (need 17)",
            time.perf_counter() - t0, 300)


def test_ac5_qaoa_vs_greedy_and_oracle():
    t0 = time.perf_counter()
    wins = dom = 0
    for seed in range(20):
        scn, s = generate_scenario(ScenarioConfig(n_devices=3, n_channels=2, seed=seed))
        opts = BcdOptions(solver="qaoa", seed=seed)
        q = bcd_optimize(scn, s, opts).final_sum_rate
        g = sum_rate(greedy_allocation(scn, s), s, scn.bandwidth_hz)
        # oracle grid covers both the quantized BCD levels and the greedy levels
        levels = np.union1d(default_power_levels(scn.p_max_w), power_step(scn.p_max_w, opts.q_bits) * np.arange(8))
        bf = brute_force_allocation(scn, s, levels).best_value
        wins += q >= g
        dom += bf >= q * (1 - 1e-12) and bf >= g * (1 - 1e-12)
    _report(5, wins >= 16 and dom == 20, f"QAOA >= greedy in {wins}/20 (need 16); oracle dominates {dom}/20",
            time.perf_counter() - t0, 300)


def test_ac6_jakes_statistics():
    t0 = time.perf_counter()
    g = jakes_trajectory(0.6, 100_000, stream(6, "ac6"))[:, 0]
    power = np.mean(np.abs(g) ** 2)
    corr = np.mean(g[1:] * np.conj(g[:-1])).real / power
    ok = abs(corr - 0.6) <= 0.02 and abs(power - 1.0) <= 0.05
    _report(6, ok, f"lag-1 correlation {corr:.4f}, stationary variance {power:.4f}", time.perf_counter() - t0, 5)


def _fd(c, theta, h=1e-5):
    out = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        out[k] = (exact_expectation(c, theta + e) - exact_expectation(c, theta - e)) / (2 * h)
    return out


def test_ac7_parameter_shift():
    t0 = time.perf_counter()
    rng = stream(7, "ac7")
    good, worst = 0, 0.0
    for _ in range(30):
        q, p = int(rng.integers(1, 5)), int(rng.integers(1, 13))
        c = random_circuit(q, p, rng)
        theta = rng.uniform(-math.pi, math.pi, p)
        err = float(np.max(np.abs(parameter_shift_gradient(c, theta, INF) - _fd(c, theta))))
        worst = max(worst, err)
        good += err <= 1e-4
    _report(7, good == 30, f"{good}/30 circuits within 1e-4 (worst {worst:.1e})", time.perf_counter() - t0, 30)


def test_ac8_shot_variance_bound():
    t0 = time.perf_counter()
    rng = stream(8, "ac8")
    held, worst = 0, 0.0
    n_circuits = 5
    for _ in range(n_circuits):
        c = random_circuit(2, 4, rng)
        theta = rng.uniform(-math.pi, math.pi, c.n_params)
        draws = np.array([parameter_shift_gradient(c, theta, 50, rng) for _ in range(10_000)])
        bound = lemma4_bound(ShotNoiseBoundInputs(dims=c.n_params, shots=50))
        var = draws.var(axis=0, ddof=1)
        worst = max(worst, float(var.max() / bound))
        held += bool(np.all(var <= bound))
    _report(8, held == n_circuits, f"bound holds on {held}/{n_circuits} circuits (max var/bound {worst:.3f})",
            time.perf_counter() - t0, 60)


def test_ac9_shots_improve_convergence():
    t0 = time.perf_counter()
    counts = {}
    for split in ("iid", "non_iid"):
        counts[split] = 0
        for seed in range(10):
            cfg = FedConfig(n_devices=5, rounds=30, n_qubits=4, data_split=split, seed=seed)
            hi = run_qfl(replace(cfg, shots=100)).global_loss[-1]
            lo = run_qfl(replace(cfg, shots=1)).global_loss[-1]
            counts[split] += hi <= lo
    ok = all(v >= 8 for v in counts.values())
    _report(9, ok, f"H=100 <= H=1 final loss: iid {counts['iid']}/10, non-iid {counts['non_iid']}/10 (need 8 each)",
            time.perf_counter() - t0, 600)


def test_ac10_rerun_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "run.ini"
    cfg.write_text("[scenario]\nn_devices = 3\nn_channels = 2\n[bcd]\nmax_iters = 4\n"
                   "[qaoa]\nmax_iters = 30\n[qfl]\nrounds = 3\nn_devices = 2\n")
    commands = (["scenario"], ["optimize"], ["optimize", "--mode", "channel"], ["baseline"],
                ["baseline", "--solver", "greedy"], ["baseline", "--solver", "brute-force"],
                ["qfl", "--shots", "1,40,inf"], ["report"])
    snapshots = []
    for run in ("first", "second"):
        out = tmp_path / run
        for cmd in commands:
            assert main(cmd + ["--config", str(cfg), "--seed", "10", "--out", str(out)]) == 0
        snapshots.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = snapshots[0] == snapshots[1]
    _report(10, same, f"{len(snapshots[0])} CSV files byte-identical across reruns: {same}",
            time.perf_counter() - t0, 60)
