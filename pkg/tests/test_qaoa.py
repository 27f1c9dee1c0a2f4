import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qflnoma.baselines import brute_force_qubo
from qflnoma.qaoa import (
    QaoaConfig,
    ResourceError,
    apply_cost_layer,
    apply_mixer_layer,
    expectation,
    expectation_gradient,
    init_uniform,
    optimize,
    qaoa_state,
    sample_bitstrings,
    solve_qubo,
    write_trace_csv,
)
from qflnoma.qaoa import _Circuit, _fd_grad
from qflnoma.qubo import IsingHamiltonian, PenaltyConfig, build_channel_qubo, ising_energies, one_hot_feasible, qubo_energy
from qflnoma.scenario import ScenarioConfig, generate_scenario


def _random_h(rng, n):
    return IsingHamiltonian(rng.normal(size=n), np.triu(rng.normal(size=(n, n)), 1), float(rng.normal()))


def test_init_uniform():
    assert np.allclose(init_uniform(1), [1 / math.sqrt(2)] * 2)
    s = init_uniform(3)
    assert np.allclose(s, 1 / math.sqrt(8))
    assert np.linalg.norm(s) == pytest.approx(1.0, abs=1e-15)


def test_budget_guard():
    with pytest.raises(ResourceError):
        init_uniform(21)


def test_cost_layer_identities():
    rng = np.random.default_rng(0)
    h = _random_h(rng, 3)
    s = qaoa_state(h, [0.3], [0.2])
    assert np.allclose(apply_cost_layer(s, h, 0.0), s)
    zero = IsingHamiltonian(np.zeros(3), np.zeros((3, 3)), 0.0)
    assert np.allclose(apply_cost_layer(s, zero, 1.7), s)
    assert np.allclose(np.abs(apply_cost_layer(s, h, 0.9)) ** 2, np.abs(s) ** 2)


def test_mixer_identities():
    s = np.zeros(8, complex)
    s[0] = 1
    assert np.allclose(apply_mixer_layer(s, 0.0), s)
    flipped = apply_mixer_layer(s, math.pi / 2)
    expected = np.zeros(8, complex)
    expected[7] = (-1j) ** 3
    assert np.allclose(flipped, expected)


def test_norm_after_many_layers():
    rng = np.random.default_rng(1)
    h = _random_h(rng, 4)
    s = init_uniform(4)
    for _ in range(100):
        s = apply_mixer_layer(apply_cost_layer(s, h, rng.uniform(0, 2 * math.pi)), rng.uniform(0, 2 * math.pi))
    assert np.linalg.norm(s) == pytest.approx(1.0, abs=1e-9)


def test_expectation_cases():
    rng = np.random.default_rng(2)
    h = _random_h(rng, 3)
    e = ising_energies(h)
    assert expectation(init_uniform(3), h) == pytest.approx(e.mean())
    # uniform mean of an Ising Hamiltonian is its offset
    assert expectation(init_uniform(3), h) == pytest.approx(h.offset)
    basis = np.zeros(8, complex)
    basis[5] = 1
    assert expectation(basis, h) == pytest.approx(e[5])
    h6 = _random_h(rng, 6)
    amp = rng.normal(size=64) + 1j * rng.normal(size=64)
    amp /= np.linalg.norm(amp)
    ref = sum(abs(a) ** 2 * en for a, en in zip(amp, ising_energies(h6)))
    assert expectation(amp, h6) == pytest.approx(ref, rel=1e-12)


def test_mixer_dense_and_reshape_paths_agree():
    rng = np.random.default_rng(5)
    h = _random_h(rng, 4)
    betas, gammas = [0.4, 1.1], [0.7, 0.2]
    s = init_uniform(4)
    for b, g in zip(betas, gammas):
        s = apply_mixer_layer(apply_cost_layer(s, h, g), b)
    assert np.allclose(qaoa_state(h, betas, gammas), s, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_fourth_order(seed):
    h = _random_h(np.random.default_rng(seed), 4)
    rng = np.random.default_rng(100 + seed)
    betas, gammas = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
    g2 = np.concatenate(expectation_gradient(h, betas, gammas, 1e-4, order=2))
    g4 = np.concatenate(expectation_gradient(h, betas, gammas, 1e-3, order=4))
    assert np.allclose(g2, g4, rtol=1e-5, atol=1e-7 * np.abs(g4).max())


@pytest.mark.parametrize("n", [1, 3, 6])
def test_batched_values_match_single_evaluations(n):
    rng = np.random.default_rng(n)
    circ = _Circuit(rng.normal(size=1 << n), n)
    thetas = rng.uniform(-1, 1, (5, 4))
    assert np.allclose(circ.values(thetas), [circ.value(t) for t in thetas], atol=1e-14)
    assert np.allclose(circ.fd_grad(thetas[0], 1e-4), _fd_grad(circ.value, thetas[0], 1e-4), atol=1e-10)


def test_sampling_basis_state():
    s = np.zeros(4, complex)
    s[2] = 1
    assert sample_bitstrings(s, 50, 0) == {"10": 50}


def test_sampling_frequencies_and_determinism():
    counts = sample_bitstrings(init_uniform(2), 100_000, 7)
    for k in ("00", "01", "10", "11"):
        assert abs(counts[k] / 100_000 - 0.25) <= 0.01
    assert counts == sample_bitstrings(init_uniform(2), 100_000, 7)


def test_sampling_chi_square():
    from scipy.stats import chisquare

    rng = np.random.default_rng(9)
    amp = rng.normal(size=16) + 1j * rng.normal(size=16)
    amp /= np.linalg.norm(amp)
    counts = sample_bitstrings(amp, 100_000, 3)
    obs = np.array([counts.get(format(k, "04b"), 0) for k in range(16)])
    exp = np.abs(amp) ** 2 * 100_000
    assert chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 0.01


def test_single_qubit_drives_to_minimiser():
    # E(z) = z: lowest at z = -1, which is bit 1
    h = IsingHamiltonian(np.array([1.0]), np.zeros((1, 1)), 0.0)
    res = optimize(h, QaoaConfig(layers=1, seed=0))
    assert res.sample_counts.get("1", 0) > res.sample_counts.get("0", 0)
    assert list(res.best_bitstring) == [1]
    assert res.best_energy == -1.0


def test_zero_hamiltonian():
    h = IsingHamiltonian(np.zeros(2), np.zeros((2, 2)), 3.5)
    res = optimize(h, QaoaConfig(max_iters=5))
    assert res.best_energy == 3.5
    assert all(v == pytest.approx(3.5) for v in res.objective_trace)


def test_trace_monotone_and_bounded():
    h = _random_h(np.random.default_rng(4), 5)
    cfg = QaoaConfig(max_iters=60, seed=2)
    res = optimize(h, cfg)
    assert len(res.objective_trace) <= cfg.max_iters
    assert np.all(np.diff(res.objective_trace) <= 1e-12)
    assert res.objective_trace[0] <= res.initial_objective + 1e-12


def test_result_energy_is_qubo_energy_of_bitstring(small_world):
    scn, s = small_world
    q = build_channel_qubo(s, np.full(3, scn.p_max_w))
    res = solve_qubo(q, QaoaConfig(seed=1), feasible=one_hot_feasible(q))
    assert res.best_energy == qubo_energy(q, res.best_bitstring)
    assert res.feasible
    assert res.best_bitstring.reshape(3, 2).sum(axis=1).max() <= 1


def test_channel_instances_near_optimum():
    hits = 0
    for seed in range(10):
        scn, s = generate_scenario(ScenarioConfig(n_devices=3, n_channels=2, seed=seed))
        q = build_channel_qubo(s, np.full(3, scn.p_max_w))
        opt = brute_force_qubo(q).best_value
        res = solve_qubo(q, QaoaConfig(seed=seed), feasible=one_hot_feasible(q))
        hits += abs(res.best_energy - opt) <= 0.05 * abs(opt)
    assert hits >= 9


def test_config_validation():
    with pytest.raises(ValueError):
        QaoaConfig(layers=0)
    with pytest.raises(ValueError):
        QaoaConfig(lr=0)
    with pytest.raises(ValueError):
        QaoaConfig(shots=0)


def test_same_seed_same_result():
    h = _random_h(np.random.default_rng(8), 4)
    a, b = optimize(h, QaoaConfig(seed=3)), optimize(h, QaoaConfig(seed=3))
    assert a.sample_counts == b.sample_counts and np.array_equal(a.betas, b.betas)


def test_trace_csv(tmp_path):
    h = _random_h(np.random.default_rng(8), 3)
    res = optimize(h, QaoaConfig(max_iters=10))
    path = tmp_path / "t.csv"
    write_trace_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema=")
    assert sum(l.startswith("objective,") for l in lines) == len(res.objective_trace)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_norm_preserved_property(n, beta, gamma, seed):
    h = _random_h(np.random.default_rng(seed), n)
    s = qaoa_state(h, [beta, gamma], [gamma, beta])
    assert np.linalg.norm(s) == pytest.approx(1.0, abs=1e-9)
