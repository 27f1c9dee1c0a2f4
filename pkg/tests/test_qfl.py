import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qflnoma.qaoa import ResourceError
from qflnoma.qfl import (
    INF,
    ConvergenceBoundInputs,
    Entangler,
    FedConfig,
    PqcCircuit,
    Rotation,
    ShotNoiseBoundInputs,
    default_ansatz,
    device_datasets,
    eta_condition,
    exact_expectation,
    fedavg,
    lemma4_bound,
    local_sgd,
    loss_gradient,
    mse_loss,
    parameter_shift_gradient,
    random_circuit,
    read_run_csv,
    run_qfl,
    shot_expectation,
    shot_noise_iterations,
    theorem1_rhs,
)
from qflnoma.seeding import stream

RY1 = PqcCircuit(1, (Rotation("Y", 0, 0),), 1)
_PAULI = {
    "X": np.array([[0, 1], [1, 0]], complex),
    "Y": np.array([[0, -1j], [1j, 0]], complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}


def _embed(op, q, n):
    mats = [op if k == q else np.eye(2) for k in range(n)]
    return reduce(np.kron, mats)


def _dense_unitary(c: PqcCircuit, theta):
    """Independent oracle: multiply full 2^n matrices gate by gate."""
    n = c.n_qubits
    u = np.eye(1 << n, dtype=complex)
    for g in c.gates:
        if isinstance(g, Rotation):
            t = theta[g.param]
            gate = math.cos(t / 2) * np.eye(2) - 1j * math.sin(t / 2) * _PAULI[g.axis]
            u = _embed(gate, g.qubit, n) @ u
        else:
            p1 = np.diag([0.0, 1.0])
            u = (np.eye(1 << n) - 2 * _embed(p1, g.a, n) @ _embed(p1, g.b, n)) @ u
    return u


def _density_expectation(c, theta):
    psi0 = np.zeros(1 << c.n_qubits, complex)
    psi0[0] = 1
    psi = _dense_unitary(c, theta) @ psi0
    rho = np.outer(psi, psi.conj())
    return float(np.trace(_embed(_PAULI["Z"], c.readout_qubit, c.n_qubits) @ rho).real)


def test_identity_circuit():
    assert exact_expectation(PqcCircuit(2, (), 0), np.zeros(0)) == 1.0


def test_ry_closed_form():
    for t in (0.0, 0.4, math.pi / 2, 2.5):
        assert exact_expectation(RY1, [t]) == pytest.approx(math.cos(t), abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_matches_density_matrix_oracle(seed):
    rng = stream(seed, "circ")
    c = random_circuit(3, 8, rng)
    theta = rng.uniform(-math.pi, math.pi, 8)
    assert exact_expectation(c, theta) == pytest.approx(_density_expectation(c, theta), abs=1e-12)


def test_budget_and_validation():
    big = PqcCircuit(13, (), 0)
    with pytest.raises(ResourceError):
        exact_expectation(big, np.zeros(0))
    with pytest.raises(ValueError):
        PqcCircuit(1, (Rotation("Y", 0, 3),), 1)
    with pytest.raises(ValueError):
        PqcCircuit(2, (Entangler(0, 0),), 0)
    with pytest.raises(ValueError):
        PqcCircuit(1, (Rotation("W", 0, 0),), 1)


def test_single_shot_is_eigenvalue():
    for seed in range(20):
        assert shot_expectation(RY1, [1.0], 1, seed) in (-1.0, 1.0)


def test_basis_state_has_no_shot_noise():
    c = PqcCircuit(1, (Rotation("X", 0, 0),), 1)
    assert shot_expectation(c, [math.pi], 7, 3) == pytest.approx(-1.0)
    assert shot_expectation(c, [0.0], 50, 3) == 1.0


def test_shot_estimator_unbiased():
    rng = stream(0, "unbiased")
    est = [shot_expectation(RY1, [math.pi / 2], 10_000, rng) for _ in range(200)]
    assert abs(np.mean(est)) <= 3 / math.sqrt(200 * 10_000)


def test_shift_gradient_closed_forms():
    assert parameter_shift_gradient(RY1, [0.0], INF)[0] == pytest.approx(0.0, abs=1e-12)
    assert parameter_shift_gradient(RY1, [math.pi / 2], INF)[0] == pytest.approx(-1.0)


def _fd(c, theta, h=1e-5):
    g = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (exact_expectation(c, theta + e) - exact_expectation(c, theta - e)) / (2 * h)
    return g


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 12), st.integers(0, 10_000))
def test_shift_gradient_matches_finite_difference(q, p, seed):
    rng = stream(seed, "ps")
    c = random_circuit(q, p, rng)
    theta = rng.uniform(-math.pi, math.pi, p)
    assert np.allclose(parameter_shift_gradient(c, theta, INF), _fd(c, theta), atol=1e-4)


def test_shift_gradient_with_inputs_batches():
    c = default_ansatz(2, 1)
    theta = stream(1, "t").uniform(-1, 1, c.n_params)
    x = np.array([[0.3, 1.2], [2.0, 0.1]])
    rows = parameter_shift_gradient(c, theta, INF, x=x)
    for r, xi in zip(rows, x):
        assert np.allclose(r, parameter_shift_gradient(c, theta, INF, x=xi), atol=1e-12)


def test_shot_gradient_variance_bound():
    rng = stream(4, "var")
    c = random_circuit(2, 4, rng)
    theta = rng.uniform(-math.pi, math.pi, 4)
    draws = np.array([parameter_shift_gradient(c, theta, 50, rng) for _ in range(2000)])
    bound = lemma4_bound(ShotNoiseBoundInputs(dims=4, shots=50))
    assert np.all(draws.var(axis=0) <= bound)
    assert np.allclose(draws.mean(axis=0), parameter_shift_gradient(c, theta, INF), atol=0.02)


def test_local_sgd_zero_lr_and_one_step():
    c = default_ansatz(2, 1)
    th0 = stream(2, "th").uniform(-1, 1, c.n_params)
    x, y = np.array([[0.4, 0.9]]), np.array([1.0])
    assert np.array_equal(local_sgd(c, th0, 3, 0.0, INF, (x, y), 0), th0)
    one = local_sgd(c, th0, 1, 0.1, INF, (x, y), 0)
    assert np.allclose(one, th0 - 0.1 * loss_gradient(c, th0, x, y, INF))
    with pytest.raises(ValueError):
        local_sgd(c, th0, 0, 0.1, INF, (x, y), 0)


def test_local_sgd_descends_on_toy_task():
    c = PqcCircuit(1, (Rotation("Y", 0, 0),), 1)
    x, y = np.zeros((1, 1)), np.array([-1.0])
    theta = np.array([0.5])
    losses = []
    for _ in range(50):
        theta = local_sgd(c, theta, 1, 0.05, INF, (x, y), 0)
        losses.append(mse_loss(c, theta, x, y))
    assert np.all(np.diff(losses) < 0)


def test_fedavg_cases():
    a = np.array([0.3, -1.0])
    assert np.array_equal(fedavg([a, a, a]), a)
    assert fedavg([[0.0], [2.0]])[0] == 1.0
    with pytest.raises(ValueError):
        fedavg([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-10, 10), min_size=3, max_size=3), min_size=1, max_size=6), st.floats(-5, 5))
def test_fedavg_permutation_and_linearity(rows, scale):
    arr = np.array(rows)
    assert np.allclose(fedavg(arr[::-1]), fedavg(arr))
    assert np.allclose(fedavg(scale * arr), scale * fedavg(arr), atol=1e-9)


def test_non_iid_split_is_skewed():
    cfg = FedConfig(data_split="non_iid", n_devices=4, samples_per_device=400)
    for n, (x, y) in enumerate(device_datasets(cfg)):
        dominant = 1.0 if n % 2 == 0 else -1.0
        assert 0.72 <= np.mean(y == dominant) <= 0.88
    iid = device_datasets(FedConfig(n_devices=2, samples_per_device=400))
    assert all(0.4 <= np.mean(y == 1) <= 0.6 for _, y in iid)


def test_run_qfl_single_device_single_round():
    cfg = FedConfig(n_devices=1, rounds=1, local_iters=2, shots=INF, seed=3)
    rec = run_qfl(cfg)
    c = default_ansatz()
    theta0 = stream(3, "init").uniform(-0.1 * math.pi, 0.1 * math.pi, c.n_params)
    data = device_datasets(cfg)[0]
    expect = local_sgd(c, theta0, 2, cfg.lr, INF, data, stream(3, "local", 0, 0), cfg.batch)
    assert np.allclose(rec.theta, expect)
    assert len(rec.global_loss) == 1


def test_run_qfl_deterministic_and_csv(tmp_path):
    cfg = FedConfig(rounds=3, n_devices=2, shots=40, seed=5)
    a, b = run_qfl(cfg), run_qfl(cfg)
    assert a.global_loss == b.global_loss
    pa, pb = a.write_csv(tmp_path / "a.csv"), b.write_csv(tmp_path / "b.csv")
    assert pa.read_bytes() == pb.read_bytes()
    lines = pa.read_text().splitlines()
    assert lines[0] == "# schema=qfl-run/v1"
    assert lines[1] == "round,global_loss,global_accuracy,H,N,split,seed"
    assert len(lines) == 2 + 3
    back = read_run_csv(pa)
    assert back.global_loss == a.global_loss and back.shots == 40


def test_fed_config_validation():
    with pytest.raises(ValueError):
        FedConfig(lr=0)
    with pytest.raises(ValueError):
        FedConfig(rounds=0)
    with pytest.raises(ValueError):
        FedConfig(data_split="weird")
    with pytest.raises(ValueError):
        FedConfig(n_devices=2, local_iters=(1, 2, 3))


# -- bounds --------------------------------------------------------------------

def test_shot_variance_bound_values():
    assert lemma4_bound(ShotNoiseBoundInputs(dims=4, shots=100)) == pytest.approx(0.02)
    a = lemma4_bound(ShotNoiseBoundInputs(dims=6, shots=30))
    assert lemma4_bound(ShotNoiseBoundInputs(dims=6, shots=60)) == pytest.approx(a / 2)
    with pytest.raises(ValueError):
        ShotNoiseBoundInputs(dims=4, shots=0)
    with pytest.raises(ValueError):
        ShotNoiseBoundInputs(dims=4, shots=10, nu=0.3)


def _conv(**kw):
    base = dict(smoothness=2.0, pl_constant=0.5, c1=1.0, sigma=0.5, batch=8, diversity=1.0, lr=0.01,
                rounds=10, local_iters=(5, 5), n_devices=2, f_gap=1.0)
    base.update(kw)
    if "n_devices" in kw and "local_iters" not in kw:
        base["local_iters"] = (5,) * kw["n_devices"]
    return ConvergenceBoundInputs(**base)


def test_convergence_rhs_value():
    # hand evaluation: 2/(0.01*10*5) + 2*0.01*0.25/16 + 2*1e-4*0.25*4*6*1.5/8
    expected = 4.0 + 3.125e-4 + 2.25e-4
    assert theorem1_rhs(_conv()) == pytest.approx(expected, rel=1e-12)


def test_convergence_rhs_gap_term_decays():
    a = theorem1_rhs(_conv(sigma=0.0, rounds=10))
    b = theorem1_rhs(_conv(sigma=0.0, rounds=1000))
    assert b == pytest.approx(a / 100)


def test_convergence_rhs_more_devices_lower_noise():
    vals = [theorem1_rhs(_conv(f_gap=0.0, n_devices=n)) for n in (1, 2, 4, 8)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_convergence_rhs_monotone_in_shots():
    vals = [theorem1_rhs(_conv(), lemma4_bound(ShotNoiseBoundInputs(dims=16, shots=h))) for h in (1, 10, 100, INF)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))


def test_convergence_inputs_validation():
    with pytest.raises(ValueError):
        _conv(smoothness=0.1, pl_constant=0.5)
    with pytest.raises(ValueError):
        _conv(local_iters=(5,))


def test_eta_condition():
    assert eta_condition(_conv(lr=1e-3)) < 0
    assert eta_condition(_conv(lr=5.0)) > 0


def test_shot_noise_iterations():
    assert shot_noise_iterations(1 / math.e, 1.0, 1.0, 0.0) == 1
    assert shot_noise_iterations(0.05, 1.0, 2.0, 0.1) > shot_noise_iterations(0.1, 1.0, 2.0, 0.1)
    v = lemma4_bound(ShotNoiseBoundInputs(dims=4, shots=100))
    assert shot_noise_iterations(0.1, 0.5, 1.0, v) == math.ceil((math.log(10) + v / 0.05) * 2)
    with pytest.raises(ValueError):
        shot_noise_iterations(0.0, 1.0, 1.0, 0.1)
