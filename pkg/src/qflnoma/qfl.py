"""Toy quantum federated learning with shot-noise gradients, plus bound calculators.

Circuits are simulated exactly as batched statevectors. ``shots=math.inf``
means exact expectations everywhere.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .qaoa import ResourceError
from .seeding import stream

MAX_PQC_QUBITS = 12
INF = math.inf
RUN_SCHEMA = "qfl-run/v1"

SeedLike = Union[int, np.random.Generator]


def _rng(seed: SeedLike, *labels) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else stream(seed, *labels)


# -- circuits ------------------------------------------------------------------

@dataclass(frozen=True)
class Rotation:
    """``exp(-i theta/2 P)`` on one qubit, ``P`` in X/Y/Z."""

    axis: str
    qubit: int
    param: int


@dataclass(frozen=True)
class Entangler:
    """Fixed CZ between two qubits."""

    a: int
    b: int


@dataclass(frozen=True)
class PqcCircuit:
    n_qubits: int
    gates: tuple
    n_params: int
    readout_qubit: int = 0

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        if not 0 <= self.readout_qubit < self.n_qubits:
            raise ValueError("readout qubit out of range")
        for g in self.gates:
            if isinstance(g, Rotation):
                if g.axis not in "XYZ" or len(g.axis) != 1:
                    raise ValueError(f"bad rotation axis {g.axis!r}")
                if not 0 <= g.param < self.n_params:
                    raise ValueError(f"parameter index {g.param} outside [0, {self.n_params})")
                if not 0 <= g.qubit < self.n_qubits:
                    raise ValueError(f"qubit {g.qubit} out of range")
            elif isinstance(g, Entangler):
                if g.a == g.b or not (0 <= g.a < self.n_qubits and 0 <= g.b < self.n_qubits):
                    raise ValueError(f"bad entangler {g}")
            else:
                raise TypeError(f"unknown gate {g!r}")


def default_ansatz(n_qubits: int = 4, layers: int = 2) -> PqcCircuit:
    """``layers`` x (RY and RZ on every qubit, then a CZ ring)."""
    gates, k = [], 0
    for _ in range(layers):
        for q in range(n_qubits):
            gates.append(Rotation("Y", q, k))
            gates.append(Rotation("Z", q, k + 1))
            k += 2
        if n_qubits > 1:
            pairs = [(q, (q + 1) % n_qubits) for q in range(n_qubits)] if n_qubits > 2 else [(0, 1)]
            gates.extend(Entangler(a, b) for a, b in pairs)
    return PqcCircuit(n_qubits, tuple(gates), k)


def random_circuit(n_qubits: int, n_params: int, rng: np.random.Generator, n_entanglers: int | None = None) -> PqcCircuit:
    """Random rotations (one per parameter) interleaved with CZs."""
    gates = [Rotation(str(rng.choice(list("XYZ"))), int(rng.integers(n_qubits)), k) for k in range(n_params)]
    if n_qubits > 1:
        n_ent = n_params // 2 if n_entanglers is None else n_entanglers
        for _ in range(n_ent):
            a, b = rng.choice(n_qubits, size=2, replace=False)
            gates.insert(int(rng.integers(len(gates) + 1)), Entangler(int(a), int(b)))
    return PqcCircuit(n_qubits, tuple(gates), n_params)


def _apply_rot(psi: np.ndarray, axis: str, theta: np.ndarray, q: int, n: int) -> np.ndarray:
    """``exp(-i theta_b/2 P)`` on qubit ``q`` of every batch row ``b``."""
    v = psi.reshape(psi.shape[0], 1 << q, 2, 1 << (n - q - 1))
    a0, a1 = v[:, :, 0, :], v[:, :, 1, :]
    out = np.empty_like(v)
    if axis == "Z":
        ph = np.exp(-0.5j * theta)[:, None, None]
        out[:, :, 0, :] = ph * a0
        out[:, :, 1, :] = ph.conj() * a1
        return out.reshape(psi.shape)
    c = np.cos(theta / 2)[:, None, None]
    s = np.sin(theta / 2)[:, None, None]
    if axis == "Y":
        out[:, :, 0, :] = c * a0 - s * a1
        out[:, :, 1, :] = s * a0 + c * a1
    else:
        out[:, :, 0, :] = c * a0 - 1j * s * a1
        out[:, :, 1, :] = c * a1 - 1j * s * a0
    return out.reshape(psi.shape)


@functools.lru_cache(maxsize=None)
def _cz_signs(a: int, b: int, n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    both = ((idx >> (n - 1 - a)) & 1) & ((idx >> (n - 1 - b)) & 1)
    return np.where(both == 1, -1.0, 1.0)


@functools.lru_cache(maxsize=None)
def _z_signs(q: int, n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    return 1.0 - 2.0 * ((idx >> (n - 1 - q)) & 1)


def encode_features(x: np.ndarray, n_qubits: int) -> np.ndarray:
    """RY angle for each qubit: feature ``k mod F`` goes on qubit ``k``."""
    x = np.atleast_2d(np.asarray(x, float))
    return x[:, np.arange(n_qubits) % x.shape[1]]


def simulate(c: PqcCircuit, thetas: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
    """Statevectors for a batch of parameter rows, optionally after RY feature encoding.

    ``thetas`` has shape (B, P) or (P,); ``x`` has shape (B, F) or (F,).
    Qubit 0 is the most significant bit of the basis index.
    """
    n = c.n_qubits
    if n > MAX_PQC_QUBITS:
        raise ResourceError(f"{n} qubits exceeds the {MAX_PQC_QUBITS}-qubit PQC budget")
    thetas = np.atleast_2d(np.asarray(thetas, float))
    if thetas.shape[1] != c.n_params:
        raise ValueError(f"expected {c.n_params} parameters, got {thetas.shape[1]}")
    b = thetas.shape[0]
    if x is not None:
        enc = encode_features(x, n)
        if enc.shape[0] == 1 and b > 1:
            enc = np.repeat(enc, b, axis=0)
        elif b == 1 and enc.shape[0] > 1:
            thetas = np.repeat(thetas, enc.shape[0], axis=0)
            b = enc.shape[0]
        elif enc.shape[0] != b:
            raise ValueError("feature and parameter batches differ in size")
    psi = np.zeros((b, 1 << n), dtype=complex)
    psi[:, 0] = 1.0
    if x is not None:
        for q in range(n):
            psi = _apply_rot(psi, "Y", enc[:, q], q, n)
    for g in c.gates:
        if isinstance(g, Rotation):
            psi = _apply_rot(psi, g.axis, thetas[:, g.param], g.qubit, n)
        else:
            psi = psi * _cz_signs(g.a, g.b, n)
    return psi


def exact_expectations(c: PqcCircuit, thetas, x=None) -> np.ndarray:
    psi = simulate(c, thetas, x)
    return np.clip((np.abs(psi) ** 2) @ _z_signs(c.readout_qubit, c.n_qubits), -1.0, 1.0)


def exact_expectation(c: PqcCircuit, theta, x=None) -> float:
    """``<0|U^dag Z U|0>`` on the readout qubit."""
    return float(exact_expectations(c, np.asarray(theta, float)[None, :], x)[0])


def _sample_means(z: np.ndarray, shots, rng: np.random.Generator) -> np.ndarray:
    """Average of ``shots`` independent +-1 outcomes per entry of ``z``."""
    if shots == INF:
        return z
    if shots < 1:
        raise ValueError("shots must be >= 1")
    shots = int(shots)
    plus = rng.binomial(shots, np.clip((1.0 + z) / 2.0, 0.0, 1.0))
    return (2.0 * plus - shots) / shots


def shot_expectation(c: PqcCircuit, theta, shots, seed: SeedLike = 0, x=None) -> float:
    """Mean of ``shots`` simulated Z measurements."""
    z = exact_expectation(c, theta, x)
    return float(_sample_means(np.array([z]), shots, _rng(seed, "shots"))[0])


def parameter_shift_gradient(c: PqcCircuit, theta, shots=INF, seed: SeedLike = 0, x=None) -> np.ndarray:
    """``d<Z>/dtheta`` by +-pi/2 shifts, each shifted circuit estimated from its own shots.

    If ``x`` is a batch of inputs, returns one gradient row per input.
    """
    theta = np.asarray(theta, float)
    p = c.n_params
    shifts = np.concatenate([np.eye(p), -np.eye(p)]) * (math.pi / 2)
    thetas = theta[None, :] + shifts  # (2P, P)
    if x is None:
        z = exact_expectations(c, thetas)
        z = _sample_means(z, shots, _rng(seed, "shift"))
        return 0.5 * (z[:p] - z[p:])
    enc = np.atleast_2d(np.asarray(x, float))
    m = enc.shape[0]
    z = exact_expectations(c, np.tile(thetas, (m, 1)), np.repeat(enc, 2 * p, axis=0)).reshape(m, 2 * p)
    z = _sample_means(z, shots, _rng(seed, "shift"))
    return 0.5 * (z[:, :p] - z[:, p:])


# -- training ------------------------------------------------------------------

def mse_loss(c: PqcCircuit, theta, x, y) -> float:
    z = exact_expectations(c, np.asarray(theta, float)[None, :], x)
    return float(np.mean((z - np.asarray(y, float)) ** 2))


def accuracy(c: PqcCircuit, theta, x, y) -> float:
    z = exact_expectations(c, np.asarray(theta, float)[None, :], x)
    return float(np.mean(np.where(z >= 0, 1.0, -1.0) == np.asarray(y, float)))


def loss_gradient(c: PqcCircuit, theta, x, y, shots=INF, rng: SeedLike = 0) -> np.ndarray:
    """Gradient of the mean of ``(<Z> - y)^2``; residual and shifts use independent shots."""
    rng = _rng(rng, "grad")
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float)
    z = _sample_means(exact_expectations(c, np.asarray(theta, float)[None, :], x), shots, rng)
    dz = parameter_shift_gradient(c, theta, shots, rng, x)
    return (2.0 / len(y)) * ((z - y) @ dz)


def local_sgd(
    c: PqcCircuit,
    theta0,
    local_iters: int,
    lr: float,
    shots,
    data: tuple,
    seed: SeedLike = 0,
    batch: int = 8,
) -> np.ndarray:
    """``local_iters`` mini-batch steps of ``theta <- theta - lr * g_hat``."""
    if local_iters < 1:
        raise ValueError("local_iters must be >= 1")
    rng = _rng(seed, "local")
    x, y = np.asarray(data[0], float), np.asarray(data[1], float)
    theta = np.array(theta0, float)
    m = min(batch, len(y))
    for _ in range(local_iters):
        idx = rng.choice(len(y), size=m, replace=False) if m < len(y) else np.arange(len(y))
        theta = theta - lr * loss_gradient(c, theta, x[idx], y[idx], shots, rng)
    return theta


def fedavg(thetas: Sequence) -> np.ndarray:
    """Coordinate-wise mean of the device vectors."""
    if len(thetas) == 0:
        raise ValueError("fedavg needs at least one parameter vector")
    arr = np.asarray([np.asarray(t, float) for t in thetas])
    if arr.ndim != 2:
        raise ValueError("parameter vectors must share one length")
    return arr.mean(axis=0)


# -- federated runs ------------------------------------------------------------

@dataclass(frozen=True)
class FedConfig:
    n_devices: int = 5
    rounds: int = 30
    local_iters: int | tuple = 5
    lr: float = 0.3
    shots: float = 100
    batch: int = 4
    data_split: str = "iid"
    seed: int = 0
    n_qubits: int = 4
    layers: int = 2
    samples_per_device: int = 64
    test_samples: int = 256

    def __post_init__(self):
        for name in ("n_devices", "rounds", "batch", "n_qubits", "layers", "samples_per_device", "test_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not self.shots >= 1:
            raise ValueError("shots must be >= 1 (math.inf for exact)")
        if self.data_split not in ("iid", "non_iid"):
            raise ValueError("data_split must be 'iid' or 'non_iid'")
        if min(self.local_iters_per_device()) < 1:
            raise ValueError("local_iters must be >= 1")

    def local_iters_per_device(self) -> tuple:
        t = self.local_iters
        if isinstance(t, int):
            return (t,) * self.n_devices
        if len(t) != self.n_devices:
            raise ValueError("one local_iters entry per device")
        return tuple(int(v) for v in t)


_CENTRES = {1: (math.pi / 4, math.pi / 4), -1: (3 * math.pi / 4, 3 * math.pi / 4)}


def synthetic_samples(labels: np.ndarray, rng: np.random.Generator, spread: float = 0.35) -> np.ndarray:
    """Two Gaussian blobs in angle space, one per label."""
    centres = np.array([_CENTRES[int(v)] for v in labels])
    return centres + spread * rng.standard_normal(centres.shape)


def device_datasets(cfg: FedConfig) -> list:
    """(x, y) per device; non-IID devices draw 80% of labels from their own dominant class."""
    out = []
    for n in range(cfg.n_devices):
        rng = stream(cfg.seed, "data", n)
        if cfg.data_split == "iid":
            y = rng.choice([-1.0, 1.0], size=cfg.samples_per_device)
        else:
            dominant = 1.0 if n % 2 == 0 else -1.0
            y = np.where(rng.random(cfg.samples_per_device) < 0.8, dominant, -dominant)
        out.append((synthetic_samples(y, rng), y))
    return out


def holdout_dataset(cfg: FedConfig) -> tuple:
    rng = stream(cfg.seed, "test")
    y = rng.choice([-1.0, 1.0], size=cfg.test_samples)
    return synthetic_samples(y, rng), y


@dataclass
class FedRunRecord:
    global_loss: list
    global_accuracy: list
    shots: float
    n_devices: int
    split: str
    seed: int
    theta: np.ndarray = field(default=None, repr=False)

    def rows(self) -> list:
        h = "inf" if self.shots == INF else int(self.shots)
        return [
            [k + 1, repr(float(l)), repr(float(a)), h, self.n_devices, self.split, self.seed]
            for k, (l, a) in enumerate(zip(self.global_loss, self.global_accuracy))
        ]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema={RUN_SCHEMA}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "global_loss", "global_accuracy", "H", "N", "split", "seed"])
            w.writerows(self.rows())
        return path


def read_run_csv(path: str | Path) -> FedRunRecord:
    with open(path, newline="") as fh:
        head = fh.readline().strip()
        if head != f"# schema={RUN_SCHEMA}":
            raise ValueError(f"{path}: unsupported header {head!r}")
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    h = rows[0]["H"]
    return FedRunRecord(
        [float(r["global_loss"]) for r in rows],
        [float(r["global_accuracy"]) for r in rows],
        INF if h == "inf" else int(h),
        int(rows[0]["N"]),
        rows[0]["split"],
        int(rows[0]["seed"]),
    )


def run_qfl(cfg: FedConfig, circuit: PqcCircuit | None = None) -> FedRunRecord:
    """Full-participation FedAvg; global loss and accuracy are measured exactly on a held-out set."""
    c = circuit or default_ansatz(cfg.n_qubits, cfg.layers)
    data = device_datasets(cfg)
    x_test, y_test = holdout_dataset(cfg)
    theta = stream(cfg.seed, "init").uniform(-0.1 * math.pi, 0.1 * math.pi, size=c.n_params)
    iters = cfg.local_iters_per_device()
    losses, accs = [], []
    for k in range(cfg.rounds):
        local = [
            local_sgd(c, theta, iters[n], cfg.lr, cfg.shots, data[n], stream(cfg.seed, "local", k, n), cfg.batch)
            for n in range(cfg.n_devices)
        ]
        theta = fedavg(local)
        losses.append(mse_loss(c, theta, x_test, y_test))
        accs.append(accuracy(c, theta, x_test, y_test))
    return FedRunRecord(losses, accs, cfg.shots, cfg.n_devices, cfg.data_split, cfg.seed, theta)


# -- bounds --------------------------------------------------------------------

@dataclass(frozen=True)
class ShotNoiseBoundInputs:
    dims: int
    shots: float
    nu: float = 0.25
    n_z: int = 2
    tr_z2: float = 2.0

    def __post_init__(self):
        if not 0 < self.nu <= 0.25:
            raise ValueError("nu must lie in (0, 1/4]")
        if self.dims < 1 or self.n_z < 1:
            raise ValueError("dims and n_z must be >= 1")
        if not self.shots > 0:
            raise ValueError("shots must be positive")
        if not self.tr_z2 > 0:
            raise ValueError("tr_z2 must be positive")


def lemma4_bound(inp: ShotNoiseBoundInputs) -> float:
    """Shot-noise variance cap ``nu * N_z * D * Tr(Z^2) / (2H)``."""
    if inp.shots == INF:
        return 0.0
    return inp.nu * inp.n_z * inp.dims * inp.tr_z2 / (2.0 * inp.shots)


@dataclass(frozen=True)
class ConvergenceBoundInputs:
    smoothness: float
    pl_constant: float
    c1: float
    sigma: float
    batch: int
    diversity: float
    lr: float
    rounds: int
    local_iters: tuple
    n_devices: int
    f_gap: float

    def __post_init__(self):
        if not self.smoothness >= self.pl_constant > 0:
            raise ValueError("need L >= mu > 0")
        if min(self.batch, self.rounds, self.n_devices) < 1:
            raise ValueError("batch, rounds and n_devices must be >= 1")
        if len(self.local_iters) != self.n_devices or min(self.local_iters) < 1:
            raise ValueError("one local_iters entry >= 1 per device")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    @property
    def mean_local_iters(self) -> float:
        return float(np.mean(self.local_iters))


def theorem1_rhs(inp: ConvergenceBoundInputs, shot_term: float = 0.0) -> float:
    """Upper bound on the averaged squared global-gradient norm (diagnostic only)."""
    t, n, b = inp.mean_local_iters, inp.n_devices, inp.batch
    lr, s2, lip = inp.lr, inp.sigma**2, inp.smoothness
    return (
        2.0 * inp.f_gap / (lr * inp.rounds * t)
        + lip * lr * s2 / (n * b)
        + 2.0 * lr**2 * s2 * lip**2 * (t + 1.0) * (1.0 + 1.0 / n) / b
        + shot_term
    )


def eta_condition(inp: ConvergenceBoundInputs) -> float:
    """Coefficient of the local-gradient sum; the step size is admissible when it is <= 0.

    Uses the largest local iteration count, the most restrictive device.
    """
    t = max(inp.local_iters)
    lr, n, lip, lam = inp.lr, inp.n_devices, inp.smoothness, inp.diversity
    return (
        -lr / 2.0
        + lam * (n + 1) * lip**2 * lr**3 * (2.0 * inp.c1 + t * (t + 1)) / (2.0 * n)
        + lam * lip * lr**2 / 2.0 * (inp.c1 / n + 1.0)
    )


def shot_noise_iterations(delta: float, mu: float, smoothness: float, variance: float, const: float = 1.0) -> int:
    """Order estimate ``const * (log(1/delta) + V/(delta mu)) * L/mu`` of local steps needed."""
    if not (delta > 0 and mu > 0 and smoothness > 0 and variance >= 0 and const > 0):
        raise ValueError("delta, mu, L, const must be positive and V non-negative")
    val = const * (math.log(1.0 / delta) + variance / (delta * mu)) * smoothness / mu
    return max(0, math.ceil(val - 1e-12))
