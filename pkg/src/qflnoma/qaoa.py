"""Exact statevector QAOA for diagonal (Ising) cost Hamiltonians.

States are plain complex numpy arrays of length ``2^n``; qubit 0 is the most
significant bit of the basis index, matching :mod:`qflnoma.qubo`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .qubo import IsingHamiltonian, QuboProblem, index_to_bits, ising_energies, qubo_energy, qubo_to_ising
from .seeding import stream

MAX_QUBITS = 20
_DENSE_MIXER_MAX = 10


class ResourceError(RuntimeError):
    """Instance exceeds a simulator or enumeration budget."""


@dataclass(frozen=True)
class QaoaConfig:
    layers: int = 2
    lr: float = 0.1
    max_iters: int = 150
    shots: int = 1024
    seed: int = 0
    grad_eps: float = 1e-4
    tol: float = 1e-6
    backtracking: bool = True
    max_halvings: int = 12

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class QaoaResult:
    best_bitstring: np.ndarray
    best_energy: float
    betas: np.ndarray
    gammas: np.ndarray
    objective_trace: list = field(default_factory=list)
    sample_counts: dict = field(default_factory=dict)
    converged: bool = False
    feasible: bool = True
    initial_objective: float = float("nan")

    @property
    def params(self) -> tuple[np.ndarray, np.ndarray]:
        return self.betas, self.gammas


def _check_budget(n: int):
    if n > MAX_QUBITS:
        raise ResourceError(f"{n} qubits exceeds the {MAX_QUBITS}-qubit statevector budget")


def init_uniform(n_qubits: int) -> np.ndarray:
    _check_budget(n_qubits)
    dim = 1 << n_qubits
    return np.full(dim, 1.0 / math.sqrt(dim), dtype=complex)


def _energies(h) -> np.ndarray:
    return ising_energies(h) if isinstance(h, IsingHamiltonian) else np.asarray(h, dtype=float)


def apply_cost_layer(s: np.ndarray, h, gamma: float) -> np.ndarray:
    """Phase ``exp(-i gamma E(x))`` on each basis state; ``h`` may be precomputed energies."""
    return s * np.exp(-1j * gamma * _energies(h))


def apply_mixer_layer(s: np.ndarray, beta: float) -> np.ndarray:
    """``RX(2 beta) = exp(-i beta X)`` on every qubit."""
    n = int(s.size).bit_length() - 1
    c, sn = math.cos(beta), -1j * math.sin(beta)
    out = np.array(s, dtype=complex)
    for q in range(n):
        v = out.reshape(1 << q, 2, 1 << (n - q - 1))
        a0, a1 = v[:, 0, :].copy(), v[:, 1, :].copy()
        v[:, 0, :] = c * a0 + sn * a1
        v[:, 1, :] = sn * a0 + c * a1
    return out


def expectation(s: np.ndarray, h) -> float:
    return float(np.dot(np.abs(s) ** 2, _energies(h)))


def sample_bitstrings(s: np.ndarray, shots: int, seed: int) -> dict:
    """Counts keyed by bitstring text (qubit 0 first); a multinomial draw from ``|amp|^2``."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    n = int(s.size).bit_length() - 1
    probs = np.abs(s) ** 2
    probs = probs / probs.sum()
    counts = stream(seed, "readout").multinomial(shots, probs)
    return {format(int(k), f"0{n}b") if n else "": int(counts[k]) for k in np.flatnonzero(counts)}


class _Circuit:
    """Cached pieces for repeated evaluation of one Hamiltonian."""

    def __init__(self, energies: np.ndarray, n: int):
        self.n = n
        self.energies = energies
        self.dim = 1 << n
        if n <= _DENSE_MIXER_MAX:
            # exp(-i b sum X) = W exp(-i b sum Z) W with W the normalised Hadamard transform
            w = np.array([[1.0]])
            h1 = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
            for _ in range(n):
                w = np.kron(w, h1)
            self.w = w
            pop = np.array([bin(k).count("1") for k in range(self.dim)])
            self.zsum = (n - 2 * pop).astype(float)
        else:
            self.w = None

    def mix(self, s, beta):
        if self.w is None:
            return apply_mixer_layer(s, beta)
        return self.w @ (np.exp(-1j * beta * self.zsum) * (self.w @ s))

    def state(self, betas, gammas):
        s = np.full(self.dim, 1.0 / math.sqrt(self.dim), dtype=complex)
        for b, g in zip(betas, gammas):
            s = s * np.exp(-1j * g * self.energies)
            s = self.mix(s, b)
        return s

    def value(self, theta):
        p = len(theta) // 2
        s = self.state(theta[p:], theta[:p])
        return float(np.dot(np.abs(s) ** 2, self.energies))

    def values(self, thetas: np.ndarray) -> np.ndarray:
        """``value`` for each row of ``thetas``, one matrix product per layer."""
        if self.w is None:
            return np.array([self.value(t) for t in thetas])
        p = thetas.shape[1] // 2
        s = np.full((len(thetas), self.dim), 1.0 / math.sqrt(self.dim), dtype=complex)
        for layer in range(p):
            s = s * np.exp(-1j * thetas[:, layer, None] * self.energies)
            s = (s @ self.w) * np.exp(-1j * thetas[:, p + layer, None] * self.zsum)
            s = s @ self.w
        return (np.abs(s) ** 2) @ self.energies

    def fd_grad(self, theta, eps):
        """Central differences with all shifted points evaluated in one batch."""
        shifts = eps * np.eye(len(theta))
        v = self.values(np.concatenate([theta + shifts, theta - shifts]))
        k = len(theta)
        return (v[:k] - v[k:]) / (2 * eps)


def qaoa_state(h, betas, gammas) -> np.ndarray:
    e = _energies(h)
    n = int(e.size).bit_length() - 1
    _check_budget(n)
    return _Circuit(e, n).state(betas, gammas)


def expectation_gradient(h, betas, gammas, eps: float = 1e-4, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference gradient of ``<H>`` w.r.t. (betas, gammas).

    ``order=2`` is the central difference used by :func:`optimize`;
    ``order=4`` is the five-point stencil kept as a reference.
    """
    e = _energies(h)
    circ = _Circuit(e, int(e.size).bit_length() - 1)
    theta = np.concatenate([np.asarray(gammas, float), np.asarray(betas, float)])
    g = _fd_grad(circ.value, theta, eps, order)
    p = len(theta) // 2
    return g[p:], g[:p]


def _fd_grad(f, theta, eps, order=2):
    g = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = eps
        if order == 2:
            g[k] = (f(theta + e) - f(theta - e)) / (2 * eps)
        elif order == 4:
            g[k] = (-f(theta + 2 * e) + 8 * f(theta + e) - 8 * f(theta - e) + f(theta - 2 * e)) / (12 * eps)
        else:
            raise ValueError("order must be 2 or 4")
    return g


def optimize(
    h: IsingHamiltonian,
    cfg: QaoaConfig = QaoaConfig(),
    qubo: QuboProblem | None = None,
    feasible: Callable[[np.ndarray], bool] | None = None,
) -> QaoaResult:
    """Tune (beta, gamma) by gradient descent on the exact ``<H>``, then read out.

    The circuit runs on ``H`` rescaled to unit max coefficient (constant
    dropped), which keeps angle landscapes comparable across instances;
    ``objective_trace`` is reported in the original energy units.

    Readout samples ``cfg.shots`` bitstrings and returns the lowest-energy
    sample, restricted to those passing ``feasible`` when any do.
    """
    n = h.n_qubits
    _check_budget(n)
    raw = ising_energies(h)
    scale = h.max_abs_coefficient() or 1.0
    circ = _Circuit((raw - h.offset) / scale, n)

    def unscale(v):
        return v * scale + h.offset

    rng = stream(cfg.seed, "init")
    p = cfg.layers
    gammas0 = rng.uniform(0.0, math.pi / 4, size=p)
    betas0 = rng.uniform(0.0, math.pi / 4, size=p)
    theta = np.concatenate([gammas0, betas0])

    f = circ.value(theta)
    f0 = f
    trace = []
    converged = False
    for _ in range(cfg.max_iters):
        grad = circ.fd_grad(theta, cfg.grad_eps)
        step = cfg.lr
        cand = theta - step * grad
        fc = circ.value(cand)
        if cfg.backtracking:
            halvings = 0
            while fc > f and halvings < cfg.max_halvings:
                step /= 2.0
                cand = theta - step * grad
                fc = circ.value(cand)
                halvings += 1
            if fc > f:
                converged = True
                break
        delta = abs(f - fc)
        theta, f = cand, fc
        trace.append(unscale(f))
        if delta < cfg.tol:
            converged = True
            break

    gammas, betas = theta[:p].copy(), theta[p:].copy()
    final = circ.state(betas, gammas)
    counts = sample_bitstrings(final, cfg.shots, cfg.seed)

    def energy_of(key: str) -> float:
        if qubo is not None:
            return qubo_energy(qubo, np.array([int(ch) for ch in key], dtype=np.int8))
        return float(raw[int(key, 2)] if key else raw[0])

    keys = sorted(counts, key=lambda k: int(k, 2) if k else 0)
    scored = [(energy_of(k), int(k, 2) if k else 0, k) for k in keys]
    ok = scored
    is_feasible = True
    if feasible is not None:
        ok = [t for t in scored if feasible(np.array([int(ch) for ch in t[2]], dtype=np.int8))]
        if not ok:
            ok, is_feasible = scored, False
    best_e, best_idx, _ = min(ok)
    return QaoaResult(
        best_bitstring=index_to_bits(best_idx, n),
        best_energy=float(best_e),
        betas=betas,
        gammas=gammas,
        objective_trace=trace,
        sample_counts=counts,
        converged=converged,
        feasible=is_feasible,
        initial_objective=unscale(f0),
    )


def solve_qubo(qubo: QuboProblem, cfg: QaoaConfig = QaoaConfig(), feasible=None) -> QaoaResult:
    return optimize(qubo_to_ising(qubo), cfg, qubo=qubo, feasible=feasible)


def write_trace_csv(result: QaoaResult, path) -> None:
    """Objective trace and final sample distribution, for plotting."""
    with open(path, "w") as fh:
        fh.write("# schema=qaoa-trace/v1\n")
        fh.write("section,key,value\n")
        for i, v in enumerate(result.objective_trace):
            fh.write(f"objective,{i},{v!r}\n")
        total = sum(result.sample_counts.values())
        for k in sorted(result.sample_counts):
            fh.write(f"probability,{k},{result.sample_counts[k] / total!r}\n")
