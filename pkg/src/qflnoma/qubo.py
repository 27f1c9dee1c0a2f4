"""QUBO construction for the two BCD sub-problems, energies, and Ising mapping.

Conventions
-----------
* Bit ``i`` of a length-``n`` bitstring is the ``i``-th most significant bit
  of its integer index, so ``x = (0, 1)`` is index 1. Statevectors use the
  same order (qubit 0 is the leftmost).
* Everything is a minimisation: rate terms enter negated, constraint
  penalties enter with positive weight so violating them always costs energy.
* Rate coefficients are first-order (``ln(1+s) ~ s``) and their interference
  denominators are frozen at the current BCD iterate. With
  ``linearization="pricing"`` each coefficient additionally carries the
  first-order loss the device inflicts on co-channel devices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .scenario import ChannelState

MAX_POWER_BITS = 16
TRIPLET_VERSION = 1
_CHUNK = 1 << 16

Kind = Literal["channel_selection", "power_allocation"]
Linearization = Literal["frozen", "pricing"]


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weights.

    ``lambda_one_channel=None`` auto-scales to ``auto_scale`` times the
    largest rate coefficient of the instance being built.
    """

    lambda_rate: float = 1.0
    lambda_one_channel: float | None = None
    lambda_min_power: float = 0.0
    lambda_pmax: float = 0.0
    auto_scale: float = 10.0

    def __post_init__(self):
        for name in ("lambda_rate", "lambda_min_power", "lambda_pmax", "auto_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lambda_one_channel is not None and self.lambda_one_channel < 0:
            raise ValueError("lambda_one_channel must be non-negative")


@dataclass(frozen=True, eq=False)
class QuboProblem:
    q_upper: np.ndarray
    offset: float
    var_map: tuple
    kind: Kind
    devices: tuple = ()
    n_channels: int = 0
    q_bits: int = 0
    step_w: float = 0.0
    # signed rate coefficient per variable (energy = -coef * x for that part)
    rate_coef: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        q = np.asarray(self.q_upper, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("Q must be square")
        if np.any(np.tril(q, -1)):
            raise ValueError("Q must be upper-triangular")
        if len(set(self.var_map)) != len(self.var_map) or (self.var_map and len(self.var_map) != q.shape[0]):
            raise ValueError("var_map must be a bijection onto the QUBO indices")
        q = q.copy()
        q.flags.writeable = False
        object.__setattr__(self, "q_upper", q)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n_vars(self) -> int:
        return self.q_upper.shape[0]

    @classmethod
    def from_matrix(cls, q, offset: float = 0.0, kind: Kind = "channel_selection") -> "QuboProblem":
        """Wrap a square matrix; the lower triangle is folded onto the upper one."""
        q = np.asarray(q, dtype=float)
        upper = np.triu(q) + np.triu(q.T, 1)
        return cls(upper, offset, tuple(range(q.shape[0])), kind)


@dataclass(frozen=True, eq=False)
class IsingHamiltonian:
    """``E(z) = offset + sum_i linear[i] z_i + sum_{i<j} quadratic[i, j] z_i z_j``."""

    linear: np.ndarray
    quadratic: np.ndarray
    offset: float = 0.0

    @property
    def n_qubits(self) -> int:
        return len(self.linear)

    def terms(self) -> dict:
        i, j = np.nonzero(self.quadratic)
        return {(int(a), int(b)): float(self.quadratic[a, b]) for a, b in zip(i, j)}

    def scaled(self, factor: float) -> "IsingHamiltonian":
        return IsingHamiltonian(self.linear * factor, self.quadratic * factor, self.offset * factor)

    def max_abs_coefficient(self) -> float:
        m = 0.0
        if self.linear.size:
            m = max(m, float(np.abs(self.linear).max()))
        if self.quadratic.size:
            m = max(m, float(np.abs(self.quadratic).max()))
        return m


@dataclass(frozen=True)
class Fragment:
    """Decoded QUBO solution for the devices it covers."""

    devices: tuple
    channel_of: np.ndarray | None = None
    power_w: np.ndarray | None = None
    infeasible: tuple = ()

    @property
    def feasible(self) -> bool:
        return not self.infeasible


# -- bit helpers ---------------------------------------------------------------

def index_to_bits(k: int, n: int) -> np.ndarray:
    return np.array([(k >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.int8)


def bits_to_index(x: Sequence[int]) -> int:
    k = 0
    for b in x:
        k = (k << 1) | int(b)
    return k


def bit_matrix(start: int, stop: int, n: int) -> np.ndarray:
    """Rows are the bitstrings with indices ``start..stop-1``."""
    idx = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8)


# -- energies ------------------------------------------------------------------

def _as_bits(p_nvars: int, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (p_nvars,):
        raise ValueError(f"bitstring length {x.shape} does not match {p_nvars} variables")
    if np.any((x != 0) & (x != 1)):
        raise ValueError("bitstring entries must be 0 or 1")
    return x.astype(np.int8)


def qubo_energy(p: QuboProblem, x) -> float:
    """``x^T Q x + offset`` accumulated row by row."""
    x = _as_bits(p.n_vars, x)
    sel = np.flatnonzero(x)
    total = 0.0
    for i in sel:
        total += float(p.q_upper[i, sel].sum())
    return total + p.offset


def qubo_energies(p: QuboProblem, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Energies of every bitstring index in ``[start, stop)`` (default: all)."""
    n = p.n_vars
    stop = (1 << n) if stop is None else stop
    out = np.empty(stop - start)
    diag = np.diag(p.q_upper)
    off = np.triu(p.q_upper, 1)
    for s in range(start, stop, _CHUNK):
        e = min(s + _CHUNK, stop)
        x = bit_matrix(s, e, n).astype(float)
        out[s - start:e - start] = x @ diag + np.einsum("ki,ki->k", x @ off, x) + p.offset
    return out


def qubo_to_ising(p: QuboProblem) -> IsingHamiltonian:
    """Substitute ``x = (1 - z) / 2`` term by term."""
    q = p.q_upper
    diag = np.diag(q)
    off = np.triu(q, 1)
    linear = -diag / 2.0 - (off.sum(axis=1) + off.sum(axis=0)) / 4.0
    quadratic = off / 4.0
    offset = p.offset + diag.sum() / 2.0 + off.sum() / 4.0
    return IsingHamiltonian(linear, quadratic, float(offset))


def spins_from_bits(x) -> np.ndarray:
    return 1 - 2 * np.asarray(x, dtype=np.int64)


def ising_energy(h: IsingHamiltonian, z) -> float:
    z = np.asarray(z, dtype=float)
    if z.shape != (h.n_qubits,):
        raise ValueError("spin vector length does not match the Hamiltonian")
    return float(h.offset + h.linear @ z + z @ h.quadratic @ z)


def ising_energies(h: IsingHamiltonian) -> np.ndarray:
    """Diagonal of the cost Hamiltonian over all ``2^n`` basis states."""
    n = h.n_qubits
    out = np.empty(1 << n)
    for s in range(0, 1 << n, _CHUNK):
        e = min(s + _CHUNK, 1 << n)
        z = 1.0 - 2.0 * bit_matrix(s, e, n)
        out[s:e] = h.offset + z @ h.linear + np.einsum("ki,ki->k", z @ h.quadratic, z)
    return out


# -- sub-problem 1: channel selection -----------------------------------------

def _cochannel_interference(state: ChannelState, channels: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """``I[n, c]``: interference device ``n`` would see on channel ``c``."""
    n_dev, n_ch = state.legit_gain.shape
    out = np.zeros((n_dev, n_ch))
    for c in range(n_ch):
        on = (channels == c) & (powers > 0)
        if on.any():
            # sum_m h[m, n, c] p_m over co-channel m; h[n, n, c] is zero
            out[:, c] = powers[on] @ state.interf_gain[on, :, c]
    return out


def _own_sinr(state, channels, powers, interf):
    n = len(channels)
    on = channels >= 0
    idx = np.clip(channels, 0, None)
    sig = np.where(on, state.legit_gain[np.arange(n), idx] * powers, 0.0)
    i_own = np.where(on, interf[np.arange(n), idx], 0.0)
    return sig, i_own


def channel_rate_coefficients(
    state: ChannelState,
    powers: np.ndarray,
    bandwidth_hz: float,
    current_channels: np.ndarray | None = None,
    linearization: Linearization = "frozen",
) -> np.ndarray:
    """Linearised rate ``B h p / (ln2 (sigma^2 + I))`` for every (device, channel).

    ``I`` excludes the device itself and is evaluated at ``current_channels``.
    """
    n_dev, n_ch = state.legit_gain.shape
    powers = np.asarray(powers, dtype=float)
    ch = np.full(n_dev, -1) if current_channels is None else np.asarray(current_channels)
    # h[n, n, c] is zero, so I[n, c] never contains the device itself
    interf = _cochannel_interference(state, ch, powers)
    coef = bandwidth_hz * state.legit_gain * powers[:, None] / (math.log(2) * (state.noise_w + interf))
    if linearization == "frozen":
        return coef
    if linearization != "pricing":
        raise ValueError(f"unknown linearization {linearization!r}")
    sig, i_own = _own_sinr(state, ch, powers, interf)
    harm = np.zeros((n_dev, n_ch))
    for c in range(n_ch):
        victims = np.flatnonzero((ch == c) & (powers > 0))
        for m in victims:
            # victim m's interference with each candidate n taken out
            h_nm = state.interf_gain[:, m, c] * powers
            d = state.noise_w + i_own[m] - np.where(ch == c, h_nm, 0.0)
            harm[:, c] += sig[m] * h_nm / (d * (d + sig[m]))
    return coef - bandwidth_hz * harm / math.log(2)


def build_channel_qubo(
    state: ChannelState,
    powers: np.ndarray,
    penalties: PenaltyConfig = PenaltyConfig(),
    *,
    bandwidth_hz: float = 1e6,
    current_channels: np.ndarray | None = None,
    devices: Sequence[int] | None = None,
    linearization: Linearization = "frozen",
) -> QuboProblem:
    """Channel-selection QUBO with powers fixed.

    Variables are ``(n, c)`` for ``n`` in ``devices`` (default: all), laid out
    device-major. Devices outside the block only contribute interference.
    """
    n_dev, n_ch = state.legit_gain.shape
    devices = tuple(range(n_dev)) if devices is None else tuple(int(d) for d in devices)
    coef_all = channel_rate_coefficients(state, powers, bandwidth_hz, current_channels, linearization)
    coef = penalties.lambda_rate * coef_all[list(devices)].reshape(-1)
    lam1 = penalties.lambda_one_channel
    if lam1 is None:
        peak = float(np.abs(coef).max()) if coef.size else 0.0
        lam1 = penalties.auto_scale * peak if peak > 0 else 1.0

    nv = len(devices) * n_ch
    q = np.zeros((nv, nv))
    q[np.diag_indices(nv)] = -coef - lam1
    for k in range(len(devices)):
        base = k * n_ch
        for c in range(n_ch):
            for y in range(c + 1, n_ch):
                q[base + c, base + y] = 2.0 * lam1
    var_map = tuple((d, c) for d in devices for c in range(n_ch))
    return QuboProblem(q, lam1 * len(devices), var_map, "channel_selection", devices, n_ch, rate_coef=coef)


# -- sub-problem 2: power bits ---------------------------------------------------

def power_step(p_max_w: float, q_bits: int) -> float:
    return p_max_w / (2**q_bits - 1)


def power_rate_coefficients(
    state: ChannelState,
    channels: np.ndarray,
    current_powers: np.ndarray,
    bandwidth_hz: float,
    linearization: Linearization = "frozen",
) -> np.ndarray:
    """Rate gained per watt of own power, one value per device."""
    n_dev = state.legit_gain.shape[0]
    channels = np.asarray(channels)
    powers = np.asarray(current_powers, dtype=float)
    on = channels >= 0
    idx = np.clip(channels, 0, None)
    h_own = np.where(on, state.legit_gain[np.arange(n_dev), idx], 0.0)
    interf = _cochannel_interference(state, channels, powers)
    sig, i_own = _own_sinr(state, channels, powers, interf)
    scale = bandwidth_hz / math.log(2)
    if linearization == "frozen":
        return scale * h_own / (state.noise_w + i_own)
    if linearization != "pricing":
        raise ValueError(f"unknown linearization {linearization!r}")
    grad = h_own / (state.noise_w + i_own + sig)
    for m in np.flatnonzero(on & (powers > 0)):
        c = channels[m]
        d = state.noise_w + i_own[m]
        co = (channels == c) & on
        co[m] = False
        grad[co] -= sig[m] * state.interf_gain[co, m, c] / (d * (d + sig[m]))
    return scale * grad


def build_power_qubo(
    state: ChannelState,
    channels: np.ndarray,
    q_bits: int = 3,
    penalties: PenaltyConfig = PenaltyConfig(),
    *,
    p_max_w: float,
    bandwidth_hz: float = 1e6,
    current_powers: np.ndarray | None = None,
    devices: Sequence[int] | None = None,
    linearization: Linearization = "frozen",
) -> QuboProblem:
    """Power-allocation QUBO with channels fixed.

    Power is ``step * sum_i 2^i x_{n,i}`` with ``step = p_max / (2^q - 1)``,
    so ``p <= p_max`` holds for every bitstring. Interference denominators
    use ``current_powers`` (default: everybody at ``p_max``).

    ``lambda_min_power`` penalises ``(1 - x_top)(1 - x_top-1)``: the exact
    zero-power indicator for ``q_bits <= 2``, and a floor at a quarter of the
    range above that (an exact all-zero indicator is not quadratic).
    ``lambda_pmax`` adds ``(p / p_max - 1)^2``.
    """
    if q_bits < 1:
        raise ValueError("q_bits must be >= 1")
    if q_bits > MAX_POWER_BITS:
        raise ValueError(f"q_bits={q_bits} exceeds the {MAX_POWER_BITS}-bit budget")
    n_dev = state.legit_gain.shape[0]
    devices = tuple(range(n_dev)) if devices is None else tuple(int(d) for d in devices)
    if current_powers is None:
        current_powers = np.full(n_dev, p_max_w)
    step = power_step(p_max_w, q_bits)
    a = power_rate_coefficients(state, channels, current_powers, bandwidth_hz, linearization)
    weights = step * 2.0 ** np.arange(q_bits)

    nv = len(devices) * q_bits
    q = np.zeros((nv, nv))
    coef = penalties.lambda_rate * np.concatenate([a[d] * weights for d in devices]) if devices else np.zeros(0)
    q[np.diag_indices(nv)] = -coef
    offset = 0.0
    lam3, lam4 = penalties.lambda_min_power, penalties.lambda_pmax
    levels = 2**q_bits - 1
    for k in range(len(devices)):
        base = k * q_bits
        if lam3:
            if q_bits == 1:
                q[base, base] -= lam3
            else:
                i, j = base + q_bits - 2, base + q_bits - 1
                q[i, i] -= lam3
                q[j, j] -= lam3
                q[i, j] += lam3
            offset += lam3
        if lam4:
            # (k/levels - 1)^2 with k = sum 2^i x_i
            w = 2.0 ** np.arange(q_bits) / levels
            for i in range(q_bits):
                q[base + i, base + i] += lam4 * (w[i] ** 2 - 2.0 * w[i])
                for j in range(i + 1, q_bits):
                    q[base + i, base + j] += lam4 * 2.0 * w[i] * w[j]
            offset += lam4
    var_map = tuple((d, i) for d in devices for i in range(q_bits))
    return QuboProblem(q, offset, var_map, "power_allocation", devices, 0, q_bits, step, rate_coef=coef)


# -- decoding ------------------------------------------------------------------

def decode_solution(p: QuboProblem, x) -> Fragment:
    x = _as_bits(p.n_vars, x)
    nd = len(p.devices)
    if p.kind == "channel_selection":
        rows = x.reshape(nd, p.n_channels) if nd else x.reshape(0, 0)
        picks = rows.sum(axis=1)
        channel_of = np.where(picks == 1, rows.argmax(axis=1), -1)
        bad = tuple(p.devices[k] for k in np.flatnonzero(picks > 1))
        return Fragment(p.devices, channel_of=channel_of, infeasible=bad)
    if p.kind == "power_allocation":
        rows = x.reshape(nd, p.q_bits)
        levels = rows @ (2 ** np.arange(p.q_bits))
        return Fragment(p.devices, power_w=p.step_w * levels.astype(float))
    raise ValueError(f"unknown QUBO kind {p.kind!r}")


def one_hot_feasible(p: QuboProblem):
    """Predicate: each device in a channel QUBO picks at most one channel."""
    if p.kind != "channel_selection":
        return None
    nd, c = len(p.devices), p.n_channels

    def ok(x) -> bool:
        return bool(np.all(np.asarray(x).reshape(nd, c).sum(axis=1) <= 1))

    return ok


# -- sparse triplet export -------------------------------------------------------

def write_qubo_triplets(p: QuboProblem, path: str | Path) -> Path:
    """Text format: a header comment, ``i j value`` per nonzero, ``offset v`` last."""
    path = Path(path)
    i, j = np.nonzero(p.q_upper)
    with open(path, "w") as fh:
        fh.write(f"# schema=qubo-triplets/v{TRIPLET_VERSION} kind={p.kind} n_vars={p.n_vars}\n")
        for a, b in zip(i, j):
            fh.write(f"{a} {b} {float(p.q_upper[a, b])!r}\n")
        fh.write(f"offset {p.offset!r}\n")
    return path


def read_qubo_triplets(path: str | Path) -> QuboProblem:
    path = Path(path)
    lines = path.read_text().splitlines()
    head = lines[0].split()
    meta = dict(tok.split("=", 1) for tok in head if "=" in tok)
    if meta.get("schema") != f"qubo-triplets/v{TRIPLET_VERSION}":
        raise ValueError(f"{path}: not a v{TRIPLET_VERSION} QUBO triplet file")
    n = int(meta["n_vars"])
    q = np.zeros((n, n))
    offset = 0.0
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "offset":
            offset = float(parts[1])
        else:
            q[int(parts[0]), int(parts[1])] = float(parts[2])
    return QuboProblem(q, offset, tuple(range(n)), meta.get("kind", "channel_selection"))
