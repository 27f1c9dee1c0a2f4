"""Classical comparison solvers: brute-force oracles, greedy channels, SCA powers."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .qaoa import ResourceError
from .qubo import QuboProblem, index_to_bits, qubo_energies, qubo_energy
from .scenario import AllocationState, ChannelState, NetworkScenario, sum_rate

MAX_QUBO_VARS = 22
MAX_ALLOCATION_CASES = 10**7


@dataclass
class BruteForceReport:
    best_value: float
    evaluated: int
    best_bits: np.ndarray | None = None
    best_alloc: AllocationState | None = None


def brute_force_qubo(p: QuboProblem) -> BruteForceReport:
    """Exact argmin by enumeration; ties go to the lowest bitstring index."""
    if p.n_vars > MAX_QUBO_VARS:
        raise ResourceError(f"{p.n_vars} variables exceeds the {MAX_QUBO_VARS}-variable enumeration budget")
    e = qubo_energies(p)
    k = int(np.argmin(e))
    bits = index_to_bits(k, p.n_vars)
    return BruteForceReport(qubo_energy(p, bits), len(e), best_bits=bits)


def default_power_levels(p_max_w: float) -> np.ndarray:
    """Zero plus eight log-spaced levels ``p_max * 2^-7 .. p_max``."""
    return np.concatenate([[0.0], p_max_w * 2.0 ** np.arange(-7, 1)])


def brute_force_allocation(
    scn: NetworkScenario,
    state: ChannelState,
    power_levels=None,
) -> BruteForceReport:
    """Maximise the true sum-rate over every (channel or silent, power level) per device."""
    n, c = scn.n_devices, scn.n_channels
    levels = default_power_levels(scn.p_max_w) if power_levels is None else np.asarray(power_levels, float)
    cases = (c + 1) ** n * len(levels) ** n
    if cases > MAX_ALLOCATION_CASES:
        raise ResourceError(f"{cases} cases exceeds the {MAX_ALLOCATION_CASES} enumeration budget")

    grid = np.array(list(itertools.product(levels, repeat=n))) if n else np.zeros((1, 0))
    bw, noise = scn.bandwidth_hz, state.noise_w
    best_v, best_ch, best_p = -math.inf, None, None
    evaluated = 0
    for ch in itertools.product(range(-1, c), repeat=n):
        ch = np.array(ch)
        on = ch >= 0
        idx = np.clip(ch, 0, None)
        h_own = np.where(on, state.legit_gain[np.arange(n), idx], 0.0)
        cross = state.interf_gain[:, np.arange(n), idx]
        same = (ch[:, None] == ch[None, :]) & on[:, None] & on[None, :]
        np.fill_diagonal(same, False)
        g = np.where(same, cross, 0.0)
        sig = grid * h_own
        values = bw * np.log2(1.0 + sig / (noise + grid @ g)).sum(axis=1)
        evaluated += len(values)
        k = int(np.argmax(values))
        if values[k] > best_v:
            best_v, best_ch, best_p = float(values[k]), ch, grid[k]
    alloc = AllocationState(best_ch, best_p).normalized()
    return BruteForceReport(sum_rate(alloc, state, bw), evaluated, best_alloc=alloc)


def greedy_allocation(scn: NetworkScenario, state: ChannelState) -> AllocationState:
    """Strongest devices first; each takes the channel with the largest sum-rate gain at ``p_max``."""
    n, c = scn.n_devices, scn.n_channels
    pmax, noise = scn.p_max_w, state.noise_w
    h, hi = state.legit_gain, state.interf_gain
    order = np.argsort(-h.max(axis=1), kind="stable")
    ch = np.full(n, -1)
    power = np.zeros(n)
    interf = np.zeros(n)  # interference currently seen by placed devices
    for dev in order:
        best_gain, best_c = -math.inf, 0
        for cc in range(c):
            members = np.flatnonzero(ch == cc)
            own = math.log2(1.0 + h[dev, cc] * pmax / (noise + float(hi[members, dev, cc] @ power[members])))
            if members.size:
                before = np.log2(1.0 + h[members, cc] * power[members] / (noise + interf[members]))
                after = np.log2(1.0 + h[members, cc] * power[members] / (noise + interf[members] + hi[dev, members, cc] * pmax))
                own -= float((before - after).sum())
            if own > best_gain:
                best_gain, best_c = own, cc
        members = np.flatnonzero(ch == best_c)
        interf[members] += hi[dev, members, best_c] * pmax
        interf[dev] = float(hi[members, dev, best_c] @ power[members])
        ch[dev], power[dev] = best_c, pmax
    return AllocationState(ch, power)


@dataclass
class ScaResult:
    powers: np.ndarray
    surrogate_trace: list = field(default_factory=list)
    sum_rate_trace: list = field(default_factory=list)
    power_trace: list = field(default_factory=list)
    rounds: int = 0


def _coupling(state: ChannelState, channels: np.ndarray) -> np.ndarray:
    """``A[n, m]``: gain of device m's power in device n's received total (own link on the diagonal)."""
    n = len(channels)
    on = channels >= 0
    idx = np.clip(channels, 0, None)
    a = state.interf_gain[:, np.arange(n), idx].T.copy()  # a[n, m] = h[m, n, c_n]
    same = (channels[:, None] == channels[None, :]) & on[:, None] & on[None, :]
    a = np.where(same, a, 0.0)
    a[np.arange(n), np.arange(n)] = np.where(on, state.legit_gain[np.arange(n), idx], 0.0)
    return a


def _surrogate(a, p, noise, i_ref, on):
    """Concave minorant of the sum-rate (nats) tight at the reference interference ``i_ref``."""
    diag = np.diag(a)
    total = a @ p
    interf = total - diag * p
    v = np.log(noise + total) - np.log(noise + i_ref) - (interf - i_ref) / (noise + i_ref)
    return float(v[on].sum())


def sca_power_allocation(
    scn: NetworkScenario,
    state: ChannelState,
    channels,
    iters: int = 20,
    p_init=None,
    inner_sweeps: int = 50,
    tol: float = 1e-9,
) -> ScaResult:
    """SCA on powers with channels fixed.

    Each round linearises the convex ``-log(noise + interference)`` part of
    every rate at the current powers, which gives a concave lower bound of
    the sum-rate that is tight there. The bound is maximised by cyclic
    single-device updates, each solved by bisection on its decreasing
    derivative over ``(0, p_max]``.
    """
    channels = np.asarray(channels)
    n = len(channels)
    on = channels >= 0
    pmax, noise, bw = scn.p_max_w, state.noise_w, scn.bandwidth_hz
    lo = pmax * 1e-6
    p = np.where(on, pmax / 2.0, 0.0) if p_init is None else np.where(on, np.asarray(p_init, float), 0.0)
    a = _coupling(state, channels)
    diag = np.diag(a)
    scale = bw / math.log(2)

    res = ScaResult(p.copy())
    res.sum_rate_trace.append(sum_rate(AllocationState(np.where(on, channels, -1), p), state, bw))
    for _ in range(iters):
        i_ref = a @ p - diag * p
        # the linearised term contributes a constant slope against p_k
        price = (a * (1.0 / (noise + i_ref))[:, None]).sum(axis=0) - diag / (noise + i_ref)
        price = np.where(on, price, 0.0)
        p_old = p.copy()
        for _ in range(inner_sweeps):
            moved = 0.0
            for k in np.flatnonzero(on):
                rows = np.flatnonzero(a[:, k] > 0)
                rest = noise + a[rows] @ p - a[rows, k] * p[k]
                coef = a[rows, k]

                def slope(x):
                    return float((coef / (rest + coef * x)).sum()) - price[k]

                if slope(pmax) >= 0:
                    x = pmax
                elif slope(lo) <= 0:
                    x = lo
                else:
                    left, right = lo, pmax
                    for _ in range(80):
                        mid = 0.5 * (left + right)
                        if slope(mid) > 0:
                            left = mid
                        else:
                            right = mid
                    x = 0.5 * (left + right)
                moved = max(moved, abs(x - p[k]))
                p[k] = x
            if moved <= tol * pmax:
                break
        res.rounds += 1
        res.surrogate_trace.append(scale * _surrogate(a, p, noise, i_ref, on))
        res.sum_rate_trace.append(sum_rate(AllocationState(np.where(on, channels, -1), p), state, bw))
        res.power_trace.append(p.copy())
        if np.max(np.abs(p - p_old), initial=0.0) <= tol * pmax:
            break
    res.powers = p
    return res
