"""Uplink multi-channel NOMA scenario: geometry, correlated fading, SINR and rates.

Powers are linear watts everywhere inside the package; dBm appears only in
:class:`ScenarioConfig`. Interference gains are indexed ``[m, n, c]``: the
gain of interferer ``m`` on the link of device ``n`` over channel ``c``.
"""
from __future__ import annotations

import ast
import csv
import hashlib
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .seeding import stream

SNAPSHOT_VERSION = 1


class ConfigError(ValueError):
    pass


def dbm_to_watts(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watts_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    n_devices: int = 50
    n_channels: int = 4
    cell_radius: float = 500.0
    pathloss_exponent: float = 3.5
    ref_loss_db: float = 30.0
    shadowing_sigma_db: float = 8.0
    epsilon: float = 0.6
    noise_dbm: float = -114.0
    bandwidth_hz: float = 1e6
    p_max_dbm: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.n_devices < 1:
            raise ConfigError(f"n_devices must be >= 1, got {self.n_devices}")
        if self.n_channels < 1:
            raise ConfigError(f"n_channels must be >= 1, got {self.n_channels}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if not self.bandwidth_hz > 0:
            raise ConfigError(f"bandwidth_hz must be positive, got {self.bandwidth_hz}")
        if not self.cell_radius > 0:
            raise ConfigError(f"cell_radius must be positive, got {self.cell_radius}")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("shadowing_sigma_db must be non-negative")

    @property
    def noise_w(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    @property
    def p_max_w(self) -> float:
        return dbm_to_watts(self.p_max_dbm)

    def digest(self) -> str:
        """Short stable hash of every field, used to key output files."""
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:10]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class NetworkScenario:
    """Large-scale part of the network, fixed for a run."""

    cfg: ScenarioConfig
    positions: np.ndarray  # (N, 2) metres, BS at the origin
    legit_large: np.ndarray  # (N, C) path loss x shadowing
    interf_large: np.ndarray  # (N, N, C), zero diagonal

    @property
    def n_devices(self) -> int:
        return self.cfg.n_devices

    @property
    def n_channels(self) -> int:
        return self.cfg.n_channels

    @property
    def noise_w(self) -> float:
        return self.cfg.noise_w

    @property
    def p_max_w(self) -> float:
        return self.cfg.p_max_w

    @property
    def bandwidth_hz(self) -> float:
        return self.cfg.bandwidth_hz

    @property
    def distances(self) -> np.ndarray:
        return np.hypot(self.positions[:, 0], self.positions[:, 1])


@dataclass(frozen=True, eq=False)
class ChannelState:
    """Channel realisation for one time block."""

    block_index: int
    legit_gain: np.ndarray  # (N, C)
    interf_gain: np.ndarray  # (N, N, C)
    fading: np.ndarray  # (N, C) complex
    fading_interf: np.ndarray  # (N, N, C) complex
    legit_large: np.ndarray
    interf_large: np.ndarray
    noise_w: float
    seed: int

    @property
    def n_devices(self) -> int:
        return self.legit_gain.shape[0]

    @property
    def n_channels(self) -> int:
        return self.legit_gain.shape[1]


def _pathloss(cfg: ScenarioConfig, d: np.ndarray) -> np.ndarray:
    loss_db = cfg.ref_loss_db + 10.0 * cfg.pathloss_exponent * np.log10(np.maximum(d, 1.0))
    return 10.0 ** (-loss_db / 10.0)


def _cn01(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _state(block, fading, fading_interf, legit_large, interf_large, noise_w, seed) -> ChannelState:
    return ChannelState(
        block_index=block,
        legit_gain=_readonly(legit_large * np.abs(fading)),
        interf_gain=_readonly(interf_large * np.abs(fading_interf)),
        fading=_readonly(fading),
        fading_interf=_readonly(fading_interf),
        legit_large=legit_large,
        interf_large=interf_large,
        noise_w=noise_w,
        seed=seed,
    )


def initial_state(scn: NetworkScenario) -> ChannelState:
    """Block-0 fading, drawn from the run seed's ``fading`` stream."""
    n, c = scn.n_devices, scn.n_channels
    rng = stream(scn.cfg.seed, "fading", 0)
    g = _cn01(rng, (n, c))
    gi = _cn01(rng, (n, n, c))
    gi[np.arange(n), np.arange(n), :] = 0.0
    return _state(0, g, gi, scn.legit_large, scn.interf_large, scn.noise_w, scn.cfg.seed)


def generate_scenario(cfg: ScenarioConfig) -> tuple[NetworkScenario, ChannelState]:
    n, c = cfg.n_devices, cfg.n_channels
    rng = stream(cfg.seed, "positions")
    r = cfg.cell_radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pos = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    pl = _pathloss(cfg, np.hypot(pos[:, 0], pos[:, 1]))

    rng = stream(cfg.seed, "shadowing")
    shadow = 10.0 ** (cfg.shadowing_sigma_db * rng.standard_normal((n, c)) / 10.0)
    shadow_i = 10.0 ** (cfg.shadowing_sigma_db * rng.standard_normal((n, n, c)) / 10.0)

    legit_large = pl[:, None] * shadow
    # interferer m reaches the BS over its own path, so the loss follows d_m
    interf_large = pl[:, None, None] * shadow_i
    interf_large[np.arange(n), np.arange(n), :] = 0.0

    scn = NetworkScenario(cfg, _readonly(pos), _readonly(legit_large), _readonly(interf_large))
    return scn, initial_state(scn)


def advance_fading(state: ChannelState, epsilon: float, rng: np.random.Generator | None = None) -> ChannelState:
    """One Jakes step ``g <- eps*g + sqrt(1-eps^2)*delta`` on every coefficient.

    Without ``rng`` the innovation comes from the run seed's stream for the
    next block index, so trajectories replay exactly.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    b = state.block_index + 1
    if rng is None:
        rng = stream(state.seed, "fading", b)
    n, c = state.fading.shape
    s = math.sqrt(1.0 - epsilon**2)
    g = epsilon * state.fading + s * _cn01(rng, (n, c))
    gi = epsilon * state.fading_interf + s * _cn01(rng, (n, n, c))
    gi[np.arange(n), np.arange(n), :] = 0.0
    return _state(b, g, gi, state.legit_large, state.interf_large, state.noise_w, state.seed)


def jakes_trajectory(epsilon: float, n_blocks: int, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Scalar fading trajectories of shape ``(n_blocks, size)``; used for statistics."""
    out = _cn01(rng, (n_blocks, size))
    out[1:] *= math.sqrt(1.0 - epsilon**2)
    for b in range(1, n_blocks):
        out[b] += epsilon * out[b - 1]
    return out


@dataclass(frozen=True, eq=False)
class AllocationState:
    """Channel choice (``-1`` = silent) and transmit power per device."""

    channel_of: np.ndarray
    power_w: np.ndarray

    def __post_init__(self):
        ch = np.asarray(self.channel_of, dtype=np.int64).copy()
        pw = np.asarray(self.power_w, dtype=float).copy()
        if ch.shape != pw.shape or ch.ndim != 1:
            raise ValueError("channel_of and power_w must be 1-D and the same length")
        object.__setattr__(self, "channel_of", _readonly(ch))
        object.__setattr__(self, "power_w", _readonly(pw))

    @classmethod
    def empty(cls, n: int) -> "AllocationState":
        return cls(np.full(n, -1), np.zeros(n))

    @property
    def n_devices(self) -> int:
        return len(self.channel_of)

    def zeta(self, n_channels: int) -> np.ndarray:
        z = np.zeros((self.n_devices, n_channels), dtype=np.int8)
        on = self.channel_of >= 0
        z[np.flatnonzero(on), self.channel_of[on]] = 1
        return z

    def normalized(self) -> "AllocationState":
        """Silent devices get power 0 and zero-power devices drop their channel.

        Neither change alters any rate, so the sum-rate is preserved.
        """
        active = (self.channel_of >= 0) & (self.power_w > 0)
        return AllocationState(np.where(active, self.channel_of, -1), np.where(active, self.power_w, 0.0))

    def is_feasible(self, n_channels: int, p_max_w: float, rtol: float = 1e-12) -> bool:
        ch, p = self.channel_of, self.power_w
        if np.any(ch < -1) or np.any(ch >= n_channels):
            return False
        if np.any(p < 0) or np.any(p > p_max_w * (1 + rtol)):
            return False
        # a device that transmits must hold a channel, and vice versa
        return bool(np.all((ch >= 0) == (p > 0)))

    def with_device(self, n: int, channel: int | None = None, power: float | None = None) -> "AllocationState":
        ch, p = self.channel_of.copy(), self.power_w.copy()
        if channel is not None:
            ch[n] = channel
        if power is not None:
            p[n] = power
        return AllocationState(ch, p)

    def same_as(self, other: "AllocationState") -> bool:
        return np.array_equal(self.channel_of, other.channel_of) and np.array_equal(self.power_w, other.power_w)


def _interference(alloc: AllocationState, state: ChannelState) -> np.ndarray:
    ch, p = alloc.channel_of, alloc.power_w
    n = len(ch)
    on = ch >= 0
    same = (ch[:, None] == ch[None, :]) & on[:, None] & on[None, :]
    np.fill_diagonal(same, False)
    # h[m, n, ch[n]] for every pair
    hmn = state.interf_gain[:, np.arange(n), np.clip(ch, 0, None)]
    return np.where(same, hmn * p[:, None], 0.0).sum(axis=0)


def sinr_vector(alloc: AllocationState, state: ChannelState) -> np.ndarray:
    """SINR of every device on its own channel (0 for silent devices)."""
    ch, p = alloc.channel_of, alloc.power_w
    on = ch >= 0
    sig = np.where(on, state.legit_gain[np.arange(len(ch)), np.clip(ch, 0, None)] * p, 0.0)
    return sig / (state.noise_w + _interference(alloc, state))


def sinr(alloc: AllocationState, state: ChannelState, n: int, c: int) -> float:
    if alloc.channel_of[n] != c:
        return 0.0
    interf = 0.0
    for m in range(alloc.n_devices):
        if m != n and alloc.channel_of[m] == c:
            interf += state.interf_gain[m, n, c] * alloc.power_w[m]
    return float(state.legit_gain[n, c] * alloc.power_w[n] / (state.noise_w + interf))


def rate(alloc: AllocationState, state: ChannelState, n: int, c: int, bandwidth_hz: float) -> float:
    if not bandwidth_hz > 0:
        raise ValueError("bandwidth must be positive")
    return bandwidth_hz * math.log2(1.0 + sinr(alloc, state, n, c))


def device_rates(alloc: AllocationState, state: ChannelState, bandwidth_hz: float) -> np.ndarray:
    return bandwidth_hz * np.log2(1.0 + sinr_vector(alloc, state))


def sum_rate(alloc: AllocationState, state: ChannelState, bandwidth_hz: float) -> float:
    return float(device_rates(alloc, state, bandwidth_hz).sum())


# -- snapshots ---------------------------------------------------------------

def write_snapshot(scn: NetworkScenario, path: str | Path) -> Path:
    """Write positions, large-scale gains and the full config (incl. seed).

    Floats are written with ``repr`` so a read-back is bit-exact.
    """
    path = Path(path)
    n, c = scn.n_devices, scn.n_channels
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w", newline="") as fh:
        fh.write(f"# schema=scenario-snapshot/v{SNAPSHOT_VERSION}\n")
        for k, v in asdict(scn.cfg).items():
            fh.write(f"# {k}={v!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "n", "m", "c", "value"])
        for i in range(n):
            w.writerow(["pos_x", i, "", "", repr(float(scn.positions[i, 0]))])
            w.writerow(["pos_y", i, "", "", repr(float(scn.positions[i, 1]))])
        for i in range(n):
            for ch in range(c):
                w.writerow(["legit_large", i, "", ch, repr(float(scn.legit_large[i, ch]))])
        for m in range(n):
            for i in range(n):
                if m == i:
                    continue
                for ch in range(c):
                    w.writerow(["interf_large", i, m, ch, repr(float(scn.interf_large[m, i, ch]))])
    tmp.replace(path)
    return path


def read_snapshot(path: str | Path) -> tuple[NetworkScenario, ChannelState]:
    path = Path(path)
    kw = {}
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema=scenario-snapshot/v"):
            raise ConfigError(f"{path}: not a scenario snapshot")
        version = int(first.rstrip().rsplit("v", 1)[1])
        if version != SNAPSHOT_VERSION:
            raise ConfigError(f"{path}: unsupported snapshot version {version}")
        rows = []
        for line in fh:
            if line.startswith("# "):
                k, v = line[2:].rstrip("\n").split("=", 1)
                kw[k] = ast.literal_eval(v)
            else:
                rows.append(line)
    cfg = ScenarioConfig(**kw)
    n, c = cfg.n_devices, cfg.n_channels
    pos = np.zeros((n, 2))
    legit = np.zeros((n, c))
    interf = np.zeros((n, n, c))
    for rec in csv.DictReader(rows):
        kind, v = rec["kind"], float(rec["value"])
        i = int(rec["n"])
        if kind == "pos_x":
            pos[i, 0] = v
        elif kind == "pos_y":
            pos[i, 1] = v
        elif kind == "legit_large":
            legit[i, int(rec["c"])] = v
        elif kind == "interf_large":
            interf[int(rec["m"]), i, int(rec["c"])] = v
        else:
            raise ConfigError(f"{path}: unknown row kind {kind!r}")
    scn = NetworkScenario(cfg, _readonly(pos), _readonly(legit), _readonly(interf))
    return scn, initial_state(scn)


def state_at_block(scn: NetworkScenario, block: int) -> ChannelState:
    """Channel state after ``block`` Jakes steps from block 0."""
    st = initial_state(scn)
    for _ in range(block):
        st = advance_fading(st, scn.cfg.epsilon)
    return st
