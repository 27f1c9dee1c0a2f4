"""INI experiment configs and scenario presets.

Precedence, lowest first: dataclass defaults, preset, config file, CLI flags.
Unknown sections or keys are errors so typos never pass silently.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .orchestrator import BcdOptions, LatencyModel
from .qaoa import QaoaConfig
from .qfl import FedConfig
from .qubo import PenaltyConfig
from .scenario import ConfigError, ScenarioConfig

PRESETS = {
    "paper-small": {"n_devices": 50, "n_channels": 4},
    "paper-mid": {"n_devices": 200, "n_channels": 4},
    "paper-large": {"n_devices": 500, "n_channels": 4},
    "toy": {"n_devices": 6, "n_channels": 3},
}
DEFAULT_SHOTS = (1.0, 40.0, 100.0)
DEFAULT_SPLITS = ("iid", "non_iid")
_NESTED = {"penalties", "qaoa", "latency"}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = ScenarioConfig()
    bcd: BcdOptions = BcdOptions()
    qfl: FedConfig = FedConfig()
    qfl_shots: tuple = DEFAULT_SHOTS
    qfl_splits: tuple = DEFAULT_SPLITS
    block: int = 0  # fading block the allocation is solved for

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(
            self,
            scenario=replace(self.scenario, seed=seed),
            bcd=replace(self.bcd, seed=seed, qaoa=replace(self.bcd.qaoa, seed=seed)),
            qfl=replace(self.qfl, seed=seed),
        )

    def digest(self, *parts: str) -> str:
        """Hash of the scenario plus whichever option groups a command depends on."""
        text = "|".join((self.scenario.digest(), f"block={self.block}") + parts)
        return hashlib.sha256(text.encode()).hexdigest()[:10]


def parse_shots(text: str) -> tuple:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        v = math.inf if tok in ("inf", "exact") else float(tok)
        if not v >= 1:
            raise ConfigError(f"shot count must be >= 1, got {tok!r}")
        out.append(v)
    if not out:
        raise ConfigError("empty shot list")
    return tuple(out)


def _coerce(name: str, text: str, default):
    text = text.strip()
    try:
        if name == "block_size":
            return None if text.lower() in ("none", "all") else int(text)
        if name == "local_iters" and "," in text:
            return tuple(int(t) for t in text.split(","))
        if name == "shots" and text.lower() in ("inf", "exact"):
            return math.inf
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return None if text.lower() == "none" else float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def _apply(obj, section: dict, where: str, skip=()):
    known = {f.name: getattr(obj, f.name) for f in fields(obj) if f.name not in skip}
    kw = {}
    for k, v in section.items():
        if k not in known:
            raise ConfigError(f"unknown key {k!r} in [{where}]")
        kw[k] = _coerce(k, v, known[k])
    try:
        return replace(obj, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def load_config(path: str | Path | None = None, preset: str | None = None) -> ExperimentConfig:
    """Parse everything up front; raise :class:`ConfigError` on any problem."""
    scn = ScenarioConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        scn = replace(scn, **PRESETS[preset])
    exp = ExperimentConfig(scenario=scn)
    if path is None:
        return exp
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    allowed = {"scenario", "bcd", "penalties", "qaoa", "latency", "qfl", "run"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown section(s) {sorted(extra)} in {path}")

    def sec(name):
        return dict(cp[name]) if cp.has_section(name) else {}

    scn = _apply(exp.scenario, sec("scenario"), "scenario")
    bcd = _apply(exp.bcd, sec("bcd"), "bcd", skip=_NESTED)
    bcd = replace(
        bcd,
        penalties=_apply(PenaltyConfig(), sec("penalties"), "penalties"),
        qaoa=_apply(QaoaConfig(), sec("qaoa"), "qaoa"),
        latency=_apply(LatencyModel(), sec("latency"), "latency"),
    )
    q = sec("qfl")
    shots = parse_shots(q.pop("shots")) if "shots" in q else DEFAULT_SHOTS
    splits = DEFAULT_SPLITS
    if "splits" in q:
        splits = tuple(s.strip() for s in q.pop("splits").split(",") if s.strip())
        bad = set(splits) - set(DEFAULT_SPLITS)
        if bad or not splits:
            raise ConfigError(f"bad splits {sorted(bad) or splits}")
    qfl = _apply(exp.qfl, q, "qfl")
    run = sec("run")
    block = 0
    for k, v in run.items():
        if k != "block":
            raise ConfigError(f"unknown key {k!r} in [run]")
        block = _coerce(k, v, 0)
        if block < 0:
            raise ConfigError("block must be >= 0")
    return ExperimentConfig(scn, bcd, qfl, shots, splits, block)
