"""Scenario configuration.

Every tunable lives in one frozen :class:`ScenarioConfig` made of per-section
dataclasses. On disk a scenario is a TOML file of flat namespaced keys::

    env.num_ues = 4
    channel.noise_psd_dbm_hz = -174

Unknown keys are rejected. Power values are given in dBm in files and
converted to watts once, when the config is built.
"""
from __future__ import annotations

import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration values."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0 - 3.0)


def watt_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


@dataclass(frozen=True)
class ChannelConfig:
    carrier_hz: float = 6e9
    pl0_db: float = 46.0
    pl_ref_m: float = 1.0
    pl_exponent: float = 3.0
    min_distance_m: float = 1.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 0.0
    subband_hz: float = 1e5
    noise_psd_w_hz: float = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "noise_psd_w_hz", dbm_to_watt(self.noise_psd_dbm_hz + self.noise_figure_db))
        if self.carrier_hz <= 0:
            raise ConfigError("channel.carrier_hz must be positive")
        if self.pl_exponent <= 0:
            raise ConfigError("channel.pl_exponent must be positive")
        if self.pl_ref_m <= 0 or self.min_distance_m <= 0:
            raise ConfigError("channel.pl_ref_m and channel.min_distance_m must be positive")
        if self.subband_hz <= 0:
            raise ConfigError("channel.subband_hz must be positive")


@dataclass(frozen=True)
class SemanticConfig:
    table_path: str = ""  # empty: packaged logistic surrogate table
    k: int = 15
    avg_semantic_units: float = 30.0
    avg_words: float = 20.0
    eps_min: float = 0.7

    def __post_init__(self):
        if self.avg_semantic_units <= 0 or self.avg_words <= 0 or self.k <= 0:
            raise ConfigError("semantics.k, avg_semantic_units and avg_words must be positive")
        if not 0.0 <= self.eps_min <= 1.0:
            raise ConfigError("semantics.eps_min must lie in [0, 1]")


@dataclass(frozen=True)
class EnvConfig:
    num_ues: int = 4
    area_m: float = 500.0
    queue_len: int = 10
    flops_per_sentence: float = 2.2e10
    decode_cost_ratio: float = 2.0
    tau_max_s: float = 0.05
    max_steps: int = 40
    battery_j: float = 0.2
    p_min_dbm: float = 15.0
    p_max_dbm: float = 24.0
    f_min_hz: float = 0.96e9
    f_max_hz: float = 1.72e9
    f_idle_hz: float = 0.0
    n_local: float = 1024.0
    n_remote: float = 8192.0
    f_remote_hz: float = 0.96e9
    alpha: float = 1e-28
    beta: float = 1e-28
    t_dl_s: float = 1e-4
    xi_step: float = 1.0
    xi_terminal: float = 1.0
    energy_reward_scale: float = 1e3
    l_ref_flop: float = 1e11
    tau_ref_s: float = 0.1
    p_min_w: float = field(init=False, repr=False)
    p_max_w: float = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "p_min_w", dbm_to_watt(self.p_min_dbm))
        object.__setattr__(self, "p_max_w", dbm_to_watt(self.p_max_dbm))
        if self.num_ues < 1:
            raise ConfigError("env.num_ues must be >= 1")
        if self.queue_len < 0 or self.max_steps < 1:
            raise ConfigError("env.queue_len must be >= 0 and env.max_steps >= 1")
        if self.p_min_dbm > self.p_max_dbm:
            raise ConfigError("env.p_min_dbm exceeds env.p_max_dbm")
        if not 0 < self.f_min_hz <= self.f_max_hz:
            raise ConfigError("env.f_min_hz/f_max_hz must satisfy 0 < f_min <= f_max")
        for name in ("flops_per_sentence", "decode_cost_ratio", "tau_max_s", "battery_j",
                     "n_local", "n_remote", "f_remote_hz", "area_m", "l_ref_flop", "tau_ref_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"env.{name} must be positive")
        if self.alpha < 0 or self.beta < 0 or self.t_dl_s < 0 or self.f_idle_hz < 0:
            raise ConfigError("env.alpha, env.beta, env.t_dl_s, env.f_idle_hz must be non-negative")

    @property
    def sentence_flops(self) -> float:
        """Compute load of one sentence (encoder cost times decode ratio)."""
        return self.flops_per_sentence * self.decode_cost_ratio


@dataclass(frozen=True)
class PPOConfig:
    episodes: int = 1000
    lr: float = 5e-7
    gamma: float = 0.95
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    c1: float = 0.5
    c2: float = 0.01
    hidden: tuple = (64, 64)
    normalize_adv: bool = True
    fed_period: int = 100
    average_critic: bool = True
    reset_optimizer: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("ppo.gamma must lie in (0, 1)")
        if not 0.0 < self.lam <= 1.0:
            raise ConfigError("ppo.lam must lie in (0, 1]")
        if self.clip <= 0 or self.lr <= 0:
            raise ConfigError("ppo.clip and ppo.lr must be positive")
        if self.epochs < 1 or self.minibatch < 1 or self.fed_period < 1 or self.episodes < 0:
            raise ConfigError("ppo.epochs, ppo.minibatch, ppo.fed_period must be >= 1")


@dataclass(frozen=True)
class DQNConfig:
    episodes: int = 1000
    lr: float = 0.0  # 0 means: reuse ppo.lr
    gamma: float = 0.95
    buffer: int = 10_000
    batch: int = 64
    target_sync: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 2000
    hidden: tuple = (64, 64)
    warmup: int = 64

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.buffer < 1 or self.batch < 1 or self.target_sync < 1:
            raise ConfigError("dqn.buffer, dqn.batch, dqn.target_sync must be >= 1")


@dataclass(frozen=True)
class BaselineConfig:
    power_levels: int = 4
    freq_levels: int = 4
    max_combinations: int = 1_000_000

    def __post_init__(self):
        if self.power_levels < 1 or self.freq_levels < 1:
            raise ConfigError("baselines.power_levels and freq_levels must be >= 1")


_SECTIONS = {
    "channel": ChannelConfig,
    "semantics": SemanticConfig,
    "env": EnvConfig,
    "ppo": PPOConfig,
    "dqn": DQNConfig,
    "baselines": BaselineConfig,
}

PROFILES: dict[str, dict[str, Any]] = {
    "paper": {},
    # faster-converging alternative to the very small default learning rate
    "fast": {"ppo.lr": 3e-4, "ppo.episodes": 300, "dqn.lr": 3e-4, "dqn.episodes": 300},
}


@dataclass(frozen=True)
class ScenarioConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    semantics: SemanticConfig = field(default_factory=SemanticConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    dqn: DQNConfig = field(default_factory=DQNConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)

    @property
    def dqn_lr(self) -> float:
        return self.dqn.lr if self.dqn.lr > 0 else self.ppo.lr

    def replace(self, **flat: Any) -> "ScenarioConfig":
        """Return a copy with dotted keys overridden, e.g. ``replace(**{"env.num_ues": 2})``."""
        return from_flat(flat, base=self)

    def to_flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in _SECTIONS:
            section = getattr(self, name)
            for f in dataclasses.fields(section):
                if f.init:
                    value = getattr(section, f.name)
                    out[f"{name}.{f.name}"] = list(value) if isinstance(value, tuple) else value
        return out


def known_keys() -> list[str]:
    return [f"{name}.{f.name}" for name, cls in _SECTIONS.items()
            for f in dataclasses.fields(cls) if f.init]


def _coerce(key: str, value: Any, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            as_float = float(value)
            if as_float != int(as_float):
                raise ValueError(value)
            return int(as_float)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return tuple(int(v) for v in value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {type(default).__name__}") from None


def from_flat(flat: Mapping[str, Any], base: ScenarioConfig | None = None) -> ScenarioConfig:
    base = base or ScenarioConfig()
    grouped: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        fields = {f.name: f for f in dataclasses.fields(_SECTIONS[section]) if f.init}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        default = getattr(getattr(base, section), name)
        grouped[section][name] = _coerce(key, value, default)
    sections = {}
    for name, overrides in grouped.items():
        current = getattr(base, name)
        try:
            sections[name] = dataclasses.replace(current, **overrides) if overrides else current
        except ConfigError as exc:
            raise ConfigError(str(exc)) from None
    return ScenarioConfig(**sections)


def _flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in tree.items():
        full = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(_flatten(value, full + "."))
        else:
            out[full] = value
    return out


def load_config(path: str | Path | None = None, profile: str | None = None,
                overrides: Mapping[str, Any] | None = None) -> ScenarioConfig:
    """Build a config with precedence overrides > file > profile > defaults."""
    cfg = ScenarioConfig()
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        cfg = from_flat(PROFILES[profile], cfg)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        try:
            tree = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = from_flat(_flatten(tree), cfg)
    if overrides:
        cfg = from_flat(overrides, cfg)
    return cfg
