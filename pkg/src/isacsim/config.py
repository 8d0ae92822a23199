"""Simulation configuration: defaults, YAML parsing, validation and serialization."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

from .scene import SPEED_OF_LIGHT

log = logging.getLogger(__name__)

ESTIMATORS = ("sensing", "ls", "perfect")


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key and source line when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key, self.line = key, line
        where = ""
        if key is not None:
            where = f"key {key!r}"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(where + message)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SimConfig:
    # scene layout
    room_size_m: float = 200.0
    ap_positions_m: tuple = ((0.0, 0.0), (200.0, 200.0), (0.0, 200.0), (200.0, 0.0), (100.0, 200.0))
    n_aps: int = 5
    ue_positions_m: tuple = ((50.0, 150.0), (150.0, 150.0), (150.0, 100.0))
    target_start_m: tuple = (0.0, 50.0)
    target_heading: tuple = (1.0, 0.0)
    target_speed_mps: float = 2.0
    target_length_m: float = 5.0
    target_width_m: float = 2.0
    # arrays and radio
    n_tx: int = 32
    n_rx: int = 32
    n_ue_ant: int = 4
    carrier_ghz: float = 60.0
    bandwidth_mhz: float = 500.0
    slot_ms: float = 50.0
    frame_ms: float = 500.0
    tx_power_dbm: float = 23.0
    ue_power_dbm: float = 23.0
    noise_power_dbm: float = -87.0
    # sensing
    scatterers_k: int = 8
    scatterer_layout: str = "uniform"
    a_tau: float = 6.7e-7
    a_mu: float = 2.0e4
    a_theta: float = 1.0
    mf_gain: float = 1.0e4
    sensing_noise: bool = True
    # propagation
    surface_phase_rad: float = math.pi
    specular_reflectance: float = 0.7
    diffuse_reflectance: float = 0.2
    reflection_efficiency: float = 1.0
    beam_floor: float = 0.05
    path_loss: str = "none"
    path_gain_db: float = 0.0
    # LS baseline and metrics
    ls_pilot_len: float = 3.33e-9
    correlation_mode: str = "magnitude"
    # run control
    frames: int = 100
    seeds: tuple = tuple(range(20))
    estimators: tuple = ESTIMATORS

    def __post_init__(self):
        for name in ("ap_positions_m", "ue_positions_m"):
            pts = tuple(tuple(float(c) for c in p) for p in getattr(self, name))
            object.__setattr__(self, name, pts)
        for name in ("target_start_m", "target_heading"):
            object.__setattr__(self, name, tuple(float(c) for c in getattr(self, name)))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "estimators", tuple(self.estimators))

    # derived quantities, SI units
    @property
    def carrier_freq(self) -> float:
        return self.carrier_ghz * 1e9

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def slot_s(self) -> float:
        return self.slot_ms * 1e-3

    @property
    def frame_s(self) -> float:
        return self.frame_ms * 1e-3

    @property
    def slots_per_frame(self) -> int:
        return int(round(self.frame_ms / self.slot_ms))

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watt(self.tx_power_dbm)

    @property
    def ue_power_w(self) -> float:
        return dbm_to_watt(self.ue_power_dbm)

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watt(self.noise_power_dbm)

    @property
    def n_users(self) -> int:
        return len(self.ue_positions_m)

    def replace(self, **changes) -> "SimConfig":
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[f.name] = v
        return out


KEYS = {f.name for f in fields(SimConfig)}


def validate(cfg: SimConfig, lines: dict[str, int] | None = None) -> None:
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(msg, key, lines.get(key))

    for key in ("n_tx", "n_rx", "n_ue_ant", "scatterers_k", "n_aps", "frames"):
        if getattr(cfg, key) < 1:
            fail(key, "must be >= 1")
    for key in ("room_size_m", "target_length_m", "target_width_m", "carrier_ghz", "bandwidth_mhz",
                "slot_ms", "frame_ms", "a_tau", "a_mu", "a_theta", "mf_gain", "ls_pilot_len", "beam_floor"):
        v = getattr(cfg, key)
        if not (math.isfinite(v) and v > 0):
            fail(key, f"must be a positive finite number, got {v!r}")
    if cfg.target_speed_mps < 0:
        fail("target_speed_mps", "must be non-negative")
    for key in ("specular_reflectance", "diffuse_reflectance"):
        if not 0.0 < getattr(cfg, key) < 1.0:
            fail(key, "must lie in (0, 1)")
    if not 0.0 <= cfg.reflection_efficiency <= 1.0:
        fail("reflection_efficiency", "must lie in [0, 1]")
    ratio = cfg.frame_ms / cfg.slot_ms
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 2:
        fail("frame_ms", f"frame must be an integer number (>= 2) of slots, got {ratio:g}")
    if cfg.n_aps > len(cfg.ap_positions_m):
        fail("n_aps", f"only {len(cfg.ap_positions_m)} AP positions given")
    if not cfg.ue_positions_m:
        fail("ue_positions_m", "need at least one UE")
    for key in ("ap_positions_m", "ue_positions_m"):
        for p in getattr(cfg, key):
            if len(p) != 2:
                fail(key, f"positions must be [x, y] pairs, got {list(p)}")
    if len(cfg.target_start_m) != 2:
        fail("target_start_m", "must be an [x, y] pair")
    if len(cfg.target_heading) != 2 or abs(math.hypot(*cfg.target_heading) - 1.0) > 1e-9:
        fail("target_heading", "must be a unit vector [hx, hy]")
    if cfg.scatterer_layout not in ("uniform", "grid"):
        fail("scatterer_layout", "must be 'uniform' or 'grid'")
    if cfg.path_loss not in ("free_space", "none"):
        fail("path_loss", "must be 'free_space' or 'none'")
    if cfg.correlation_mode not in ("magnitude", "real"):
        fail("correlation_mode", "must be 'magnitude' or 'real'")
    if not cfg.seeds:
        fail("seeds", "need at least one seed")
    bad = [e for e in cfg.estimators if e not in ESTIMATORS]
    if bad or not cfg.estimators:
        fail("estimators", f"must be a non-empty subset of {list(ESTIMATORS)}")
    if cfg.n_users * cfg.n_ue_ant > cfg.n_aps * cfg.n_tx:
        log.warning(
            "ZF infeasible: %d UE streams exceed %d transmit antennas",
            cfg.n_users * cfg.n_ue_ant, cfg.n_aps * cfg.n_tx,
        )


def _key_lines(text: str) -> dict[str, int]:
    node = yaml.compose(text, Loader=yaml.SafeLoader)
    if node is None or not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def _coerce(name: str, value: Any, default: Any, line: int | None) -> Any:
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {type(default).__name__}, got {value!r}", name, line) from None
    return value


def config_from_dict(data: dict[str, Any], lines: dict[str, int] | None = None, echo_defaults: bool = True) -> SimConfig:
    lines = lines or {}
    unknown = [k for k in data if k not in KEYS]
    if unknown:
        k = unknown[0]
        raise ConfigError("unknown key", k, lines.get(k))
    defaults = SimConfig()
    kwargs = {}
    for f in fields(SimConfig):
        if f.name in data:
            kwargs[f.name] = _coerce(f.name, data[f.name], getattr(defaults, f.name), lines.get(f.name))
        elif echo_defaults:
            log.info("default applied: %s = %r", f.name, getattr(defaults, f.name))
    try:
        cfg = SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg, lines)
    return cfg


def parse_config_text(text: str) -> SimConfig:
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a key-value mapping")
    return config_from_dict(data, lines)


def parse_config(path: str | Path) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
