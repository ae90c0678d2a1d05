"""Experiment configuration: a JSON document with one section per module.

Unknown keys are rejected everywhere so that a typo cannot silently fall
back to a default.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from .lattice import LatticeConfig
from .optimizer import OptimizerConfig
from .sensing import DEFAULT_DELTA_A, DEFAULT_N_ATOMS, NoiseModel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SensingConfig:
    delta_a: float = DEFAULT_DELTA_A
    n_atoms: float = DEFAULT_N_ATOMS
    repetitions: int = 100
    noise: NoiseModel | None = None
    scan: tuple = (-0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4)
    sample_rate: float = 1e6
    awg_range: float = 5.0
    eom_rad_per_volt: float = 0.746
    amplifier_gain: float = 40.0

    def __post_init__(self):
        if not self.delta_a > 0:
            raise ValueError("delta_a must be positive")
        if not self.n_atoms > 0:
            raise ValueError("n_atoms must be positive")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.awg_range > 0:
            raise ValueError("awg_range must be positive")


@dataclass(frozen=True)
class FitConfig:
    c_mode: object = "free"

    def __post_init__(self):
        if not (self.c_mode == "free" or isinstance(self.c_mode, (int, float))):
            raise ValueError("c_mode must be 'free' or a number")


@dataclass(frozen=True)
class ExperimentConfig:
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    output_dir: str = "results"
    seed: int = 0

    def to_dict(self) -> dict:
        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, tuple):
                return [plain(v) for v in obj]
            if isinstance(obj, float) and math.isinf(obj):
                return "inf"
            return obj

        return plain(self)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        if value == "inf":
            value = math.inf
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{where}' section: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    seed = int(data.get("seed", 0))
    sensing = dict(data.get("sensing") or {})
    noise = sensing.pop("noise", None)
    sensing_cfg = _build(SensingConfig, sensing, "sensing")
    if noise is not None:
        noise = dict(noise)
        noise.setdefault("seed", seed)
        sensing_cfg = dataclasses.replace(sensing_cfg, noise=_build(NoiseModel, noise, "sensing.noise"))
    optimizer = dict(data.get("optimizer") or {})
    optimizer.setdefault("seed", seed)
    if "noise" in optimizer:
        raise ConfigError("closed-loop noise is configured under sensing.noise with optimizer.noisy_objective")
    noisy_objective = bool(optimizer.pop("noisy_objective", False))
    opt_cfg = _build(OptimizerConfig, optimizer, "optimizer")
    if noisy_objective:
        if sensing_cfg.noise is None:
            raise ConfigError("optimizer.noisy_objective requires a sensing.noise section")
        opt_cfg = dataclasses.replace(opt_cfg, noise=sensing_cfg.noise)
    return ExperimentConfig(
        lattice=_build(LatticeConfig, data.get("lattice"), "lattice"),
        optimizer=opt_cfg,
        sensing=sensing_cfg,
        fit=_build(FitConfig, data.get("fit"), "fit"),
        output_dir=str(data.get("output_dir", "results")),
        seed=seed,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(data)
