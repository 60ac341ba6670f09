"""Experiment configuration: presets, file loading and validation.

Everything is checked before any computation starts; errors name the
offending field (``lags[2]``, ``potential.terms[0].coef`` ...).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .collocation import MAX_NODES
from .potential import PotentialError, resolve_potential


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    potential: object = None
    beta: float = 1.0
    gamma: float = 1.0
    n: int = 33
    k: int = 8
    boxes: int = 256
    samples: int = 4000
    lags: list = field(default_factory=lambda: [0.1])
    dt: float = 1e-3
    seed: int = 0
    out: str = "out"
    n_batches: int = 8
    window: list = field(default_factory=lambda: [0.05, 0.4])
    mc_samples: int = 20000
    mc_dynamics: str = "langevin"
    a_floor: float | None = None
    smoluchowski: bool = False
    preset: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "double-well": {
        "potential": "double-well",
        "beta": 1.0,
        "gamma": 1.0,
        "n": 33,
        "boxes": 256,
        "samples": 4000,
        "lags": [0.05, 0.075, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 1.0],
        "dt": 1e-3,
    },
    "four-well": {
        "potential": "four-well",
        "beta": 1.0,
        "gamma": 1.0,
        "n": 33,
        "boxes": 32,
        "samples": 2000,
        "lags": [0.1, 0.2, 0.3, 0.5],
        "dt": 1e-3,
    },
}

_NAMES = {f.name for f in fields(ExperimentConfig)}


def _positive(value, name, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if value <= 0:
        raise ConfigError(f"{name}: must be positive, got {value!r}")
    return kind(value)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every field; returns ``cfg`` with numbers normalized."""
    if cfg.potential is None:
        raise ConfigError("potential: missing")
    try:
        spec = resolve_potential(cfg.potential)
    except PotentialError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith("potential") else f"potential: {msg}") from None
    cfg.beta = _positive(cfg.beta, "beta")
    cfg.gamma = _positive(cfg.gamma, "gamma")
    cfg.n = _positive(cfg.n, "n", int)
    if cfg.n % 2 == 0 or cfg.n < 3:
        raise ConfigError(f"n: collocation grids need an odd size >= 3, got {cfg.n}")
    if cfg.n**spec.dim > MAX_NODES:
        raise ConfigError(f"n: {cfg.n}^{spec.dim} nodes exceed the cap of {MAX_NODES}")
    cfg.k = _positive(cfg.k, "k", int)
    if cfg.k > cfg.n**spec.dim:
        raise ConfigError(f"k: {cfg.k} exceeds the number of nodes")
    cfg.boxes = _positive(cfg.boxes, "boxes", int)
    if cfg.boxes < 2:
        raise ConfigError("boxes: need at least 2 boxes per axis")
    cfg.samples = _positive(cfg.samples, "samples", int)
    if not isinstance(cfg.lags, (list, tuple)) or len(cfg.lags) == 0:
        raise ConfigError("lags: must be a non-empty list of lag times")
    cfg.lags = [_positive(t, f"lags[{i}]") for i, t in enumerate(cfg.lags)]
    cfg.dt = _positive(cfg.dt, "dt")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError(f"seed: expected an unsigned 64-bit integer, got {cfg.seed!r}")
    cfg.n_batches = _positive(cfg.n_batches, "n_batches", int)
    if not isinstance(cfg.window, (list, tuple)) or len(cfg.window) != 2:
        raise ConfigError("window: expected [t_min, t_max]")
    cfg.window = [_positive(t, f"window[{i}]") for i, t in enumerate(cfg.window)]
    if cfg.window[0] >= cfg.window[1]:
        raise ConfigError("window: t_min must be below t_max")
    cfg.mc_samples = _positive(cfg.mc_samples, "mc_samples", int)
    if cfg.mc_dynamics not in ("langevin", "smoluchowski"):
        raise ConfigError(f"mc_dynamics: expected 'langevin' or 'smoluchowski', got {cfg.mc_dynamics!r}")
    if cfg.a_floor is not None:
        if isinstance(cfg.a_floor, bool) or not isinstance(cfg.a_floor, (int, float)):
            raise ConfigError(f"a_floor: expected a number, got {cfg.a_floor!r}")
        if not -1.0 < cfg.a_floor <= 0.0:
            raise ConfigError(f"a_floor: must lie in (-1, 0], got {cfg.a_floor}")
    if not isinstance(cfg.smoluchowski, bool):
        raise ConfigError("smoluchowski: expected true or false")
    return cfg


def read_mapping(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file not found: {path}")
    try:
        text = path.read_text()
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return data


def build_config(data: dict | None = None, preset: str | None = None, **overrides) -> ExperimentConfig:
    """Merge preset, file mapping and overrides (in that order), then validate."""
    data = dict(data or {})
    preset = overrides.pop("preset", None) or preset or data.get("preset")
    merged: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
        merged["preset"] = preset
    for key, value in data.items():
        if key not in _NAMES:
            raise ConfigError(f"{key}: unknown field")
        if key != "preset":
            merged[key] = value
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return validate(ExperimentConfig(**merged))


def load_config(path=None, preset=None, **overrides) -> ExperimentConfig:
    data = read_mapping(path) if path is not None else None
    return build_config(data, preset, **overrides)
