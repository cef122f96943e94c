"""Configuration dataclasses, INI loading and seed sub-streams."""

import configparser
import dataclasses
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError

META_MODES = ("unrolled", "first_order")
INIT_MODES = ("anchored", "density")
ABLATIONS = ("se", "sp", "ge", "tg")


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named stage of the run.

    Every random draw in the package goes through a named stream (``data``,
    ``init``, ``inner``, ``dropout``, ``batch``, ``basis``, ``anchor``), so
    changing how one stage consumes randomness leaves the others untouched.

    Args:
        seed: Root seed of the run
        name: Stream name
        *keys: Extra non-negative integers (step index, graph index, ...)

    Returns:
        numpy Generator seeded from (seed, crc32(name), *keys)
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ConfigError("seeds and stream keys must be non-negative")
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *keys]))


@dataclass
class ModelConfig:
    """3-layer GIN classifier settings."""

    layers: int = 3
    hidden: int = 128
    dropout: float = 0.2
    eps_gin: float = 0.0
    num_classes: int = 0
    feature_dim: int = 0

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("model.layers must be >= 1")
        if self.hidden < 1:
            raise ConfigError("model.hidden must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout must be in [0, 1)")


@dataclass
class DistillConfig:
    """Stage-1 bi-level optimisation settings."""

    k: int = 30
    n_syn: Optional[int] = None
    t_inner: int = 20
    lr_inner: float = 1e-3
    lr_outer: float = 1e-4
    grad_clip: float = 1.0
    lambda1: float = 0.7
    lambda2: float = 0.5
    use_sem: bool = True
    outer_steps: int = 300
    batch_source: int = 32
    batch_target: int = 64
    meta_mode: str = "unrolled"
    init: str = "anchored"
    gamma: Optional[Tuple[float, float, float, float]] = None
    convergence_tol: float = 1e-4
    convergence_window: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.lr_inner <= 0 or self.lr_outer <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")
        if self.t_inner < 0:
            raise ConfigError("t_inner must be >= 0")
        if self.outer_steps < 0:
            raise ConfigError("outer_steps must be >= 0")
        if self.batch_source < 1 or self.batch_target < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.meta_mode not in META_MODES:
            raise ConfigError(f"meta_mode must be one of {META_MODES}")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}")
        if self.n_syn is not None and self.n_syn < 2:
            raise ConfigError("n_syn must be >= 2")
        if self.gamma is not None and (
            len(self.gamma) != 4 or any(not np.isfinite(g) or g < 0 for g in self.gamma)
        ):
            raise ConfigError("gamma must be four finite non-negative numbers")


@dataclass
class InferConfig:
    """Stage-2 fresh-model training settings."""

    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 1e-12
    early_stop_tol: float = 1e-5
    early_stop_window: int = 20
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("infer.epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("infer.lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("infer.batch_size must be >= 1")


# Desk-scale overrides: small model, short unrolling, rates large enough that a
# few hundred outer steps move the adjacency logits.
DESK_PRESET: Dict[str, Dict[str, Any]] = {
    "model": {"hidden": 32},
    "distill": {"t_inner": 10, "lr_inner": 0.1, "lr_outer": 0.01, "k": 12, "n_syn": 12},
    "infer": {"lr": 5e-3},
}
PRESETS = ("desk", "full")


@dataclass
class ExperimentConfig:
    """Everything one CLI run needs."""

    source: Optional[str] = None
    target: Optional[str] = None
    out_dir: str = "runs"
    seeds: List[int] = field(default_factory=lambda: [0])
    preset: str = "desk"
    ablations: List[str] = field(default_factory=list)
    model: ModelConfig = field(default_factory=ModelConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    infer: InferConfig = field(default_factory=InferConfig)

    def validate(self, require_paths: bool = True) -> None:
        if not self.seeds:
            raise ConfigError("seed list must not be empty")
        for name in ("source", "target"):
            path = getattr(self, name)
            if require_paths and (path is None or not Path(path).is_file()):
                raise ConfigError(f"{name} dataset not found: {path}")
        unknown = [a for a in self.ablations if a not in ABLATIONS]
        if unknown:
            raise ConfigError(f"unknown ablations {unknown}; choose from {ABLATIONS}")
        self.model.validate()
        self.distill.validate()
        self.infer.validate()


def _coerce(raw: str, current: Any, key: str) -> Any:
    """Convert an INI string to the type of the field's current value."""
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            return [item.strip() for item in raw.split(",") if item.strip()]
        if current is None:
            if raw.lower() in ("", "none"):
                return None
            if "," in raw:
                return tuple(float(x) for x in raw.split(","))
            try:
                return int(raw)
            except ValueError:
                return raw
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def _apply(target: Any, values: Dict[str, Any], section: str) -> None:
    names = {f.name for f in dataclasses.fields(target)}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown key [{section}] {key}")
        if isinstance(value, str):
            value = _coerce(value, getattr(target, key), f"[{section}] {key}")
        setattr(target, key, value)


def apply_preset(cfg: ExperimentConfig, preset: str) -> None:
    """Overlay a named preset onto the module configs."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    cfg.preset = preset
    if preset == "desk":
        for section, values in DESK_PRESET.items():
            _apply(getattr(cfg, section), dict(values), section)


def load_config(path: Optional[str] = None, preset: Optional[str] = None) -> ExperimentConfig:
    """Build an ExperimentConfig from a preset and an optional INI file.

    Args:
        path: INI file with [model], [distill], [infer], [experiment] sections
        preset: Named defaults applied before the file; wins over the file's
            [experiment] preset, which wins over "desk"

    Returns:
        Merged configuration (file values win over the preset)

    Raises:
        ConfigError: If the file is missing or holds unknown keys/sections
    """
    cfg = ExperimentConfig()
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
        if preset is None and parser.has_option("experiment", "preset"):
            preset = parser.get("experiment", "preset")
    apply_preset(cfg, preset or "desk")

    for section in parser.sections():
        values = dict(parser.items(section))
        if section == "experiment":
            values.pop("preset", None)
            if "seeds" in values:
                try:
                    cfg.seeds = [int(s) for s in values.pop("seeds").split(",") if s.strip()]
                except ValueError:
                    raise ConfigError("[experiment] seeds must be integers") from None
            _apply(cfg, values, section)
        elif section in ("model", "distill", "infer"):
            _apply(getattr(cfg, section), values, section)
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return cfg


def override(cfg: ExperimentConfig, section: str, **values: Any) -> None:
    """Apply command-line overrides; ``None`` values are skipped."""
    present = {k: v for k, v in values.items() if v is not None}
    target = cfg if section == "experiment" else getattr(cfg, section)
    _apply(target, present, section)


def snapshot(cfg: Any) -> Dict[str, Any]:
    """Plain-dict copy of a config dataclass (tuples become lists)."""
    data = dataclasses.asdict(cfg)
    for key, value in data.items():
        if isinstance(value, tuple):
            data[key] = list(value)
    return data
