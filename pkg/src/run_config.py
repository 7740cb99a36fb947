#!/usr/bin/env python3
"""
Run Configuration

Sectioned YAML configuration for simulations, sweeps and optimization
campaigns, with command-line overrides and a provenance hash.

Features:
- Nested dataclass sections with table defaults
- Missing config file falls back to built-in defaults
- --set section.key=value overrides parsed as YAML scalars
- Stable config hash stamped into every artifact
"""

import copy
import hashlib
import logging
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from bayes_optimizer import BOSettings, DEConfig, TrustRegionSettings
from fracture_model import MaterialParams
from microstructure_geometry import DESIGN_BOUNDS, DESIGN_NAMES, PRESETS, SCENARIOS, DesignVector, MicrostructureError
from surfing_solver import DomainParams, StepControls
from xfem_assembly import SurfingParams

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "config" / "microstructure_config.yaml"

# Keys that affect where and how fast a run executes, not what it computes
UNHASHED = {"run": ("workers", "out"), "logging": None}


class ConfigError(MicrostructureError):
    """Invalid configuration file or override"""


class ConfigHashMismatchError(ConfigError):
    """A checkpoint was produced with a different configuration"""


@dataclass
class SurfingSettings:
    K_I: float = 1.1
    v: float = 50.0


@dataclass
class PostprocSettings:
    window: List[float] = field(default_factory=lambda: [50.0, 80.0])
    half_width: int = 3


@dataclass
class DesignSettings:
    """Fixed design (preset plus per-parameter values), global bounds and sweep grid"""
    preset: Optional[str] = "setup_a"
    x: Dict[str, float] = field(default_factory=dict)
    bounds: Dict[str, List[float]] = field(default_factory=dict)
    grid: Dict[str, Any] = field(default_factory=lambda: {"x1": {"start": 0.0, "stop": 0.5, "num": 11}})


@dataclass
class RunSettings:
    seed: int = 0
    workers: int = 1
    out: str = "output"
    dump_fields: bool = False


@dataclass
class LoggingSettings:
    level: str = "INFO"
    file: Optional[str] = "logs/microstructure.log"
    max_size: int = 10485760
    backup_count: int = 5


SECTIONS = {
    "material": MaterialParams,
    "surfing": SurfingSettings,
    "domain": DomainParams,
    "solver": StepControls,
    "postproc": PostprocSettings,
    "design": DesignSettings,
    "bayesopt": BOSettings,
    "de": DEConfig,
    "trust_region": TrustRegionSettings,
    "run": RunSettings,
    "logging": LoggingSettings,
}


@dataclass
class RunConfig:
    material: MaterialParams = field(default_factory=MaterialParams)
    surfing: SurfingSettings = field(default_factory=SurfingSettings)
    domain: DomainParams = field(default_factory=DomainParams)
    solver: StepControls = field(default_factory=StepControls)
    postproc: PostprocSettings = field(default_factory=PostprocSettings)
    design: DesignSettings = field(default_factory=DesignSettings)
    scenarios: List[float] = field(default_factory=lambda: list(SCENARIOS))
    bayesopt: BOSettings = field(default_factory=BOSettings)
    de: DEConfig = field(default_factory=DEConfig)
    trust_region: TrustRegionSettings = field(default_factory=TrustRegionSettings)
    run: RunSettings = field(default_factory=RunSettings)
    logging: LoggingSettings = field(default_factory=LoggingSettings)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["scenarios"] = [float(w) for w in self.scenarios]
        return data

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "RunConfig":
        data = data or {}
        unknown = set(data) - set(SECTIONS) - {"scenarios"}
        if unknown:
            raise ConfigError(f"Unknown config sections: {sorted(unknown)}")
        kwargs: Dict[str, Any] = {}
        for name, section_cls in SECTIONS.items():
            values = data.get(name) or {}
            if not isinstance(values, dict):
                raise ConfigError(f"Section '{name}' must be a mapping")
            allowed = {f.name for f in fields(section_cls)}
            extra = set(values) - allowed
            if extra:
                raise ConfigError(f"Unknown keys in section '{name}': {sorted(extra)}")
            try:
                kwargs[name] = section_cls(**values)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Invalid section '{name}': {e}") from e
        scenarios = data.get("scenarios", list(SCENARIOS))
        try:
            kwargs["scenarios"] = [float(w) for w in scenarios]
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Scenarios must be a list of numbers: {e}") from e
        if not kwargs["scenarios"]:
            raise ConfigError("At least one crack-offset scenario is required")
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self) -> None:
        if len(self.postproc.window) != 2 or self.postproc.window[0] > self.postproc.window[1]:
            raise ConfigError(f"postproc.window must be [x_lo, x_hi], got {self.postproc.window}")
        if self.design.preset is not None and self.design.preset not in PRESETS:
            raise ConfigError(f"Unknown design preset '{self.design.preset}'; choose from {sorted(PRESETS)}")
        for key in list(self.design.x) + list(self.design.bounds) + list(self.design.grid):
            if key not in DESIGN_NAMES:
                raise ConfigError(f"Unknown design parameter '{key}'")
        if self.run.workers < 1:
            raise ConfigError("run.workers must be at least 1")

    # ---------------------------------------------------------- derived objects

    def design_vector(self) -> DesignVector:
        """Preset values overridden by design.x; every parameter must end up defined"""
        values: Dict[str, float] = PRESETS[self.design.preset].to_dict() if self.design.preset else {}
        values.update({k: float(v) for k, v in self.design.x.items()})
        missing = [name for name in DESIGN_NAMES if name not in values]
        if missing:
            raise ConfigError(f"Design parameters not set: {missing}")
        return DesignVector.from_dict(values)

    def global_bounds(self) -> np.ndarray:
        bounds = DESIGN_BOUNDS.copy()
        for name, (lo, hi) in self.design.bounds.items():
            if lo > hi:
                raise ConfigError(f"Bounds of {name} are reversed: [{lo}, {hi}]")
            bounds[DESIGN_NAMES.index(name)] = [lo, hi]
        return bounds

    def grid(self) -> Dict[str, np.ndarray]:
        """Sweep grid; each entry is a list of values or {start, stop, num}"""
        grid = {}
        for name, entry in self.design.grid.items():
            if isinstance(entry, dict):
                grid[name] = np.linspace(float(entry["start"]), float(entry["stop"]), int(entry.get("num", 11)))
            else:
                grid[name] = np.asarray(entry, dtype=float)
        if not 1 <= len(grid) <= 2:
            raise ConfigError(f"A sweep needs one or two grid parameters, got {len(grid)}")
        return grid

    def surfing_params(self) -> SurfingParams:
        return SurfingParams(K_I=self.surfing.K_I, v=self.surfing.v, E=self.material.E_matrix, nu=self.material.nu)

    @property
    def window(self) -> Tuple[float, float]:
        return float(self.postproc.window[0]), float(self.postproc.window[1])


def load_config(path: Optional[Path] = None) -> RunConfig:
    """Load a YAML config; a missing file yields the built-in defaults"""
    path = Path(path) if path else DEFAULT_CONFIG_PATH
    if not path.exists():
        logger.warning(f"Config file {path} not found, using defaults")
        return RunConfig()
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    logger.info(f"Loaded config from {path}")
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
    return path


def apply_overrides(config: RunConfig, overrides: Sequence[str]) -> RunConfig:
    """
    Apply 'section.key=value' overrides (or 'scenarios=[...]')

    Values are parsed with yaml.safe_load, so numbers, booleans, null and
    lists work as in the config file. Nested keys use further dots, e.g.
    design.x.x1=0.3.
    """
    if not overrides:
        return config
    data = copy.deepcopy(config.to_dict())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' must look like section.key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse override value '{raw}': {e}") from e
        target = data
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                if target is data:
                    raise ConfigError(f"Unknown config section '{part}'")
                target[part] = {}
            target = target[part]
        if target is data and parts[-1] not in data:
            raise ConfigError(f"Unknown config key '{key}'")
        target[parts[-1]] = value
        logger.debug(f"Override {key} = {value!r}")
    return RunConfig.from_dict(data)


def config_hash(config: RunConfig) -> str:
    """12 hex chars of sha256 over everything that changes results"""
    data = config.to_dict()
    for section, keys in UNHASHED.items():
        if keys is None:
            data.pop(section, None)
        else:
            for key in keys:
                data[section].pop(key, None)
    canonical = yaml.safe_dump(data, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
