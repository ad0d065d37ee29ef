"""JSON run configuration.

Every section maps onto one dataclass.  Unknown keys are rejected and
validation errors name the offending field, e.g. ``train.learning_rate``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..augment import METHODS, SampleSpec
from ..confidence import ConfidenceParams
from ..model import MlpConfig, TrainConfig
from ..pointcloud import FilterConfig
from ..synthetic import ScanConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSection:
    drop_class_ids: tuple = ()
    ground_z_threshold: float = -1.563
    hausdorff_threshold: float = 0.5

    def build(self) -> FilterConfig:
        return FilterConfig(frozenset(self.drop_class_ids), self.ground_z_threshold, self.hausdorff_threshold)


@dataclass(frozen=True)
class ScanSection:
    azimuth_steps: int = 128
    elevation_deg: tuple = tuple(np.linspace(-12.0, 12.0, 16).tolist())
    max_range: float = 50.0
    origin: tuple = (0.0, 0.0, 0.0)

    def build(self) -> ScanConfig:
        return ScanConfig(self.azimuth_steps, tuple(np.deg2rad(self.elevation_deg).tolist()),
                          self.max_range, tuple(self.origin))

    def __post_init__(self):
        self.build()


@dataclass(frozen=True)
class SamplingSection:
    method: str = "gaussian"
    n_positive: int = 4
    n_negative: int = 4
    truncation_dmax: float = 3.0
    gaussian_sigma: float = 0.5
    seed: int = 0
    leaf_count: int = 50

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.leaf_count < 1:
            raise ValueError("leaf_count must be >= 1")

    def build(self) -> SampleSpec:
        return SampleSpec(self.n_positive, self.n_negative, self.truncation_dmax, self.gaussian_sigma, self.seed)


@dataclass(frozen=True)
class ConfidenceSection:
    b: float = 10.0
    legacy: bool = False

    def __post_init__(self):
        if not self.b > 1:
            raise ValueError(f"b must be > 1, got {self.b}")

    def build(self, spec: SampleSpec) -> ConfidenceParams:
        return ConfidenceParams(self.b, spec.truncation_dmax, self.legacy)


@dataclass(frozen=True)
class GridSection:
    bounds: tuple = ((3.0, -6.0, -2.0), (12.0, 5.0, 2.0))
    resolution: tuple = (91, 111, 41)
    iso: float = 0.0


@dataclass(frozen=True)
class SliceSection:
    z: float = 0.0
    bounds: tuple = ((4.5, -4.5), (10.5, 3.5))
    resolution: tuple = (121, 161)
    band: float = 0.5


@dataclass(frozen=True)
class EvaluationSection:
    shell_half_width: float = 0.5
    coverage_radius: float = 0.3
    shell_samples: int = 20000
    shell_seed: int = 1
    test_fraction: float = 0.2
    split_seed: int = 0


@dataclass(frozen=True)
class ExperimentSection:
    sweep_layers: tuple = tuple(range(1, 21))
    sweep_epochs: int = 200
    sweep_use_encoder: bool = False
    compare_epochs: int = 200
    augment_use_encoder: bool = False


# benchmark defaults differ from the library defaults where noted in README
_MODEL_DEFAULTS = dict(freq_scale=0.1)
_TRAIN_DEFAULTS = dict(learning_rate=4e-3)


@dataclass(frozen=True)
class RunConfig:
    filter: FilterSection = field(default_factory=FilterSection)
    scan: ScanSection = field(default_factory=ScanSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    confidence: ConfidenceSection = field(default_factory=ConfidenceSection)
    model: MlpConfig = field(default_factory=lambda: MlpConfig(**_MODEL_DEFAULTS))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**_TRAIN_DEFAULTS))
    grid: GridSection = field(default_factory=GridSection)
    slice: SliceSection = field(default_factory=SliceSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    experiments: ExperimentSection = field(default_factory=ExperimentSection)

    def sample_spec(self) -> SampleSpec:
        return self.sampling.build()

    def conf_params(self) -> ConfidenceParams:
        return self.confidence.build(self.sample_spec())

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with every random stream reseeded from ``seed``."""
        return dataclasses.replace(
            self,
            sampling=dataclasses.replace(self.sampling, seed=seed),
            model=dataclasses.replace(self.model, seed=seed, encoder_seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            evaluation=dataclasses.replace(self.evaluation, split_seed=seed),
        )

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))


_SECTION_DEFAULTS = {"model": _MODEL_DEFAULTS, "train": _TRAIN_DEFAULTS}


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


_SECTION_TYPES = {
    "filter": FilterSection, "scan": ScanSection, "sampling": SamplingSection,
    "confidence": ConfidenceSection, "model": MlpConfig, "train": TrainConfig,
    "grid": GridSection, "slice": SliceSection, "evaluation": EvaluationSection,
    "experiments": ExperimentSection,
}


def _check_type(where: str, default, value) -> None:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        want = "true/false"
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        want = "an integer"
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        want = "a number"
    elif isinstance(default, str):
        ok = isinstance(value, str)
        want = "a string"
    elif isinstance(default, (tuple, frozenset)):
        ok = isinstance(value, list)
        want = "a list"
    else:
        ok, want = True, ""
    if not ok:
        raise ConfigError(f"{where}: expected {want}, got {json.dumps(value)}")


def _build_section(name: str, doc) -> object:
    cls = _SECTION_TYPES[name]
    if not isinstance(doc, dict):
        raise ConfigError(f"{name}: expected an object")
    defaults = dataclasses.asdict(getattr(RunConfig(), name))
    for key, value in doc.items():
        if key not in defaults:
            raise ConfigError(f"{name}.{key}: unknown key")
        _check_type(f"{name}.{key}", defaults[key], value)
    kwargs = {**_SECTION_DEFAULTS.get(name, {}), **{k: _freeze(v) for k, v in doc.items()}}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        named = [k for k in doc if k in str(exc)]
        key = named[0] if named else (next(iter(doc)) if doc else "?")
        raise ConfigError(f"{name}.{key}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    sections = {}
    for key, value in doc.items():
        if key not in _SECTION_TYPES:
            raise ConfigError(f"{key}: unknown config section")
        sections[key] = _build_section(key, value)
    return RunConfig(**sections)


def load_config(path: Optional[Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)
