#!/usr/bin/env python3
"""
Run configuration
One JSON document with sections seed, samples, model, train, scene, radio,
camera and paths. Loading is strict: unknown keys and wrongly typed values are
rejected with the dotted name of the offending field before any work starts.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_type_hints

from beamcast.airsim import CameraConfig, RadioConfig, SceneConfig
from beamcast.beamnet import ModelConfig
from beamcast.errors import ConfigurationError
from beamcast.harness import TrainConfig


@dataclass(frozen=True)
class PathsConfig:
    data: Optional[str] = None
    out: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    samples: int = 5000
    model: ModelConfig = field(default_factory=lambda: ModelConfig(image_size=64, scale_factor=Fraction(1, 8)))
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigurationError(f"must be >= 1, got {self.samples}", "samples")
        if self.model.num_beams != self.radio.num_beams:
            raise ConfigurationError(
                f"model predicts {self.model.num_beams} beams but the codebook has {self.radio.num_beams}",
                "model.num_beams",
            )
        if self.model.image_size != self.camera.image_size:
            raise ConfigurationError(
                f"model expects {self.model.image_size}px images, camera renders {self.camera.image_size}px",
                "model.image_size",
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "samples": self.samples,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "scene": _jsonable(dataclasses.asdict(self.scene)),
            "radio": dataclasses.asdict(self.radio),
            "camera": _jsonable(dataclasses.asdict(self.camera)),
            "paths": dataclasses.asdict(self.paths),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _jsonable(data: dict[str, Any]) -> dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}


_SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "scene": SceneConfig,
    "radio": RadioConfig,
    "camera": CameraConfig,
    "paths": PathsConfig,
}


def _check_optional(value: Any, annotation: Any, name: str) -> Any:
    """Optional[X] fields: None or a value of X"""
    inner = [a for a in get_args(annotation) if a is not type(None)]
    if value is None:
        return None
    if inner == [int]:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif inner == [float]:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif inner == [str]:
        ok = isinstance(value, str)
    else:
        ok = False
    if not ok:
        raise ConfigurationError(f"invalid value {value!r}", name)
    return value


def _check_value(value: Any, default: Any, name: str, annotation: Any = None) -> Any:
    """Type-check one value against its field default"""
    if type(None) in get_args(annotation):
        return _check_optional(value, annotation, name)
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, Fraction):
        try:
            value = Fraction(str(value))
            ok = True
        except (ValueError, ZeroDivisionError):
            ok = False
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        value = tuple(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = False
    if not ok:
        raise ConfigurationError(f"invalid value {value!r}", name)
    return value


def _build_section(cls: type, data: Any, section: str, base: Any) -> Any:
    if not isinstance(data, dict):
        raise ConfigurationError("must be an object", section)
    known = {f.name: f for f in dataclasses.fields(cls)}
    hints = get_type_hints(cls)
    updates = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigurationError("unknown key", f"{section}.{key}")
        updates[key] = _check_value(value, getattr(base, key), f"{section}.{key}", hints[key])
    try:
        return dataclasses.replace(base, **updates)
    except TypeError as e:
        raise ConfigurationError(str(e), section)


def run_config_from_dict(data: dict[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    """
    Overlay a parsed config document on `base` (default: the desk-scale preset).

    A top-level `seed` also seeds training unless `train.seed` is given.

    Raises:
        ConfigurationError: unknown key, wrong type or out-of-range value (field is the dotted key)
    """
    base = base or RunConfig()
    if not isinstance(data, dict):
        raise ConfigurationError("config document must be a JSON object")
    for key in data:
        if key not in ("seed", "samples", *_SECTIONS):
            raise ConfigurationError("unknown key", key)

    seed = _check_value(data.get("seed", base.seed), 0, "seed")
    samples = _check_value(data.get("samples", base.samples), 0, "samples")
    sections = {name: getattr(base, name) for name in _SECTIONS}
    for name, cls in _SECTIONS.items():
        if name in data:
            sections[name] = _build_section(cls, data[name], name, sections[name])
    if "seed" in data and "seed" not in data.get("train", {}):
        sections["train"] = dataclasses.replace(sections["train"], seed=seed)
    return RunConfig(seed=seed, samples=samples, **sections)


def load_run_config(path: Union[str, Path, None] = None, preset: Optional[str] = None) -> RunConfig:
    """Preset (default desk) overlaid with the JSON file at path, if given"""
    base = get_preset(preset) if preset else RunConfig()
    if path is None:
        return base
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}", "config")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid JSON in {path}: {e}", "config")
    return run_config_from_dict(data, base)


def full_preset() -> RunConfig:
    """Full-size architecture: 224px images, Q=64, 100 epochs decayed at 30/60/90"""
    return RunConfig(
        samples=5000,
        model=ModelConfig(),
        train=TrainConfig(epochs=100, batch_size=32, lr=1e-4, milestones=(30, 60, 90)),
        radio=RadioConfig(num_antennas=16, num_beams=64),
        camera=CameraConfig(image_size=224),
    )


def toy_preset() -> RunConfig:
    """Minutes-scale CPU task: M=8, Q=8, 2000 samples of 32x32 images"""
    return RunConfig(
        samples=2000,
        model=ModelConfig(image_size=32, num_beams=8, scale_factor=Fraction(1, 8)),
        train=TrainConfig(epochs=50, batch_size=32, lr=1e-4, milestones=(30,)),
        radio=RadioConfig(num_antennas=8, num_beams=8),
        camera=CameraConfig(image_size=32),
    )


def toy_sweep_preset() -> RunConfig:
    """
    Toy task under the learning-rate comparison protocol: 30 epochs at a
    constant rate, batch 8. Arms share seeds, so they differ only in lr.
    """
    base = toy_preset()
    train = TrainConfig(epochs=30, batch_size=8, lr=1e-4, milestones=(), eval_every=10)
    return dataclasses.replace(base, train=train)


PRESETS = {"desk": RunConfig, "full": full_preset, "toy": toy_preset, "toy-sweep": toy_sweep_preset}


def get_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r} (choose from {sorted(PRESETS)})", "preset")
    return PRESETS[name]()
