"""Experiment configuration: a versioned TOML tree mapped onto dataclasses.

Unknown keys, wrong types and out-of-range values are all collected and
reported together in one ConfigError.
"""

from __future__ import annotations

import dataclasses
import enum
import sys
import types
import typing
from dataclasses import dataclass
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..classical import DeconvParams
from ..deblur import DeblurTrainConfig
from ..denoiser import PairRule, Sn2nTrainConfig
from ..degradation import ConditionName, parse_psf_shape
from ..nets import DeblurSpec, DenoiserSpec
from ..pipeline import Ablation
from ..scenes import is_scene_ref

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))

    def to_record(self) -> dict:
        return {"error": "ConfigError", "violations": self.errors}


class Scenario(str, enum.Enum):
    ABLATE = "Ablate"
    NOISE_SWEEP = "NoiseSweep"
    PSF_ROBUSTNESS = "PsfRobustness"
    HYPER_SWEEP = "HyperSweep"
    SINGLE = "Single"


# Desk-scale network sizes: same block counts as the full models, narrower.
DESK_DENOISER = DenoiserSpec(widths=(16, 32, 48, 64, 64, 64))
DESK_DEBLUR = DeblurSpec(widths=(8, 16, 32, 64, 128), output_bias=-6.0)


@dataclass(frozen=True)
class DataConfig:
    scenes: tuple[str, ...] = ("synthetic:0", "synthetic:1", "synthetic:2")
    size: int = 64
    psf: str = "psf-4"
    noise: str = "C3"
    frames: int = 16
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class AblateConfig:
    codes: tuple[str, ...] = ("T1", "T2", "T3", "T4")


@dataclass(frozen=True)
class NoiseSweepConfig:
    conditions: tuple[str, ...] = ("C1", "C2", "C3", "C4")
    psfs: tuple[str, ...] = ("psf-3", "psf-4")
    methods: tuple[str, ...] = ("wd", "lra", "nlr", "pn2n")


@dataclass(frozen=True)
class PsfRobustnessConfig:
    blur_sigmas: tuple[float, ...] = (0.0, 0.2, 0.5, 1.0)
    noise_levels: tuple[float, ...] = (1.0, 2.0, 5.0)
    regularization: tuple[bool, ...] = (True, False)


@dataclass(frozen=True)
class HyperSweepConfig:
    net_lr: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    bias_lr: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    init_steps: tuple[int, ...] = (100, 200, 300, 400)
    scene_count: tuple[int, ...] = (1, 5, 10)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = Scenario.ABLATE
    output_dir: str = "runs"
    workers: int = 1
    data: DataConfig = DataConfig()
    ablate: AblateConfig = AblateConfig()
    noise_sweep: NoiseSweepConfig = NoiseSweepConfig()
    psf_robustness: PsfRobustnessConfig = PsfRobustnessConfig()
    hyper_sweep: HyperSweepConfig = HyperSweepConfig()
    denoiser_spec: DenoiserSpec = DESK_DENOISER
    denoiser: Sn2nTrainConfig = Sn2nTrainConfig(steps=1000)
    pair_rule: PairRule = PairRule.ADJACENT
    deblur_spec: DeblurSpec = DESK_DEBLUR
    deblur: DeblurTrainConfig = DeblurTrainConfig(net_lr=1e-3, steps=2000)
    deconv: DeconvParams = DeconvParams()
    schema_version: int = SCHEMA_VERSION


# -- generic dataclass <-> dict -------------------------------------------------


def _strip_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _convert(tp, value, where: str, errors: list[str]):
    tp = _strip_optional(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            errors.append(f"{where}: expected a table")
            return None
        return _build(tp, value, where, errors)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            errors.append(f"{where}: {value!r} is not one of {[m.value for m in tp]}")
            return None
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            errors.append(f"{where}: expected an array")
            return None
        inner = typing.get_args(tp)[0]
        return tuple(_convert(inner, v, f"{where}[{i}]", errors) for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            errors.append(f"{where}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{where}: expected a number")
            return value
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string")
        return value
    return value


def _build(cls, data: dict, where: str, errors: list[str]):
    n_before = len(errors)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(data) - names):
        errors.append(f"{where}.{key}: unknown key" if where else f"{key}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            loc = f"{where}.{f.name}" if where else f.name
            kwargs[f.name] = _convert(hints[f.name], data[f.name], loc, errors)
    if len(errors) > n_before:
        return None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        errors.append(f"{where or cls.__name__}: {exc}")
        return None


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(cfg)


def _semantic_checks(cfg: ExperimentConfig, errors: list[str]):
    d = cfg.data
    if not d.seeds:
        errors.append("data.seeds: must be non-empty")
    if not d.scenes:
        errors.append("data.scenes: must be non-empty")
    for i, ref in enumerate(d.scenes):
        if not is_scene_ref(ref):
            errors.append(f"data.scenes[{i}]: {ref!r} is neither synthetic:<seed> nor an existing file")
    if d.size < 8:
        errors.append("data.size: must be >= 8")
    if d.frames < 2 or d.frames % 2:
        errors.append("data.frames: must be even and >= 2")
    for loc, text in [("data.psf", d.psf)] + [(f"noise_sweep.psfs[{i}]", p) for i, p in enumerate(cfg.noise_sweep.psfs)]:
        try:
            parse_psf_shape(text)
        except ValueError as exc:
            errors.append(f"{loc}: {exc}")
    for loc, name in [("data.noise", d.noise)] + [(f"noise_sweep.conditions[{i}]", c) for i, c in enumerate(cfg.noise_sweep.conditions)]:
        if name not in {c.value for c in ConditionName} - {"Custom"}:
            errors.append(f"{loc}: unknown noise condition {name!r}")
    for i, code in enumerate(cfg.ablate.codes):
        if code not in {a.value for a in Ablation}:
            errors.append(f"ablate.codes[{i}]: unknown ablation {code!r}")
    for i, m in enumerate(cfg.noise_sweep.methods):
        if m not in ("wd", "lra", "nlr", "pn2n"):
            errors.append(f"noise_sweep.methods[{i}]: unknown method {m!r}")
    if cfg.workers < 1:
        errors.append("workers: must be >= 1")
    if cfg.schema_version != SCHEMA_VERSION:
        errors.append(f"schema_version: expected {SCHEMA_VERSION}, got {cfg.schema_version}")


def from_dict(data: dict) -> ExperimentConfig:
    errors: list[str] = []
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError([f"schema_version: expected {SCHEMA_VERSION}, got {version!r}"])
    cfg = _build(ExperimentConfig, data, "", errors)
    if cfg is not None:
        _semantic_checks(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML syntax: {exc}"]) from None
    return from_dict(data)


def serialize(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def load_config(path) -> ExperimentConfig:
    return parse(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(serialize(cfg), encoding="utf-8")
    return path


def with_overrides(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """Replace whole fields or, for dict values, fields inside a section."""
    updates = {}
    for name, value in sections.items():
        current = getattr(cfg, name)
        if isinstance(value, dict) and dataclasses.is_dataclass(current):
            updates[name] = dataclasses.replace(current, **value)
        else:
            updates[name] = value
    return dataclasses.replace(cfg, **updates)


__all__ = [
    "ConfigError",
    "DataConfig",
    "ExperimentConfig",
    "Scenario",
    "from_dict",
    "load_config",
    "parse",
    "save_config",
    "serialize",
    "to_dict",
    "with_overrides",
]
