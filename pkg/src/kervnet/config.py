"""Experiment configuration files (INI with sections).

Example::

    [experiment]
    name = vibration-ad
    seed = 0
    out = runs/vibration-ad

    [model]
    builder = helicopter-ae
    variants = CNN, KCNN-d3

    [train]
    optimizer = adam
    learning_rate = 0.001

Unknown sections or keys are rejected so that typos surface as configuration
errors instead of silently falling back to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data.har import DEFAULT_CHANNELS
from .data.synth import SynthConfig
from .errors import ConfigurationError
from .models import BUILDERS, HELICOPTER_VARIANTS
from .training import TrainSchedule

EXPERIMENTS = ("har-classify", "har-ad", "vibration-ad")
HAR_AE_ENCODERS = ("conv", "kerv-d3")

# builder choices per experiment, with the default variant list
_MODEL_DEFAULTS = {
    "har-classify": ("simplified-cnn", ()),
    "har-ad": ("har-ae", HAR_AE_ENCODERS),
    "vibration-ad": ("helicopter-ae", HELICOPTER_VARIANTS),
}


@dataclass(frozen=True)
class ModelConfig:
    builder: str = "simplified-cnn"
    variants: tuple = ()
    grid: bool = False
    cv_folds: int = 0


@dataclass(frozen=True)
class DataConfig:
    har_root: str = ""
    channels: tuple = DEFAULT_CHANNELS
    validation_fraction: float = 0.2
    # vibration surrogate sample counts
    n_train: int = 800
    n_normal: int = 300
    n_abnormal: int = 300


@dataclass(frozen=True)
class DetectorConfig:
    window_length: int = 0
    percentile: float = 99.0
    calibration_fraction: float = 0.10


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    out: str = "runs/out"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataConfig = field(default_factory=DataConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        m = self.model
        if self.experiment == "har-classify":
            if m.builder not in BUILDERS:
                raise ConfigurationError(f"har-classify builder must be one of {tuple(BUILDERS)}")
        elif m.builder != _MODEL_DEFAULTS[self.experiment][0]:
            raise ConfigurationError(f"{self.experiment} builder must be {_MODEL_DEFAULTS[self.experiment][0]!r}")
        allowed = {"har-ad": HAR_AE_ENCODERS, "vibration-ad": HELICOPTER_VARIANTS}.get(self.experiment)
        if allowed is not None:
            if not m.variants:
                raise ConfigurationError(f"{self.experiment} needs at least one variant")
            bad = [v for v in m.variants if v not in allowed]
            if bad:
                raise ConfigurationError(f"unknown variants {bad}; expected a subset of {allowed}")
        elif m.variants:
            raise ConfigurationError("har-classify takes no variants; use grid = true for the variant grid")
        if m.cv_folds == 1 or m.cv_folds < 0:
            raise ConfigurationError("cv_folds must be 0 (off) or >= 2")
        if m.cv_folds and self.experiment != "har-classify":
            raise ConfigurationError("cross-validation applies to har-classify only")
        if not 0.0 < self.data.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in (0, 1)")
        if not 0.0 < self.detector.calibration_fraction < 1.0:
            raise ConfigurationError("calibration_fraction must lie in (0, 1)")
        if not 0.0 <= self.detector.percentile <= 100.0:
            raise ConfigurationError("percentile must lie in [0, 100]")
        if self.detector.window_length < 0:
            raise ConfigurationError("window_length must be >= 0")
        if min(self.data.n_train, self.data.n_normal, self.data.n_abnormal) < 0:
            raise ConfigurationError("sample counts must be non-negative")

    @property
    def uses_har(self) -> bool:
        return self.experiment in ("har-classify", "har-ad")

    def validate_paths(self) -> None:
        """Referenced paths must exist; only HAR experiments reference any."""
        if self.uses_har:
            if not self.data.har_root:
                raise ConfigurationError(f"{self.experiment} needs [data] har_root")
            if not Path(self.data.har_root).is_dir():
                raise ConfigurationError(f"har_root {self.data.har_root!r} is not a directory")

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed),
                          synth=replace(cfg.synth, seed=seed))
        if out is not None:
            cfg = replace(cfg, out=str(out))
        return cfg

    def to_ini(self) -> str:
        return dump_config(self)


# ---------------------------------------------------------------- value codecs


def _parse_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_list(raw: str) -> tuple:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _decode(kind, raw: str):
    if kind is bool:
        return _parse_bool(raw)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind == "floats":
        return tuple(float(v) for v in _parse_list(raw))
    if kind == "strs":
        return _parse_list(raw)
    return raw.strip()


def _encode(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_encode(v) for v in value)
    return str(value)


# field name -> decoder kind, per section
_FIELD_KINDS = {
    "model": {"builder": str, "variants": "strs", "grid": bool, "cv_folds": int},
    "train": {"optimizer": str, "learning_rate": float, "momentum": float, "decay": float,
              "batch_size": int, "max_epochs": int, "patience": int},
    "data": {"har_root": str, "channels": "strs", "validation_fraction": float,
             "n_train": int, "n_normal": int, "n_abnormal": int},
    "detector": {"window_length": int, "percentile": float, "calibration_fraction": float},
    "synth": {"sample_rate": float, "sample_length": int, "base_freqs": "floats",
              "amplitudes": "floats", "noise_std": float, "anomaly_kind": str,
              "anomaly_magnitude": float, "harmonic": float, "freq_jitter": float,
              "gain_jitter": float, "noise_jitter": float},
}
_EXPERIMENT_KEYS = {"name", "seed", "out"}


def _section(parser, name: str) -> dict:
    if not parser.has_section(name):
        return {}
    kinds = _FIELD_KINDS[name]
    out = {}
    for key, raw in parser.items(name):
        if key not in kinds:
            raise ConfigurationError(f"[{name}] unknown key {key!r}")
        try:
            out[key] = _decode(kinds[key], raw)
        except ValueError as exc:
            raise ConfigurationError(f"[{name}] {key}: {exc}") from exc
    return out


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    unknown = set(parser.sections()) - set(_FIELD_KINDS) - {"experiment"}
    if unknown:
        raise ConfigurationError(f"unknown sections {sorted(unknown)}")
    if not parser.has_section("experiment"):
        raise ConfigurationError("missing [experiment] section")
    exp = dict(parser.items("experiment"))
    extra = set(exp) - _EXPERIMENT_KEYS
    if extra:
        raise ConfigurationError(f"[experiment] unknown keys {sorted(extra)}")
    if "name" not in exp:
        raise ConfigurationError("[experiment] name is required")
    if "seed" not in exp:
        raise ConfigurationError("[experiment] seed is required")
    try:
        seed = int(exp["seed"])
    except ValueError as exc:
        raise ConfigurationError(f"[experiment] seed: {exc}") from exc
    name = exp["name"].strip()

    model = _section(parser, "model")
    if name in _MODEL_DEFAULTS:
        builder, variants = _MODEL_DEFAULTS[name]
        model.setdefault("builder", builder)
        model.setdefault("variants", variants)
    train = _section(parser, "train")
    if model.get("builder") == "ronao-cnn" and not parser.has_section("train"):
        schedule = TrainSchedule.ronao(seed)
    else:
        schedule = TrainSchedule(**train, seed=seed)
    detector = _section(parser, "detector")
    if name == "vibration-ad":
        detector.setdefault("window_length", 512)
    return ExperimentConfig(
        experiment=name,
        seed=seed,
        out=exp.get("out", f"runs/{name}").strip(),
        model=ModelConfig(**model),
        train=schedule,
        data=DataConfig(**_section(parser, "data")),
        detector=DetectorConfig(**detector),
        synth=SynthConfig(**_section(parser, "synth"), seed=seed),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    return parse_config(path.read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; ``parse_config(dump_config(c)) == c``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["experiment"] = {"name": cfg.experiment, "seed": str(cfg.seed), "out": cfg.out}
    objects = {"model": cfg.model, "train": cfg.train, "data": cfg.data,
               "detector": cfg.detector, "synth": cfg.synth}
    for section, obj in objects.items():
        names = {f.name for f in fields(obj)}
        parser[section] = {k: _encode(getattr(obj, k)) for k in _FIELD_KINDS[section] if k in names}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" if v else f"{k} =" for k, v in parser.items(section)]
        lines.append("")
    return "\n".join(lines)
