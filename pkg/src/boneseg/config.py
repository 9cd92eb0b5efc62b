"""Flat ``key = value`` run configuration.

Keys are dotted (``train.epochs``); values are parsed according to the type
of the default. Tuples are whitespace separated, booleans are
``true``/``false``. Unknown keys are rejected. Lines starting with ``#`` are
comments.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .network import NetworkConfig
from .phantom import CorruptionSpec, PhantomSpec
from .selftrain import RoundPlan
from .trainer import TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "net.num_classes": 3,
    "net.base_channels": 16,
    "net.head_init_std": 0.1,
    "train.epochs": 40,
    "train.lr0": 0.001,
    "train.lr_decay": 0.95,
    "train.decay_every": 10,
    "train.flip_prob": 0.0,
    "train.flip_axes": (True, False, False),
    "train.labels": "gt",
    "selftrain.rounds": 2,
    "selftrain.augment_copies": 1,
    "selftrain.keep_original_gt": True,
    "selftrain.warm_start": True,
    "selftrain.round_epochs": 0,
    "selftrain.save_volumes": True,
    "augment.sigma_mm": 2.0,
    "augment.control_spacing_mm": 32.0,
    "phantom.n_cases": 20,
    "phantom.dims": (48, 48, 32),
    "phantom.spacing": (1.0, 1.0, 1.0),
    "corruption.severity": 0.5,
    "corruption.jitter_radius": 2,
    "corruption.dropout_prob": 0.15,
    "corruption.flip_prob": 0.3,
    "crossval.k": 5,
    "crossval.reference": "clean",
    "metrics.hd_percentile": 100.0,
    "preprocess.spacing": (1.0, 1.0, 1.0),
    "preprocess.dims": (144, 144, 80),
}

_CHOICES = {"train.labels": ("gt", "clean"), "crossval.reference": ("clean", "gt")}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: str, text: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            value = _parse_bool(text)
        elif isinstance(default, tuple):
            parts = text.split()
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} values, got {len(parts)}")
            value = tuple(
                _parse_bool(p) if isinstance(d, bool) else type(d)(p) for p, d in zip(parts, default)
            )
        elif isinstance(default, int):
            value = int(text)
        elif isinstance(default, float):
            value = float(text)
        else:
            value = text.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key} must be one of {_CHOICES[key]}, got {value!r}")
    return value


class RunConfig(Mapping):
    """Resolved configuration: defaults overlaid with file and CLI overrides."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self._values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            self._values[k] = parse_value(k, v) if isinstance(v, str) else v

    def __getitem__(self, key):
        return self._values[key]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            if key not in DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            values[key] = parse_value(key, value.strip())
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def updated(self, **overrides) -> "RunConfig":
        values = dict(self._values)
        values.update(overrides)
        return RunConfig(values)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self._values.items()))

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    # typed views --------------------------------------------------------

    def network_config(self) -> NetworkConfig:
        return _build(NetworkConfig, num_classes=self["net.num_classes"],
                      base_channels=self["net.base_channels"], head_init_std=self["net.head_init_std"])

    def train_config(self) -> TrainConfig:
        return _build(
            TrainConfig,
            epochs=self["train.epochs"],
            lr0=self["train.lr0"],
            lr_decay=self["train.lr_decay"],
            decay_every=self["train.decay_every"],
            seed=self["seed"],
            flip_prob=self["train.flip_prob"],
            flip_axes=self["train.flip_axes"],
        )

    def round_plan(self) -> RoundPlan:
        return _build(
            RoundPlan,
            rounds=self["selftrain.rounds"],
            augment_copies=self["selftrain.augment_copies"],
            keep_original_gt=self["selftrain.keep_original_gt"],
            warm_start=self["selftrain.warm_start"],
            sigma_mm=self["augment.sigma_mm"],
            control_spacing_mm=self["augment.control_spacing_mm"],
            round_epochs=self["selftrain.round_epochs"] or None,
        )

    def phantom_spec(self) -> PhantomSpec:
        return _build(PhantomSpec, dims=self["phantom.dims"], spacing=self["phantom.spacing"], seed=self["seed"])

    def corruption_spec(self) -> CorruptionSpec:
        return _build(
            CorruptionSpec,
            severity=self["corruption.severity"],
            jitter_radius=self["corruption.jitter_radius"],
            dropout_prob=self["corruption.dropout_prob"],
            flip_prob=self["corruption.flip_prob"],
            seed=self["seed"],
        )


def _build(cls, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc
