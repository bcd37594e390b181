"""Flat ``key = value`` run configuration shared by the pipeline and the CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .spatial import ADJACENCY


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    seed: int = 0
    frames: int = 10
    image_height: int = 48
    image_width: int = 48
    classes: int = 3
    n_train: int = 150
    n_test: int = 90
    # backbone
    channels: int = 8
    head_channels: int = 32
    footprint: int = 3
    split: int = 3
    attention_norm: str = "divide"
    # spatial sampler
    d: int = 2
    crop_size: int = 16
    k: int = 3
    adjacency: str = "manhattan2"
    suppression: float = 0.5
    # hallucinator
    hallucinator_hidden: int = 8
    # temporal sampler
    max_skip: int = 2
    tau: float = 1.0
    theta_e: float = 1.0
    normalize_efficiency_loss: bool = True
    policy_hidden: int = 128
    policy_layers: int = 2
    # classifier
    classifier_hidden: int = 32
    theta_h: tuple = (1.0, 1.0, 1.0)
    # optimisation
    learning_rate: float = 0.01
    momentum: float = 0.9
    milestones: tuple = (8, 11)
    gamma: float = 0.1
    hallucinator_learning_rate: float = 0.01
    classifier_learning_rate: float = 0.01
    temporal_learning_rate: float = 0.003
    batch_size: int = 16
    epochs_features: int = 12
    epochs_hallucinator: int = 25
    epochs_spatial: int = 40
    epochs_temporal: int = 30

    def __post_init__(self):
        self.theta_h = tuple(float(v) for v in self.theta_h)
        self.milestones = tuple(int(v) for v in self.milestones)
        checks = [
            (self.frames >= 1, "frames must be >= 1"),
            (2 <= self.classes <= 4, "classes must be between 2 and 4"),
            (self.n_train >= 0 and self.n_test >= 0, "dataset sizes must be >= 0"),
            (self.d >= 1, "d must be >= 1"),
            (self.image_height % self.d == 0 and self.image_width % self.d == 0, "image size must be divisible by d"),
            ((self.image_height // self.d) % 4 == 0 and (self.image_width // self.d) % 4 == 0, "low-res size must be divisible by 4"),
            (self.crop_size % 4 == 0 and 4 <= self.crop_size <= min(self.image_height, self.image_width), "crop_size must be a multiple of 4 no larger than the image"),
            (self.k >= 0, "k must be >= 0"),
            (self.adjacency in ADJACENCY, f"adjacency must be one of {sorted(ADJACENCY)}"),
            (0.0 < self.suppression < 1.0, "suppression must lie in (0, 1)"),
            (self.footprint >= 1 and self.footprint % 2 == 1, "footprint must be a positive odd integer"),
            (3 <= self.split <= 6, "split must lie in [3, 6]: the attention tap is layer 3 of 6"),
            (self.attention_norm in ("divide", "multiply"), "attention_norm must be divide or multiply"),
            (self.max_skip >= 1, "max_skip must be >= 1"),
            (self.tau > 0, "tau must be positive"),
            (self.theta_e >= 0, "theta_e must be >= 0"),
            (len(self.theta_h) == 3 and min(self.theta_h) >= 0, "theta_h must be three non-negative weights"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (min(self.epochs_features, self.epochs_hallucinator, self.epochs_spatial, self.epochs_temporal) >= 0, "epochs must be >= 0"),
            (min(self.channels, self.head_channels, self.hallucinator_hidden, self.policy_hidden, self.policy_layers, self.classifier_hidden) >= 1, "layer sizes must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def image_size(self):
        return (self.image_height, self.image_width)

    @property
    def low_size(self):
        return (self.image_height // self.d, self.image_width // self.d)

    @property
    def attention_size(self):
        h, w = self.low_size
        return (h // 4, w // 4)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(_fmt(v) for v in value)
            else:
                value = _fmt(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, **overrides):
        values = {}
        types = {f.name: type(f.default) for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(types[key], value, key)
        values.update(overrides)
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path=None, **overrides):
        if path is None:
            return cls(**overrides)
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        return cls.from_text(text, **overrides)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(kind, value, key):
    try:
        if kind is bool:
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if kind is tuple:
            return tuple(float(v) for v in value.split(",") if v.strip())
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None
