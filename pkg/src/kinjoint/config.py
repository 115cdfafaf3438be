"""Experiment configuration: one JSON document with dotted-key overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data.augment import AugmentConfig
from .data.protocols import PROTOCOLS
from .data.synth import SynthConfig
from .joint import LossWeights
from .models import BackboneConfig
from .training import Method, TrainSchedule


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    manifest: str | None = None
    synthetic: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    protocol: str = "mixed"
    method: str = "jlnet_full"
    folds: int = 5
    fold_indices: list | None = None  # None runs every fold
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    output_dir: str = "runs"

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        try:
            Method(self.method)
        except ValueError:
            raise ConfigError(f"method must be one of {[m.value for m in Method]}, got {self.method!r}") from None
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.fold_indices is not None:
            bad = [i for i in self.fold_indices if not 0 <= i < self.folds]
            if bad or len(set(self.fold_indices)) != len(self.fold_indices):
                raise ConfigError(f"fold_indices {self.fold_indices} invalid for {self.folds} folds")
        try:
            self.schedule.validate()
            self.loss_weights.validate()
            self.backbone.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @property
    def run_folds(self):
        return list(range(self.folds)) if self.fold_indices is None else sorted(self.fold_indices)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data, "").validate()

    def training_key(self):
        """Settings that determine the trained checkpoints.

        Protocol and output_dir only affect evaluation, and JLNet-full and
        JLNet-double-dagger share one trained network.
        """
        d = self.to_dict()
        d.pop("protocol")
        d.pop("output_dir")
        method = Method(self.method)
        d["method"] = "jlnet" if method in (Method.JLNET_FULL, Method.JLNET_DDAGGER) else method.value
        return d

    def run_id(self):
        canon = json.dumps(self.training_key(), sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
        return f"{self.training_key()['method']}-{digest}"

    def run_dir(self):
        return Path(self.output_dir) / self.run_id()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def parse_override(text):
    """``a.b=VALUE`` -> (["a", "b"], value); VALUE is JSON, else a bare string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data, overrides):
    data = json.loads(json.dumps(data))
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {k} is not a section")
        node[keys[-1]] = value
    return data


def load_config(path=None, overrides=()):
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(apply_overrides(data, overrides))
