"""Experiment configuration: dataclasses plus an INI-style ``key = value`` file format."""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from pathlib import Path

from colt.datagen import SyntheticSpec
from colt.errors import ParameterError, ParseError

MODES = ("baseline", "colt", "random-sample")


@dataclass
class DataConfig:
    source: str = "synthetic"  # or "files"
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)
    pool_size: int = 20000
    probe_per_class: int = 200
    test_per_class: int = 200
    # used when source = files
    id_file: str = ""
    ood_file: str = ""
    probe_file: str = ""
    test_file: str = ""


@dataclass
class EncoderConfig:
    hidden: tuple[int, ...] = (64, 32)
    out_dim: int = 16


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 0.5
    weight_decay: float = 1e-4
    lr_warmup_epochs: int = 0
    aug_strength: float = 1.0


@dataclass
class ColtConfig:
    tau: float = 0.5
    tau_c: float = 1.0
    alpha: float = 0.2
    k_percent: float = 2.0
    momentum: float = 0.9
    budget: int = 1000
    clusters: int = 10
    interval: int = 25
    warmup: int = 20


@dataclass
class EvalConfig:
    fractions: tuple[float, ...] = (1.0, 0.01)
    probe_iters: int = 500
    probe_l2: float = 1e-4
    gamma_percent: float = 10.0
    eval_every: int = 10
    connectivity_samples: int = 300
    connectivity_views: int = 20


@dataclass
class ExperimentConfig:
    seed: int = 0
    mode: str = "colt"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    colt: ColtConfig = field(default_factory=ColtConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.data.source not in ("synthetic", "files"):
            raise ParameterError("data.source must be 'synthetic' or 'files'")
        if self.data.source == "synthetic":
            self.data.spec.validate()
            if self.data.pool_size < 1:
                raise ParameterError("data.pool_size must be positive")
        elif not (self.data.id_file and self.data.test_file):
            raise ParameterError("data.id_file and data.test_file are required when source = files")
        t, c, e = self.train, self.colt, self.eval
        if t.epochs < 1 or t.batch_size < 2:
            raise ParameterError("train.epochs >= 1 and train.batch_size >= 2 required")
        if t.lr < 0 or t.weight_decay < 0 or t.aug_strength < 0 or t.lr_warmup_epochs < 0:
            raise ParameterError("lr, weight_decay, aug_strength and lr_warmup_epochs must be >= 0")
        if not (c.tau > 0 and c.tau_c > 0):
            raise ParameterError("tau and tau_c must be positive")
        if c.alpha < 0 or c.budget < 0:
            raise ParameterError("alpha and budget must be >= 0")
        if not 0 < c.k_percent <= 100:
            raise ParameterError("k_percent must be in (0, 100]")
        if not 0 <= c.momentum < 1:
            raise ParameterError("momentum must be in [0, 1)")
        if c.clusters < 1 or c.interval < 1:
            raise ParameterError("clusters and interval must be >= 1")
        if c.warmup < 1:
            # epoch 0 has no tailness scores yet, so sampling cannot start before epoch 1
            raise ParameterError("warmup must be >= 1")
        if not all(0 < f <= 1 for f in e.fractions) or not e.fractions:
            raise ParameterError("eval fractions must lie in (0, 1]")
        if e.eval_every < 1 or e.connectivity_views < 2:
            raise ParameterError("eval_every >= 1 and connectivity_views >= 2 required")
        return self


_SECTIONS = {
    "experiment": None,
    "data": "data",
    "spec": "data.spec",
    "encoder": "encoder",
    "train": "train",
    "colt": "colt",
    "eval": "eval",
}


def _target(cfg: ExperimentConfig, section: str):
    path = _SECTIONS[section]
    obj = cfg
    for part in (path.split(".") if path else []):
        obj = getattr(obj, part)
    return obj


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, annotation):
    origin = typing.get_origin(annotation)
    if origin is tuple:
        (inner, _ellipsis) = typing.get_args(annotation)
        return tuple(_parse(p.strip(), inner) for p in raw.split(",") if p.strip())
    if annotation is int:
        return int(raw)
    if annotation is float:
        return float(raw)
    return raw


def _scalar_fields(obj):
    hints = typing.get_type_hints(type(obj))
    for f in dataclasses.fields(obj):
        if not dataclasses.is_dataclass(hints[f.name]):
            yield f.name, hints[f.name]


def dump_config(cfg: ExperimentConfig) -> str:
    """Every field, defaults included, so a run directory is self-describing."""
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        obj = _target(cfg, section)
        for name, _ in _scalar_fields(obj):
            lines.append(f"{name} = {_format(getattr(obj, name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(str(exc)) from None
    cfg = ExperimentConfig()
    spec_values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ParseError(f"unknown section [{section}]")
        obj = _target(cfg, section)
        fields = dict(_scalar_fields(obj))
        for key, raw in parser.items(section):
            if key not in fields:
                raise ParseError(f"unknown key {key!r} in [{section}]")
            try:
                value = _parse(raw, fields[key])
            except ValueError as exc:
                raise ParseError(f"[{section}] {key}: {exc}") from None
            if section == "spec":
                spec_values[key] = value
            else:
                setattr(obj, key, value)
    if spec_values:
        cfg.data.spec = dataclasses.replace(cfg.data.spec, **spec_values)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def with_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Copy of ``cfg`` with ``section.key=value`` strings applied, validated like a file."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(dump_config(cfg))
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not (sep and dot and name):
            raise ParseError(f"override must look like section.key=value, got {item!r}")
        if section not in _SECTIONS:
            raise ParseError(f"unknown section [{section}] in override {item!r}")
        parser[section][name.strip()] = value.strip()
    buf = io.StringIO()
    parser.write(buf)
    return parse_config(buf.getvalue())
