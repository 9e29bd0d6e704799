"""Experiment configuration stored as TOML.

Layout::

    [paths]      data, codec, checkpoint, reports
    [experiment] seed, scenario, fmr_targets, provider, threads
    [codec]      CodecConfig fields
    [demorph]    DemorphConfig fields

Every section and key is optional; unknown ones are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .codec import CodecConfig
from .demorpher import DemorphConfig
from .errors import ConfigError, ConfigParseError


@dataclass
class Paths:
    data: str = "data"
    codec: str = "codec.ckpt"
    checkpoint: str = "demorpher.ckpt"
    reports: str = "reports"


@dataclass
class ExperimentConfig:
    paths: Paths = field(default_factory=Paths)
    codec: CodecConfig = field(default_factory=CodecConfig)
    demorph: DemorphConfig = field(default_factory=DemorphConfig)
    seed: int = 0
    scenario: int = 3
    fmr_targets: tuple = (0.1, 0.01, 0.001)
    provider: str = "toy16"
    threads: int = 0

    def validate(self):
        if self.scenario not in (1, 2, 3):
            raise ConfigError(f"experiment.scenario must be 1, 2 or 3, got {self.scenario}")
        if not self.fmr_targets or any(not 0.0 < f <= 1.0 for f in self.fmr_targets):
            raise ConfigError("experiment.fmr_targets must be non-empty values in (0, 1]")
        if self.threads < 0:
            raise ConfigError("experiment.threads must be >= 0 (0 = all cores)")
        if not self.provider:
            raise ConfigError("experiment.provider must be 'toy16' or an embedding file path")
        self.codec.validate()
        self.demorph.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "paths": dataclasses.asdict(self.paths),
            "experiment": {
                "seed": self.seed,
                "scenario": self.scenario,
                "fmr_targets": list(self.fmr_targets),
                "provider": self.provider,
                "threads": self.threads,
            },
            "codec": dataclasses.asdict(self.codec),
            "demorph": dataclasses.asdict(self.demorph),
        }

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def _build(cls, section: str, values):
    if not isinstance(values, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
    default = cls()
    for key, val in values.items():
        want = type(getattr(default, key))
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if want is tuple and isinstance(val, list):
            val = tuple(val)
        if not isinstance(val, want) or (want is int and isinstance(val, bool)):
            raise ConfigError(f"{section}.{key} must be {want.__name__}, got {type(val).__name__}")
        setattr(default, key, val)
    return default


_EXPERIMENT_KEYS = {"seed", "scenario", "fmr_targets", "provider", "threads"}


def from_dict(data: dict) -> ExperimentConfig:
    for key in data:
        if key not in ("paths", "experiment", "codec", "demorph"):
            raise ConfigError(f"unknown section or key {key!r}")
    exp = data.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("[experiment] must be a table")
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key experiment.{key}")
    cfg = ExperimentConfig(
        paths=_build(Paths, "paths", data.get("paths", {})),
        codec=_build(CodecConfig, "codec", data.get("codec", {})),
        demorph=_build(DemorphConfig, "demorph", data.get("demorph", {})),
    )
    for key, val in exp.items():
        if key == "fmr_targets":
            if not isinstance(val, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
                raise ConfigError("experiment.fmr_targets must be a list of numbers")
            val = tuple(float(v) for v in val)
        elif key == "provider":
            if not isinstance(val, str):
                raise ConfigError("experiment.provider must be a string")
        elif not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"experiment.{key} must be an integer")
        setattr(cfg, key, val)
    return cfg.validate()


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        msg = getattr(exc, "msg", str(exc))
        raise ConfigParseError(f"malformed config: {msg}", getattr(exc, "lineno", None),
                               getattr(exc, "colno", None)) from None
    return from_dict(data)


def load_config(path) -> ExperimentConfig:
    """Parse, default and validate a TOML experiment file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return loads(path.read_text(encoding="utf-8"))
