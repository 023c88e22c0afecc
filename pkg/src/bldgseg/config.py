"""Run configuration read from an INI-style file.

Sections and keys (defaults in brackets):

    [run]      seed [0], precision [64]
    [network]  preset [reduced] (full | reduced), widths [8,12,16,24,16,12,12], spec_file []
    [train]    learning_rate [0.02], momentum [0.9], weight_decay [5e-5],
               batch_size [5], epochs [10], validation_fraction [0.1]
    [scene]    every SceneConfig field; pairs are written "lo, hi"
    [eval]     min_area [4]

Unknown sections or keys are rejected. Comments start with ";" or "#", also inline.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .datapipe import SceneConfig
from .netgraph import NetworkSpec, full_network, reduced_network
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class NetworkConfig:
    preset: str = "reduced"
    widths: tuple = (8, 12, 16, 24, 16, 12, 12)
    spec_file: str = ""

    def build(self) -> NetworkSpec:
        if self.spec_file:
            with open(self.spec_file) as fh:
                return NetworkSpec.from_text(fh.read())
        if self.preset == "full":
            return full_network()
        if self.preset == "reduced":
            return reduced_network(self.widths)
        raise ConfigError(f"unknown network preset {self.preset!r}")


@dataclass
class EvalConfig:
    min_area: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    precision: int = 64
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed, precision=self.precision)


_SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "scene": SceneConfig, "eval": EvalConfig}
_RUN_KEYS = {"seed": int, "precision": int}
# fields owned by [run]
_SKIP = {"train": {"seed", "precision"}}


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in parts)
        return type(default)(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e).replace("\n", " ")) from None
    cfg = RunConfig()
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "run":
            for key, raw in items.items():
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown key [run] {key}")
                setattr(cfg, key, _convert(raw, _RUN_KEYS[key](0), f"[run] {key}"))
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        target = getattr(cfg, section)
        names = {f.name for f in dataclasses.fields(target)} - _SKIP.get(section, set())
        updates = {}
        for key, raw in items.items():
            if key not in names:
                raise ConfigError(f"unknown key [{section}] {key}")
            updates[key] = _convert(raw, getattr(target, key), f"[{section}] {key}")
        try:
            setattr(cfg, section, dataclasses.replace(target, **updates))
        except ValueError as e:
            raise ConfigError(f"[{section}] {e}") from None
    if cfg.precision not in (32, 64):
        raise ConfigError("[run] precision must be 32 or 64")
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        return str(v)

    lines = ["[run]", f"seed = {cfg.seed}", f"precision = {cfg.precision}", ""]
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            if f.name in _SKIP.get(section, set()):
                continue
            lines.append(f"{f.name} = {fmt(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
