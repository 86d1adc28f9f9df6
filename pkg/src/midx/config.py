"""Flat ``key = value`` config files with ``#`` comments."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    dataset: str = ""
    output_dir: str = "run"
    min_interactions: int = 10
    threshold: float | None = None
    split_ratio: float = 0.8
    split_seed: int = 0


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def read_pairs(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["config"])


def _coerce(name, type_name, raw):
    type_name = str(type_name)
    try:
        if raw.strip().lower() in ("none", "") and "None" in type_name:
            return None
        if type_name.startswith("bool"):
            return _BOOL[raw.strip().lower()]
        if type_name.startswith("int"):
            return int(raw)
        if type_name.startswith("float"):
            return float(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {name}: {raw!r} (expected {type_name})") from None
    return raw.strip()


def build(cls, pairs: dict, strict: bool = True):
    """Instantiate dataclass ``cls`` from string pairs; unknown keys are an error when ``strict``."""
    types = {f.name: f.type for f in fields(cls)}
    unknown = set(pairs) - set(types)
    if strict and unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(k, types[k], v) for k, v in pairs.items() if k in types}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_train_config(path) -> TrainConfig:
    return build(TrainConfig, read_pairs(path))


def load_pipeline_config(path):
    """Split one file into a :class:`PipelineConfig` and a :class:`TrainConfig`."""
    pairs = read_pairs(path)
    pipe_keys = {f.name for f in fields(PipelineConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(pairs) - pipe_keys - train_keys
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    pipe = build(PipelineConfig, {k: v for k, v in pairs.items() if k in pipe_keys})
    train = build(TrainConfig, {k: v for k, v in pairs.items() if k in train_keys})
    return pipe, train
