"""Declarative experiment configuration: INI sections over the dataclasses.

A config file has four sections, [data], [train], [eval], [output], whose
keys map one-to-one onto SynthConfig, TrainConfig, EvalConfig and
OutputConfig fields (with `lambda` spelled out for TrainConfig.lam).
Unknown sections or keys are rejected by name. [train] additionally accepts
a `mode` shorthand (xid | weighted | soft | robust) that sets the two
enable flags and may not be combined with setting them explicitly.

The resolved config is written next to every command's outputs so a run can
be reproduced exactly from its output directory.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import InvalidConfig
from .synth_data import SynthConfig
from .trainer import MODES, TrainConfig

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


@dataclass(frozen=True)
class EvalConfig:
    eval_per_class: int = 20
    num_bins: int = 50
    hist_min: float = -1.0
    hist_max: float = 1.0
    few_shot_n: int = 1
    few_shot_trials: int = 20


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/exp"


@dataclass
class ExperimentConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_SECTIONS = {"data": SynthConfig, "train": TrainConfig,
             "eval": EvalConfig, "output": OutputConfig}
_KEY_ALIASES = {"train": {"lambda": "lam"}}


def _coerce(section: str, key: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise InvalidConfig(
            f"[{section}] {key} = {raw!r} is not a valid {target_type.__name__}") from exc


def _parse_section(section: str, items: dict[str, str]):
    cls = _SECTIONS[section]
    aliases = _KEY_ALIASES.get(section, {})
    by_name = {f.name: f for f in fields(cls)}
    kwargs = {}
    mode = None
    for key, raw in items.items():
        name = aliases.get(key, key)
        if section == "train" and key == "mode":
            mode = raw.strip().lower()
            if mode not in MODES:
                raise InvalidConfig(f"[train] mode must be one of {sorted(MODES)}, got {raw!r}")
            continue
        if name not in by_name:
            raise InvalidConfig(f"unknown key {key!r} in section [{section}]")
        kwargs[name] = _coerce(section, key, raw, _field_type(cls, name))
    if mode is not None:
        if "enable_weighting" in kwargs or "enable_soft_targets" in kwargs:
            raise InvalidConfig("[train] mode may not be combined with enable_* keys")
        kwargs["enable_weighting"], kwargs["enable_soft_targets"] = MODES[mode]
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc


def _field_type(cls, name: str):
    # dataclass fields carry string annotations under `from __future__ import
    # annotations`; the types used here are all builtins
    ann = cls.__dataclass_fields__[name].type
    if isinstance(ann, str):
        return {"int": int, "float": float, "bool": bool, "str": str}[ann]
    return ann


def load_config(path) -> ExperimentConfig:
    """Parse an INI experiment file, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise InvalidConfig(f"cannot parse config file: {exc}") from exc
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise InvalidConfig(f"unknown section [{section}]")
        parsed = _parse_section(section, dict(parser.items(section)))
        cfg = replace(cfg, **{section: parsed})
    return cfg


def dump_config(cfg: ExperimentConfig, path) -> None:
    """Write the fully resolved config (every key explicit) as INI."""
    lines = []
    for section, value in (("data", cfg.data), ("train", cfg.train),
                           ("eval", cfg.eval), ("output", cfg.output)):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(value):
            key = "lambda" if (section == "train" and f.name == "lam") else f.name
            lines.append(f"{key} = {getattr(value, f.name)}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
