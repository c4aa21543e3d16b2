"""Key-value experiment configs and sweep grids.

A config file is INI-like.  Keys may sit under a section (``[data]`` then
``dim = 16``) or carry the section as a dotted prefix (``data.dim = 16``);
both resolve to the :class:`~negsampling.harness.ExperimentConfig` field of
the same name.  A grid file adds a ``[grid]`` section whose values are
comma-separated lists; the sweep is their cartesian product over the base
config, in file order with the last key varying fastest.

    [data]
    profile = step
    imbalance_ratio = 100

    [grid]
    sampler = uniform, within_batch
    weighting = constant, relative
    seed = 0, 1, 2
"""

from __future__ import annotations

import configparser
import itertools
import typing
from dataclasses import fields
from pathlib import Path

from .harness import ExperimentConfig, with_overrides

SECTIONS = {
    "data": ("profile", "num_labels", "imbalance_ratio", "dim", "n_train", "n_test_per_class",
             "noise_scale", "data_seed"),
    "model": ("model", "hidden_width", "activation"),
    "objective": ("loss", "sampler", "weighting", "m", "exclude_positive", "batch_mode", "relative_base"),
    "optim": ("lr", "momentum", "weight_decay", "epochs", "batch_size"),
    "run": ("seed", "slice_hi", "slice_lo", "name"),
}
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_TOP = "__top__"


class ConfigError(ValueError):
    """Raised for unknown keys, bad values or malformed files."""


def _field_types() -> dict[str, type]:
    hints = typing.get_type_hints(ExperimentConfig)
    out = {}
    for f in fields(ExperimentConfig):
        hint = hints[f.name]
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        out[f.name] = args[0] if args else hint
    return out


_TYPES = _field_types()


def coerce(key: str, raw: str):
    """Convert the text of one value to the type of the config field ``key``."""
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _TYPES[key]
    text = raw.strip()
    if key == "data_seed" and text.lower() in ("", "none"):
        return None
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _resolve_key(section: str, key: str) -> str:
    if "." in key:
        section, _, key = key.rpartition(".")
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    if section not in (_TOP, "grid") and _SECTION_OF[key] != section:
        raise ConfigError(f"key {key!r} belongs in section [{_SECTION_OF[key]}], not [{section}]")
    return key


def _read(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(f"[{_TOP}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for sec in parser.sections():
        if sec not in (_TOP, "grid") and sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    return parser


def parse_overrides(text: str) -> tuple[dict, dict]:
    """``(fixed values, grid lists)`` from config text."""
    parser = _read(text)
    fixed: dict = {}
    grid: dict = {}
    for sec in parser.sections():
        for key, raw in parser.items(sec):
            name = _resolve_key(sec, key)
            if sec == "grid":
                values = [v for v in raw.split(",") if v.strip()]
                if not values:
                    raise ConfigError(f"grid key {name!r} has no values")
                grid[name] = [coerce(name, v) for v in values]
            else:
                if name in fixed:
                    raise ConfigError(f"duplicate key {name!r}")
                fixed[name] = coerce(name, raw)
    return fixed, grid


def build_config(overrides: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        return with_overrides(base or ExperimentConfig(), **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path, **extra) -> ExperimentConfig:
    """One config from a file; keyword overrides are applied last."""
    fixed, grid = parse_overrides(Path(path).read_text())
    if grid:
        raise ConfigError("a [grid] section is only allowed in sweep grids")
    return build_config({**fixed, **extra})


def expand_grid(fixed: dict, grid: dict, **extra) -> list[ExperimentConfig]:
    keys = list(grid)
    configs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        configs.append(build_config({**fixed, **dict(zip(keys, combo)), **extra}))
    return configs


def load_grid(path: str | Path, **extra) -> list[ExperimentConfig]:
    fixed, grid = parse_overrides(Path(path).read_text())
    return expand_grid(fixed, grid, **extra)


def dump_config(config: ExperimentConfig) -> str:
    """Render a config in the file format; ``load_config`` reads it back unchanged."""
    lines = []
    values = {f.name: getattr(config, f.name) for f in fields(config)}
    for sec, keys in SECTIONS.items():
        lines.append(f"[{sec}]")
        for key in keys:
            v = values[key]
            lines.append(f"{key} = {'none' if v is None else v}")
        lines.append("")
    return "\n".join(lines)
