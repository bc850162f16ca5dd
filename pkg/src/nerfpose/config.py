"""Run configuration: documented defaults plus a key=value config file.

The file format is one `section.key = value` per line with `#`
comments. Unknown keys are rejected with the nearest valid key named;
values failing to parse as the declared type are rejected with their
location.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field as dc_field, fields, replace
from pathlib import Path

import numpy as np

from .errors import MissingFile, TypeMismatch, UnknownKey
from .estimator import EstimatorConfig, RefineConfig, ScorerSpec
from .sampling import SphereSampling
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = TrainConfig()
    sphere: SphereSampling = SphereSampling()
    refine: RefineConfig = RefineConfig()
    estimator: EstimatorConfig = EstimatorConfig()
    scorer: ScorerSpec = ScorerSpec()
    background: tuple = (0.0, 0.0, 0.0)
    threads: int = 0          # 0 = leave torch at its default


_SECTIONS = {
    "train": TrainConfig,
    "sphere": SphereSampling,
    "refine": RefineConfig,
    "estimator": EstimatorConfig,
    "scorer": ScorerSpec,
}

_TOP_LEVEL = {"background": tuple, "threads": int}


def known_keys() -> list[str]:
    keys = list(_TOP_LEVEL)
    for section, cls in _SECTIONS.items():
        keys.extend(f"{section}.{f.name}" for f in fields(cls))
    return sorted(keys)


def _parse_value(raw: str, target_type, path, lineno, key):
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            if "." in raw or "e" in raw.lower():
                raise ValueError(f"not an integer: {raw!r}")
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        if target_type is tuple:
            return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError as e:
        raise TypeMismatch(f"{path}:{lineno}: key {key}: {e}") from e
    raise TypeMismatch(f"{path}:{lineno}: key {key}: unsupported type {target_type}")


def _field_type(cls, name: str):
    f = {f.name: f for f in fields(cls)}[name]
    default = getattr(cls(), name)
    if isinstance(default, bool):
        return bool
    if isinstance(default, (int, np.integer)):
        return int
    if isinstance(default, (float, np.floating)):
        return float
    if isinstance(default, tuple):
        return tuple
    if isinstance(default, str):
        return str
    raise TypeError(f"unsupported config field {cls.__name__}.{name}")


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Parse a config file over the defaults (or a given base config)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    cfg = base if base is not None else RunConfig()
    overrides: dict[str, dict] = {s: {} for s in _SECTIONS}
    top: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise TypeMismatch(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key in _TOP_LEVEL:
                top[key] = _parse_value(raw, _TOP_LEVEL[key], path, lineno, key)
                continue
            if "." in key:
                section, name = key.split(".", 1)
                cls = _SECTIONS.get(section)
                if cls is not None and name in {f.name for f in fields(cls)}:
                    value = _parse_value(raw, _field_type(cls, name),
                                         path, lineno, key)
                    if section == "sphere" and name == "radii":
                        value = tuple(float(v) for v in np.atleast_1d(value))
                    overrides[section][name] = value
                    continue
            close = difflib.get_close_matches(key, known_keys(), n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise UnknownKey(f"{path}:{lineno}: unknown key {key!r}{hint}")
    parts = {}
    for section, cls in _SECTIONS.items():
        current = getattr(cfg, section)
        parts[section] = replace(current, **overrides[section]) \
            if overrides[section] else current
    return RunConfig(**parts, background=tuple(top.get("background", cfg.background)),
                     threads=int(top.get("threads", cfg.threads)))
