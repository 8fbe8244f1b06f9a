"""Pipeline configuration: a flat TOML table, overridable key by key."""

from __future__ import annotations

import os
import re
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dedup import DEFAULT_H_S, HASH_BITS
from .export import parse_flavors
from .frames import DEFAULT_FILENAME_PATTERN, Rotation, parse_rotation_map

PLACEHOLDERS = ("{frames_dir}", "{model_dir}")
_PATH_KEYS = ("input_root", "output_root", "exclusion_list")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    input_root: Path
    output_root: Path
    k: int
    h_b: float
    pose_cmd: str
    h_b_step: float = 0.001
    h_s: int = DEFAULT_H_S
    min_pose_coverage: float = 0.9
    max_retries: int = 1
    flavor: str = "both"
    strict: bool = False
    rotation_map: dict[str, Rotation] = field(default_factory=dict)
    exclusion_list: Path | None = None
    filename_pattern: str = DEFAULT_FILENAME_PATTERN
    decode_cmd: str | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "input_root", Path(self.input_root))
        object.__setattr__(self, "output_root", Path(self.output_root))
        if self.exclusion_list is not None:
            object.__setattr__(self, "exclusion_list", Path(self.exclusion_list))
        try:
            object.__setattr__(self, "rotation_map", parse_rotation_map(self.rotation_map))
        except ValueError as exc:
            raise ConfigError(f"rotation_map: {exc}") from None
        self.validate()

    def validate(self) -> None:
        def need(ok: bool, msg: str):
            if not ok:
                raise ConfigError(msg)

        need(_is_int(self.k) and self.k >= 1, f"k must be a positive integer, got {self.k!r}")
        need(_is_real(self.h_b) and 0.0 <= self.h_b <= 1.0, f"h_b must lie in [0, 1], got {self.h_b!r}")
        need(_is_real(self.h_b_step) and self.h_b_step > 0, f"h_b_step must be positive, got {self.h_b_step!r}")
        need(_is_int(self.h_s) and 0 <= self.h_s <= HASH_BITS, f"h_s must be an integer in [0, {HASH_BITS}], got {self.h_s!r}")
        need(_is_real(self.min_pose_coverage) and 0.0 < self.min_pose_coverage <= 1.0,
             f"min_pose_coverage must lie in (0, 1], got {self.min_pose_coverage!r}")
        need(_is_int(self.max_retries) and self.max_retries >= 0,
             f"max_retries must be a non-negative integer, got {self.max_retries!r}")
        need(_is_int(self.workers) and self.workers >= 1, f"workers must be a positive integer, got {self.workers!r}")
        need(isinstance(self.strict, bool), "strict must be true or false")
        try:
            parse_flavors(self.flavor)
        except ValueError:
            raise ConfigError(f"flavor must be blender, llff or both, got {self.flavor!r}") from None
        need(isinstance(self.pose_cmd, str) and all(p in self.pose_cmd for p in PLACEHOLDERS),
             f"pose_cmd must contain {' and '.join(PLACEHOLDERS)}")
        try:
            groups = re.compile(self.filename_pattern).groupindex
        except re.error as exc:
            raise ConfigError(f"filename_pattern is not a valid regex: {exc}") from None
        need("camera_id" in groups and "index" in groups,
             "filename_pattern needs named groups camera_id and index")

    def snapshot(self) -> dict:
        """JSON-friendly copy for the manifest."""
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, Path):
                v = str(v)
            elif k == "rotation_map":
                v = {cam: r.value for cam, r in sorted(v.items())}
            out[k] = v
        return out


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


FIELD_NAMES = tuple(f.name for f in fields(PipelineConfig))


def config_from_mapping(values: Mapping[str, Any], base_dir: str | os.PathLike | None = None) -> PipelineConfig:
    """Build a config; relative paths resolve against ``base_dir``."""
    unknown = sorted(set(values) - set(FIELD_NAMES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = dict(values)
    if base_dir is not None:
        for key in _PATH_KEYS:
            if values.get(key) is not None:
                values[key] = Path(base_dir) / Path(values[key]).expanduser()
    missing = [f.name for f in fields(PipelineConfig) if f.name not in values
               and f.default is MISSING and f.default_factory is MISSING]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | os.PathLike, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict) and k != "rotation_map"]
    if nested:
        raise ConfigError(f"{path}: config keys are flat; unexpected table(s) {nested}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        # command-line paths are relative to the working directory, not the file
        values[key] = Path(value).absolute() if key in _PATH_KEYS else value
    return config_from_mapping(values, base_dir=path.parent)


def with_overrides(config: PipelineConfig, **changes) -> PipelineConfig:
    try:
        return replace(config, **{k: v for k, v in changes.items() if v is not None})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
