"""Frame discovery, k-th frame subsampling and per-camera rotation."""

from __future__ import annotations

import enum
import fnmatch
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

DEFAULT_FILENAME_PATTERN = r"(?P<camera_id>[^_]+)_(?P<index>\d+)\.(?:png|jpe?g)"

PROVENANCES = ("raw", "sampled", "deblurred", "deduped")


@dataclass(frozen=True, order=True)
class FrameId:
    """Identity of a frame; ordering is (camera_id, video_id, index)."""

    camera_id: str
    video_id: str
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"frame index must be non-negative, got {self.index}")

    def __str__(self) -> str:
        name = f"{self.camera_id}_{self.index}"
        return f"{self.video_id}/{name}" if self.video_id else name


@dataclass(frozen=True, eq=False)
class Frame:
    id: FrameId
    rgb: np.ndarray
    source_path: Path

    def __post_init__(self):
        rgb = self.rgb
        if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
            raise ValueError(f"rgb must be an (H, W, 3) uint8 array, got {rgb.dtype} {rgb.shape}")
        if rgb.shape[0] < 1 or rgb.shape[1] < 1:
            raise ValueError("frame must be at least 1x1")
        rgb.flags.writeable = False

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


@dataclass(frozen=True)
class FrameSet:
    frames: tuple[Frame, ...]
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "frames", tuple(self.frames))
        ids = [f.id for f in self.frames]
        if any(a >= b for a, b in zip(ids, ids[1:])):
            raise ValueError("frames must be in strictly increasing FrameId order")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def ids(self) -> list[FrameId]:
        return [f.id for f in self.frames]

    def with_frames(self, frames: Iterable[Frame], provenance: str | None = None) -> FrameSet:
        return FrameSet(tuple(frames), provenance or self.provenance)


@dataclass(frozen=True)
class SkippedSource:
    """A discovered file that did not become a frame."""

    path: Path
    reason: str  # "excluded" | "decode_error" | "duplicate_id"
    frame_id: FrameId | None = None
    detail: str = ""


@dataclass
class SourceScan:
    frames: FrameSet
    skipped: list[SkippedSource] = field(default_factory=list)


class Rotation(str, enum.Enum):
    NONE = "none"
    HALF_TURN = "half-turn"


RotationMap = Mapping[str, Rotation]


def parse_rotation_map(value) -> dict[str, Rotation]:
    """Build a rotation map from a mapping or a list of half-turn camera ids."""
    if value is None:
        return {}
    if isinstance(value, Mapping):
        return {str(k): Rotation(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return {str(cam): Rotation.HALF_TURN for cam in value}
    raise ValueError(f"rotation map must be a table or a list of camera ids, got {type(value).__name__}")


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luma 0.299 R + 0.587 G + 0.114 B, rounded half-up, as uint8."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.uint8, copy=False)
    c = rgb.astype(np.int32)
    y = (299 * c[..., 0] + 587 * c[..., 1] + 114 * c[..., 2] + 500) // 1000
    return y.astype(np.uint8)


def load_exclusions(path: str | os.PathLike | None) -> list[str]:
    """Read a newline-delimited list of FrameId glob patterns ('#' comments allowed)."""
    if path is None:
        return []
    patterns = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            patterns.append(line)
    return patterns


def _is_excluded(frame_id: FrameId, rel_path: str, patterns: Sequence[str]) -> bool:
    key = str(frame_id)
    return any(fnmatch.fnmatchcase(key, p) or fnmatch.fnmatchcase(rel_path, p) for p in patterns)


def decode_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        im.load()
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def enumerate_sources(
    root: str | os.PathLike,
    pattern: str = DEFAULT_FILENAME_PATTERN,
    exclude: Sequence[str] = (),
    workers: int = 1,
) -> SourceScan:
    """Discover and decode every frame under ``root``.

    Files are matched (case-insensitively) against ``pattern``, a regex with
    named groups ``camera_id`` and ``index`` and an optional ``video_id``.
    Without a ``video_id`` group the parent directory relative to ``root``
    names the video. Excluded and undecodable files are reported in the
    returned :class:`SourceScan` instead of raising.
    """
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
        raise OSError(f"input root {root} is not a readable directory")
    regex = re.compile(pattern, re.IGNORECASE)

    candidates: list[tuple[FrameId, Path, str]] = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        m = regex.fullmatch(path.name)
        if m is None:
            logger.debug("ignoring %s: name does not match pattern", rel)
            continue
        groups = m.groupdict()
        video = groups.get("video_id")
        if video is None:
            parent = path.parent.relative_to(root).as_posix()
            video = "" if parent == "." else parent
        candidates.append((FrameId(groups["camera_id"], video, int(groups["index"])), path, rel))

    skipped: list[SkippedSource] = []
    seen: set[FrameId] = set()
    to_decode: list[tuple[FrameId, Path]] = []
    for fid, path, rel in sorted(candidates, key=lambda c: (c[0], c[2])):
        if fid in seen:
            skipped.append(SkippedSource(path, "duplicate_id", fid, "another file maps to the same frame id"))
            continue
        seen.add(fid)
        if _is_excluded(fid, rel, exclude):
            skipped.append(SkippedSource(path, "excluded", fid))
            continue
        to_decode.append((fid, path))

    def _load(item):
        fid, path = item
        try:
            return Frame(fid, decode_image(path), path), None
        except (OSError, ValueError) as exc:
            return None, SkippedSource(path, "decode_error", fid, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_load, to_decode))
    else:
        results = [_load(item) for item in to_decode]

    frames = []
    for frame, skip in results:
        if frame is not None:
            frames.append(frame)
        else:
            logger.warning("could not decode %s: %s", skip.path, skip.detail)
            skipped.append(skip)
    if not candidates:
        logger.info("no frame sources found under %s", root)
    return SourceScan(FrameSet(tuple(frames), "raw"), skipped)


def subsample(frames: FrameSet, k: int) -> FrameSet:
    """Keep positions 0, k, 2k, ... within each (camera, video) group."""
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    position: dict[tuple[str, str], int] = {}
    kept = []
    for frame in frames:
        group = (frame.id.camera_id, frame.id.video_id)
        pos = position.get(group, 0)
        position[group] = pos + 1
        if pos % k == 0:
            kept.append(frame)
    return frames.with_frames(kept, "sampled")


def rotate_180(frame: Frame) -> Frame:
    return Frame(frame.id, np.ascontiguousarray(frame.rgb[::-1, ::-1]), frame.source_path)


def apply_rotation_map(frames: FrameSet, rotation_map: RotationMap) -> FrameSet:
    """Half-turn every frame whose camera is flagged; others pass through."""
    out = []
    for frame in frames:
        if rotation_map.get(frame.id.camera_id, Rotation.NONE) == Rotation.HALF_TURN:
            out.append(rotate_180(frame))
        else:
            out.append(frame)
    return frames.with_frames(out)
