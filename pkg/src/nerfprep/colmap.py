"""Reader and writer for COLMAP-layout sparse models (text and binary).

Only the pinhole family is supported: SIMPLE_PINHOLE, PINHOLE,
SIMPLE_RADIAL and OPENCV. 2D keypoints in ``images.*`` are skipped on read
and written empty.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# model name -> (COLMAP model id, parameter count)
CAMERA_MODELS = {
    "SIMPLE_PINHOLE": (0, 3),
    "PINHOLE": (1, 4),
    "SIMPLE_RADIAL": (2, 4),
    "OPENCV": (4, 8),
}
_MODEL_BY_ID = {mid: name for name, (mid, _) in CAMERA_MODELS.items()}
# ids COLMAP defines but this reader refuses
_KNOWN_UNSUPPORTED = {3: "RADIAL", 5: "OPENCV_FISHEYE", 6: "FULL_OPENCV", 7: "FOV",
                      8: "SIMPLE_RADIAL_FISHEYE", 9: "RADIAL_FISHEYE", 10: "THIN_PRISM_FISHEYE"}

TEXT_FILES = ("cameras.txt", "images.txt", "points3D.txt")
BINARY_FILES = ("cameras.bin", "images.bin", "points3D.bin")


class ColmapParseError(ValueError):
    """Malformed sparse model; names the file and a line or byte offset."""

    def __init__(self, path, message: str, line: int | None = None, offset: int | None = None):
        self.path = Path(path)
        self.line = line
        self.offset = offset
        where = str(self.path)
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" @ byte {offset}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class CameraIntrinsics:
    camera_id: int
    model: str
    width: int
    height: int
    params: tuple[float, ...]

    def __post_init__(self):
        if self.model not in CAMERA_MODELS:
            raise ValueError(f"unsupported camera model {self.model!r}")
        expected = CAMERA_MODELS[self.model][1]
        if len(self.params) != expected:
            raise ValueError(f"{self.model} takes {expected} parameters, got {len(self.params)}")
        if self.width < 1 or self.height < 1:
            raise ValueError("camera size must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def model_id(self) -> int:
        return CAMERA_MODELS[self.model][0]

    @property
    def fx(self) -> float:
        return self.params[0]

    @property
    def fy(self) -> float:
        return self.params[1] if self.model in ("PINHOLE", "OPENCV") else self.params[0]

    @property
    def cx(self) -> float:
        return self.params[2] if self.model in ("PINHOLE", "OPENCV") else self.params[1]

    @property
    def cy(self) -> float:
        return self.params[3] if self.model in ("PINHOLE", "OPENCV") else self.params[2]

    @property
    def distortion(self) -> tuple[float, ...]:
        return self.params[4:] if self.model in ("PINHOLE", "OPENCV") else self.params[3:]


@dataclass(frozen=True)
class ImagePose:
    """World-to-camera pose: x_cam = R(q) x_world + t."""

    image_id: int
    qvec: tuple[float, float, float, float]  # (qw, qx, qy, qz)
    tvec: tuple[float, float, float]
    camera_id: int
    name: str


@dataclass(frozen=True)
class Point3D:
    point_id: int
    xyz: tuple[float, float, float]
    rgb: tuple[int, int, int]
    error: float
    track: tuple[tuple[int, int], ...]  # (image_id, point2d index)


@dataclass
class SparseModel:
    cameras: dict[int, CameraIntrinsics] = field(default_factory=dict)
    images: dict[int, ImagePose] = field(default_factory=dict)
    points: dict[int, Point3D] = field(default_factory=dict)

    def image_by_name(self) -> dict[str, ImagePose]:
        return {img.name: img for img in self.images.values()}

    def points_seen_by(self, image_id: int) -> np.ndarray:
        """(n, 3) coordinates of points whose track includes ``image_id``."""
        xyz = [p.xyz for p in self.points.values() if any(i == image_id for i, _ in p.track)]
        return np.asarray(xyz, dtype=np.float64).reshape(-1, 3)


def _check_refs(model: SparseModel, image_loc, point_loc) -> None:
    for image_id, img in model.images.items():
        if img.camera_id not in model.cameras:
            path, line, offset = image_loc[image_id]
            raise ColmapParseError(path, f"image {image_id} references unknown camera {img.camera_id}", line, offset)
    for point_id, pt in model.points.items():
        for image_id, _ in pt.track:
            if image_id not in model.images:
                path, line, offset = point_loc[point_id]
                raise ColmapParseError(path, f"point {point_id} references unknown image {image_id}", line, offset)


# ---------------------------------------------------------------- text


def _data_lines(path: Path):
    """Yield (line number, stripped text) for every line, comments dropped."""
    try:
        with open(path, encoding="utf-8") as fh:
            for number, raw in enumerate(fh, start=1):
                text = raw.strip()
                if text.startswith("#"):
                    continue
                yield number, text
    except FileNotFoundError:
        raise ColmapParseError(path, "file is missing") from None


def _make_camera(path, fields, line=None, offset=None) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(*fields)
    except ValueError as exc:
        raise ColmapParseError(path, str(exc), line, offset) from None


def parse_colmap_text(directory: str | os.PathLike) -> SparseModel:
    directory = Path(directory)
    model = SparseModel()

    path = directory / "cameras.txt"
    for line, text in _data_lines(path):
        if not text:
            continue
        parts = text.split()
        try:
            camera_id, name, width, height = int(parts[0]), parts[1], int(parts[2]), int(parts[3])
            params = tuple(float(v) for v in parts[4:])
        except (IndexError, ValueError):
            raise ColmapParseError(path, f"malformed camera row {text!r}", line) from None
        if name not in CAMERA_MODELS:
            raise ColmapParseError(path, f"unsupported camera model {name!r}", line)
        if camera_id in model.cameras:
            raise ColmapParseError(path, f"duplicate camera id {camera_id}", line)
        model.cameras[camera_id] = _make_camera(path, (camera_id, name, width, height, params), line)

    path = directory / "images.txt"
    image_loc = {}
    expecting_pose = True
    for line, text in _data_lines(path):
        if not expecting_pose:
            expecting_pose = True  # 2D point row, possibly empty
            continue
        if not text:
            continue
        parts = text.split(maxsplit=9)
        try:
            image_id = int(parts[0])
            qvec = tuple(float(v) for v in parts[1:5])
            tvec = tuple(float(v) for v in parts[5:8])
            camera_id = int(parts[8])
            name = parts[9]
        except (IndexError, ValueError):
            raise ColmapParseError(path, f"malformed image row {text!r}", line) from None
        if image_id in model.images:
            raise ColmapParseError(path, f"duplicate image id {image_id}", line)
        model.images[image_id] = ImagePose(image_id, qvec, tvec, camera_id, name)
        image_loc[image_id] = (path, line, None)
        expecting_pose = False

    path = directory / "points3D.txt"
    point_loc = {}
    for line, text in _data_lines(path):
        if not text:
            continue
        parts = text.split()
        try:
            point_id = int(parts[0])
            xyz = tuple(float(v) for v in parts[1:4])
            rgb = tuple(int(v) for v in parts[4:7])
            error = float(parts[7])
            flat = [int(v) for v in parts[8:]]
        except (IndexError, ValueError):
            raise ColmapParseError(path, f"malformed point row {text!r}", line) from None
        if len(xyz) != 3 or len(rgb) != 3 or len(flat) % 2:
            raise ColmapParseError(path, "malformed point row", line)
        if not flat:
            raise ColmapParseError(path, f"point {point_id} has an empty track", line)
        track = tuple(zip(flat[0::2], flat[1::2]))
        model.points[point_id] = Point3D(point_id, xyz, rgb, error, track)
        point_loc[point_id] = (path, line, None)

    _check_refs(model, image_loc, point_loc)
    return model


def _fmt(value: float) -> str:
    return repr(float(value))


def write_colmap_text(model: SparseModel, directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "cameras.txt", "w", encoding="utf-8") as fh:
        fh.write("# Camera list with one line of data per camera:\n")
        fh.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        fh.write(f"# Number of cameras: {len(model.cameras)}\n")
        for cam in sorted(model.cameras.values(), key=lambda c: c.camera_id):
            params = " ".join(_fmt(v) for v in cam.params)
            fh.write(f"{cam.camera_id} {cam.model} {cam.width} {cam.height} {params}\n")
    with open(directory / "images.txt", "w", encoding="utf-8") as fh:
        fh.write("# Image list with two lines of data per image:\n")
        fh.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fh.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        fh.write(f"# Number of images: {len(model.images)}\n")
        for img in sorted(model.images.values(), key=lambda i: i.image_id):
            nums = " ".join(_fmt(v) for v in (*img.qvec, *img.tvec))
            fh.write(f"{img.image_id} {nums} {img.camera_id} {img.name}\n\n")
    with open(directory / "points3D.txt", "w", encoding="utf-8") as fh:
        fh.write("# 3D point list with one line of data per point:\n")
        fh.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        fh.write(f"# Number of points: {len(model.points)}\n")
        for pt in sorted(model.points.values(), key=lambda p: p.point_id):
            xyz = " ".join(_fmt(v) for v in pt.xyz)
            rgb = " ".join(str(v) for v in pt.rgb)
            track = " ".join(f"{i} {j}" for i, j in pt.track)
            fh.write(f"{pt.point_id} {xyz} {rgb} {_fmt(pt.error)} {track}\n")


# -------------------------------------------------------------- binary


class _Reader:
    def __init__(self, path: Path):
        self.path = path
        try:
            self.data = path.read_bytes()
        except FileNotFoundError:
            raise ColmapParseError(path, "file is missing") from None
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        if self.pos + size > len(self.data):
            raise ColmapParseError(self.path, f"truncated stream (needed {size} bytes)", offset=self.pos)
        values = struct.unpack_from("<" + fmt, self.data, self.pos)
        self.pos += size
        return values

    def skip(self, size: int) -> None:
        if self.pos + size > len(self.data):
            raise ColmapParseError(self.path, f"truncated stream (needed {size} bytes)", offset=self.pos)
        self.pos += size

    def cstring(self) -> str:
        end = self.data.find(b"\x00", self.pos)
        if end < 0:
            raise ColmapParseError(self.path, "unterminated image name", offset=self.pos)
        raw = self.data[self.pos:end]
        start, self.pos = self.pos, end + 1
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ColmapParseError(self.path, "image name is not UTF-8", offset=start) from None

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise ColmapParseError(self.path, f"{len(self.data) - self.pos} trailing bytes", offset=self.pos)


def parse_colmap_binary(directory: str | os.PathLike) -> SparseModel:
    directory = Path(directory)
    model = SparseModel()

    r = _Reader(directory / "cameras.bin")
    (count,) = r.unpack("Q")
    for _ in range(count):
        start = r.pos
        camera_id, model_id, width, height = r.unpack("IiQQ")
        if model_id not in _MODEL_BY_ID:
            label = _KNOWN_UNSUPPORTED.get(model_id, "unknown")
            raise ColmapParseError(r.path, f"unsupported camera model id {model_id} ({label})", offset=start + 4)
        name = _MODEL_BY_ID[model_id]
        params = r.unpack("d" * CAMERA_MODELS[name][1])
        if camera_id in model.cameras:
            raise ColmapParseError(r.path, f"duplicate camera id {camera_id}", offset=start)
        model.cameras[camera_id] = _make_camera(r.path, (camera_id, name, width, height, params), offset=start)
    r.finish()

    r = _Reader(directory / "images.bin")
    image_loc = {}
    (count,) = r.unpack("Q")
    for _ in range(count):
        start = r.pos
        image_id, qw, qx, qy, qz, tx, ty, tz, camera_id = r.unpack("I7dI")
        name = r.cstring()
        (n_points,) = r.unpack("Q")
        r.skip(24 * n_points)
        if image_id in model.images:
            raise ColmapParseError(r.path, f"duplicate image id {image_id}", offset=start)
        model.images[image_id] = ImagePose(image_id, (qw, qx, qy, qz), (tx, ty, tz), camera_id, name)
        image_loc[image_id] = (r.path, None, start)
    r.finish()

    r = _Reader(directory / "points3D.bin")
    point_loc = {}
    (count,) = r.unpack("Q")
    for _ in range(count):
        start = r.pos
        point_id, x, y, z, red, green, blue, error, track_len = r.unpack("Q3d3BdQ")
        if track_len == 0:
            raise ColmapParseError(r.path, f"point {point_id} has an empty track", offset=start)
        flat = r.unpack("I" * (2 * track_len))
        track = tuple(zip(flat[0::2], flat[1::2]))
        model.points[point_id] = Point3D(point_id, (x, y, z), (red, green, blue), error, track)
        point_loc[point_id] = (r.path, None, start)
    r.finish()

    _check_refs(model, image_loc, point_loc)
    return model


def write_colmap_binary(model: SparseModel, directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "cameras.bin", "wb") as fh:
        fh.write(struct.pack("<Q", len(model.cameras)))
        for cam in sorted(model.cameras.values(), key=lambda c: c.camera_id):
            fh.write(struct.pack("<IiQQ", cam.camera_id, cam.model_id, cam.width, cam.height))
            fh.write(struct.pack("<" + "d" * len(cam.params), *cam.params))
    with open(directory / "images.bin", "wb") as fh:
        fh.write(struct.pack("<Q", len(model.images)))
        for img in sorted(model.images.values(), key=lambda i: i.image_id):
            fh.write(struct.pack("<I7dI", img.image_id, *img.qvec, *img.tvec, img.camera_id))
            fh.write(img.name.encode("utf-8") + b"\x00")
            fh.write(struct.pack("<Q", 0))
    with open(directory / "points3D.bin", "wb") as fh:
        fh.write(struct.pack("<Q", len(model.points)))
        for pt in sorted(model.points.values(), key=lambda p: p.point_id):
            fh.write(struct.pack("<Q3d3BdQ", pt.point_id, *pt.xyz, *pt.rgb, pt.error, len(pt.track)))
            flat = [v for pair in pt.track for v in pair]
            fh.write(struct.pack("<" + "I" * len(flat), *flat))


# -------------------------------------------------------------- loading


def _model_format(directory: Path) -> str | None:
    if all((directory / f).is_file() for f in BINARY_FILES):
        return "binary"
    if all((directory / f).is_file() for f in TEXT_FILES):
        return "text"
    return None


def read_model(directory: str | os.PathLike) -> tuple[SparseModel, list[dict]]:
    """Load a model directory, binary preferred over text.

    If ``directory`` holds numbered sub-models instead (one per connected
    component), the one with the most registered images wins; a summary of
    every component is returned alongside for reporting.
    """
    directory = Path(directory)
    fmt = _model_format(directory)
    if fmt is not None:
        model = parse_colmap_binary(directory) if fmt == "binary" else parse_colmap_text(directory)
        return model, [{"path": ".", "format": fmt, "images": len(model.images)}]
    subdirs = sorted(
        (d for d in directory.iterdir() if d.is_dir() and _model_format(d)),
        key=lambda d: (len(d.name), d.name),
    ) if directory.is_dir() else []
    if not subdirs:
        raise ColmapParseError(directory, "no sparse model (cameras/images/points3D) found")
    best, components = None, []
    for sub in subdirs:
        fmt = _model_format(sub)
        model = parse_colmap_binary(sub) if fmt == "binary" else parse_colmap_text(sub)
        components.append({"path": sub.name, "format": fmt, "images": len(model.images)})
        if best is None or len(model.images) > len(best.images):
            best = model
    if len(components) > 1:
        logger.warning("model has %d components; using the largest", len(components))
    return best, components
