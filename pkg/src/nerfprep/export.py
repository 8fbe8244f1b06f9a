"""Dataset emitters (transforms.json, LLFF poses_bounds) and their readers."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .colmap import CameraIntrinsics, SparseModel
from .poses import (
    SceneTransform,
    colmap_to_nerf_convention,
    compute_bounds,
    normalize_scene,
    observations,
    w2c_to_c2w,
)

logger = logging.getLogger(__name__)

TRANSFORMS_FILE = "transforms.json"
POSES_BOUNDS_FILE = "poses_bounds.npy"
IMAGE_DIR = "images"
ORTHO_TOLERANCE = 1e-6

NPY_MAGIC = b"\x93NUMPY"
NPY_ALIGN = 64
_HEADER_RE = re.compile(
    r"\{'descr': '<f8', 'fortran_order': False, 'shape': \((?P<shape>\d+,|\d+, \d+)\), \} *\n"
)


class Flavor(str, enum.Enum):
    BLENDER = "blender"
    LLFF = "llff"


def parse_flavors(value: str) -> tuple[Flavor, ...]:
    """'blender' | 'llff' | 'both' -> tuple of flavors."""
    if value == "both":
        return (Flavor.BLENDER, Flavor.LLFF)
    return (Flavor(value),)


class PoseMissingError(ValueError):
    def __init__(self, names: list[str]):
        self.names = names
        super().__init__(f"{len(names)} frame(s) have no pose: {', '.join(names[:5])}")


@dataclass
class NerfDataset:
    flavor: Flavor
    path: Path  # the descriptor file
    names: list[str]
    c2w: np.ndarray  # (N, 4, 4), NeRF convention
    intrinsics: dict
    bounds: np.ndarray | None = None  # (N, 2) near, far
    pose_missing: list[str] = field(default_factory=list)
    transform: SceneTransform | None = None

    def __len__(self) -> int:
        return len(self.names)

    def to_record(self) -> dict:
        rec = {
            "flavor": self.flavor.value,
            "path": str(self.path),
            "frames": len(self.names),
            "pose_missing": list(self.pose_missing),
        }
        if self.transform is not None:
            rec["normalization"] = self.transform.to_dict()
        return rec


# ----------------------------------------------------------------- npy


def npy_header(shape: tuple[int, ...]) -> bytes:
    """Version 1.0 preamble for a little-endian float64 C-order array."""
    shape_txt = f"({shape[0]},)" if len(shape) == 1 else "(" + ", ".join(str(s) for s in shape) + ")"
    text = f"{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_txt}, }}"
    fixed = len(NPY_MAGIC) + 2 + 2
    total = fixed + len(text) + 1
    pad = (-total) % NPY_ALIGN
    text = text + " " * pad + "\n"
    return NPY_MAGIC + b"\x01\x00" + struct.pack("<H", len(text)) + text.encode("ascii")


def write_npy(path: str | os.PathLike, array) -> None:
    a = np.asarray(array, dtype="<f8")
    if a.ndim not in (1, 2):
        raise ValueError(f"only 1-D and 2-D arrays are supported, got shape {a.shape}")
    with open(path, "wb") as fh:
        fh.write(npy_header(a.shape))
        fh.write(np.ascontiguousarray(a).tobytes(order="C"))


def read_npy(path: str | os.PathLike) -> np.ndarray:
    """Read a float64 array written by :func:`write_npy`, checking the header grammar."""
    data = Path(path).read_bytes()
    if data[:6] != NPY_MAGIC:
        raise ValueError(f"{path}: bad magic")
    if data[6:8] != b"\x01\x00":
        raise ValueError(f"{path}: unsupported version {data[6]}.{data[7]}")
    if len(data) < 10:
        raise ValueError(f"{path}: truncated preamble")
    (hlen,) = struct.unpack("<H", data[8:10])
    start = 10 + hlen
    if start > len(data) or start % NPY_ALIGN:
        raise ValueError(f"{path}: preamble length {start} is not a multiple of {NPY_ALIGN}")
    header = data[10:start].decode("ascii")
    m = _HEADER_RE.fullmatch(header)
    if m is None:
        raise ValueError(f"{path}: header does not match the expected grammar: {header!r}")
    shape = tuple(int(s) for s in m["shape"].replace(",", " ").split())
    count = math.prod(shape)
    if len(data) - start != 8 * count:
        raise ValueError(f"{path}: payload is {len(data) - start} bytes, expected {8 * count}")
    return np.frombuffer(data, dtype="<f8", offset=start).reshape(shape).astype(np.float64)


# ------------------------------------------------------------- emitters


def _select(model: SparseModel, frame_names: Iterable[str] | None, strict: bool):
    """Posed images to emit, sorted by name, plus the names lacking a pose."""
    by_name = model.image_by_name()
    if frame_names is None:
        names = sorted(by_name)
        missing = []
    else:
        wanted = sorted(set(frame_names))
        missing = [n for n in wanted if n not in by_name]
        extra = sorted(set(by_name) - set(wanted))
        if extra:
            logger.warning("ignoring %d posed image(s) outside the frame set", len(extra))
        names = [n for n in wanted if n in by_name]
    if missing:
        if strict:
            raise PoseMissingError(missing)
        logger.warning("%d frame(s) have no pose and are left out", len(missing))
    if not names:
        raise ValueError("no posed frames to emit")
    return [by_name[n] for n in names], missing


def _shared_camera(model: SparseModel, images) -> CameraIntrinsics:
    cams = {img.camera_id for img in images}
    cam = model.cameras[images[0].camera_id]
    if len(cams) > 1:
        logger.warning("%d cameras in model; writing intrinsics of camera %d", len(cams), cam.camera_id)
    return cam


def _intrinsics(cam: CameraIntrinsics) -> dict:
    return {
        "camera_angle_x": 2.0 * math.atan(cam.width / (2.0 * cam.fx)),
        "fl_x": cam.fx,
        "fl_y": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "w": cam.width,
        "h": cam.height,
    }


def emit_transforms_json(
    model: SparseModel,
    out_dir: str | os.PathLike,
    *,
    frame_names: Iterable[str] | None = None,
    image_prefix: str = IMAGE_DIR,
    include_intrinsics: bool = True,
    normalize: bool = True,
    strict: bool = False,
) -> NerfDataset:
    """Write ``transforms.json`` with NeRF-convention camera-to-world matrices.

    ``frame_names`` is the set of frames that should be present; names the
    model does not pose end up in ``pose_missing`` (or raise under ``strict``).
    """
    images, missing = _select(model, frame_names, strict)
    cam = _shared_camera(model, images)
    c2w = [colmap_to_nerf_convention(w2c_to_c2w(img)) for img in images]
    transform = None
    if normalize:
        c2w, transform = normalize_scene(c2w)

    intr = _intrinsics(cam)
    doc = {"camera_angle_x": intr["camera_angle_x"]}
    if include_intrinsics:
        doc.update({k: v for k, v in intr.items() if k != "camera_angle_x"})
    doc["frames"] = [
        {"file_path": f"{image_prefix}/{img.name}" if image_prefix else img.name,
         "transform_matrix": m.tolist()}
        for img, m in zip(images, c2w)
    ]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / TRANSFORMS_FILE
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return NerfDataset(Flavor.BLENDER, path, [i.name for i in images], np.array(c2w), intr,
                       pose_missing=missing, transform=transform)


def llff_row(c2w_nerf: np.ndarray, height: int, width: int, focal: float, near: float, far: float) -> np.ndarray:
    """17 values: 3x5 [R_llff | t | (H, W, f)] row-major, then near, far.

    R_llff holds the NeRF rotation columns reordered to [-y, x, z].
    """
    R = c2w_nerf[:3, :3]
    m = np.empty((3, 5))
    m[:, 0] = -R[:, 1]
    m[:, 1] = R[:, 0]
    m[:, 2] = R[:, 2]
    m[:, 3] = c2w_nerf[:3, 3]
    m[:, 4] = (height, width, focal)
    return np.concatenate([m.ravel(), [near, far]])


def llff_to_nerf(row) -> np.ndarray:
    """Invert :func:`llff_row`'s pose part back to a NeRF c2w."""
    m = np.asarray(row[:15], dtype=np.float64).reshape(3, 5)
    out = np.eye(4)
    out[:3, 0] = m[:, 1]
    out[:3, 1] = -m[:, 0]
    out[:3, 2] = m[:, 2]
    out[:3, 3] = m[:, 3]
    return out


def emit_llff(
    model: SparseModel,
    out_dir: str | os.PathLike,
    *,
    frame_names: Iterable[str] | None = None,
    strict: bool = False,
) -> NerfDataset:
    """Write ``poses_bounds.npy`` (N x 17, rows in name order, unnormalized)."""
    images, missing = _select(model, frame_names, strict)
    cam = _shared_camera(model, images)
    seen = observations(model)
    rows, c2ws, bounds = [], [], []
    for img in images:
        c2w = colmap_to_nerf_convention(w2c_to_c2w(img))
        near, far = compute_bounds(model, img, seen.get(img.image_id))
        c = model.cameras[img.camera_id]
        rows.append(llff_row(c2w, c.height, c.width, c.fx, near, far))
        c2ws.append(c2w)
        bounds.append((near, far))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / POSES_BOUNDS_FILE
    write_npy(path, np.array(rows))
    return NerfDataset(Flavor.LLFF, path, [i.name for i in images], np.array(c2ws), _intrinsics(cam),
                       bounds=np.array(bounds), pose_missing=missing)


# -------------------------------------------------------------- readers


def read_transforms_json(path: str | os.PathLike) -> dict:
    """Parse ``transforms.json``; matrices come back as (4, 4) arrays."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for frame in doc.get("frames", []):
        frame["transform_matrix"] = np.asarray(frame["transform_matrix"], dtype=np.float64)
    return doc


def read_poses_bounds(path: str | os.PathLike) -> np.ndarray:
    a = read_npy(path)
    if a.ndim != 2 or a.shape[1] != 17:
        raise ValueError(f"{path}: expected an (N, 17) array, got {a.shape}")
    return a


# ----------------------------------------------------------- validation


@dataclass
class ValidationReport:
    path: Path
    flavors: list[str] = field(default_factory=list)
    frames: dict[str, int] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.flavors) and not self.violations

    def to_record(self) -> dict:
        return {
            "path": str(self.path),
            "ok": self.ok,
            "flavors": self.flavors,
            "frames": self.frames,
            "violations": self.violations,
        }


def _rotation_problem(R: np.ndarray) -> str | None:
    if not np.all(np.isfinite(R)):
        return "non-finite rotation"
    err = np.abs(R @ R.T - np.eye(3)).max()
    if err > ORTHO_TOLERANCE:
        return f"non-orthonormal rotation (max |R R^T - I| = {err:.3g})"
    det = np.linalg.det(R)
    if abs(det - 1.0) > ORTHO_TOLERANCE:
        return f"rotation determinant {det:.9g} is not +1"
    return None


def _check_blender(root: Path, report: ValidationReport) -> None:
    path = root / TRANSFORMS_FILE
    try:
        doc = read_transforms_json(path)
    except (OSError, ValueError) as exc:
        report.violations.append(f"{TRANSFORMS_FILE}: unreadable ({exc})")
        return
    allowed = {"camera_angle_x", "fl_x", "fl_y", "cx", "cy", "w", "h", "frames"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        report.violations.append(f"{TRANSFORMS_FILE}: unexpected keys {unknown}")
    angle = doc.get("camera_angle_x")
    if not isinstance(angle, (int, float)) or not 0 < angle < math.pi:
        report.violations.append(f"{TRANSFORMS_FILE}: camera_angle_x must lie in (0, pi)")
    frames = doc.get("frames")
    if not isinstance(frames, list) or not frames:
        report.violations.append(f"{TRANSFORMS_FILE}: no frames")
        return
    report.frames[Flavor.BLENDER.value] = len(frames)
    for i, frame in enumerate(frames):
        rel = frame.get("file_path")
        if not isinstance(rel, str) or not (root / rel).is_file():
            report.violations.append(f"frame {i}: missing file {rel!r}")
        m = frame.get("transform_matrix")
        if not isinstance(m, np.ndarray) or m.shape != (4, 4):
            report.violations.append(f"frame {i}: transform_matrix is not 4x4")
            continue
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            report.violations.append(f"frame {i}: last row is not (0, 0, 0, 1)")
        problem = _rotation_problem(m[:3, :3])
        if problem:
            report.violations.append(f"frame {i}: {problem}")


def _check_llff(root: Path, report: ValidationReport) -> None:
    try:
        rows = read_poses_bounds(root / POSES_BOUNDS_FILE)
    except (OSError, ValueError) as exc:
        report.violations.append(f"{POSES_BOUNDS_FILE}: unreadable ({exc})")
        return
    report.frames[Flavor.LLFF.value] = len(rows)
    image_dir = root / IMAGE_DIR
    images = sorted(p for p in image_dir.iterdir() if p.is_file()) if image_dir.is_dir() else []
    if len(images) != len(rows):
        report.violations.append(
            f"{POSES_BOUNDS_FILE}: {len(rows)} poses but {len(images)} image(s) in {IMAGE_DIR}/ (missing file?)"
        )
    for i, row in enumerate(rows):
        problem = _rotation_problem(llff_to_nerf(row)[:3, :3])
        if problem:
            report.violations.append(f"frame {i}: {problem}")
        h, w, f = row[4], row[9], row[14]
        if not (h > 0 and w > 0 and f > 0):
            report.violations.append(f"frame {i}: non-positive height/width/focal")
        near, far = row[15], row[16]
        if not (near > 0 and far > near):
            report.violations.append(f"frame {i}: bounds must satisfy 0 < near < far, got ({near}, {far})")


def validate_dataset(path: str | os.PathLike, flavor: str | None = None) -> ValidationReport:
    """Re-read an emitted dataset directory and re-check its invariants.

    ``flavor`` is 'blender', 'llff', 'both' or None (whatever is present).
    """
    root = Path(path)
    report = ValidationReport(root)
    if not root.is_dir():
        report.violations.append(f"{root}: not a readable directory")
        return report
    if flavor is None:
        wanted = [f for f, name in ((Flavor.BLENDER, TRANSFORMS_FILE), (Flavor.LLFF, POSES_BOUNDS_FILE))
                  if (root / name).is_file()]
        if not wanted:
            report.violations.append(f"{root}: no {TRANSFORMS_FILE} or {POSES_BOUNDS_FILE} found")
            return report
    else:
        wanted = list(parse_flavors(flavor))
    for f in wanted:
        report.flavors.append(f.value)
        (_check_blender if f is Flavor.BLENDER else _check_llff)(root, report)
    return report
