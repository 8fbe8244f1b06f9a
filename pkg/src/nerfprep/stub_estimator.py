"""Stand-in pose estimator for offline runs and tests.

Follows the directory-in/directory-out contract of a real estimator:
``python -m nerfprep.stub_estimator FRAMES_DIR MODEL_DIR``. It either copies
a canned sparse model or synthesizes one: every selected frame gets a
PINHOLE camera on a ring around the origin, looking at a cloud of points
inside the unit sphere that every camera observes.
"""

from __future__ import annotations

import argparse
import math
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .colmap import BINARY_FILES, TEXT_FILES, CameraIntrinsics, ImagePose, Point3D, SparseModel, write_colmap_binary, write_colmap_text
from .poses import rotmat_to_quat

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
RING_RADIUS = 4.0
RING_HEIGHT = 1.0
N_POINTS = 64
SEED = 0


def select_evenly(names: list[str], coverage: float) -> list[str]:
    """round(coverage * n) names spread evenly over the sorted list."""
    n = len(names)
    m = min(n, max(0, math.floor(coverage * n + 0.5)))
    if m == 0:
        return []
    picks = sorted({(j * n) // m for j in range(m)})
    return [names[i] for i in picks]


def look_at_origin(center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``center`` facing the origin (+z forward, +y down)."""
    forward = -center / np.linalg.norm(center)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R_c2w = np.stack([right, down, forward], axis=1)
    R = R_c2w.T
    return R, -R @ center


def synthesize_model(names: list[str], width: int, height: int) -> SparseModel:
    focal = 0.8 * max(width, height)
    cam = CameraIntrinsics(1, "PINHOLE", width, height, (focal, focal, width / 2.0, height / 2.0))
    images = {}
    for i, name in enumerate(names):
        theta = 2.0 * math.pi * i / max(len(names), 1)
        center = np.array([RING_RADIUS * math.cos(theta), RING_RADIUS * math.sin(theta), RING_HEIGHT])
        R, t = look_at_origin(center)
        images[i + 1] = ImagePose(i + 1, tuple(float(v) for v in rotmat_to_quat(R)),
                                  tuple(float(v) for v in t), 1, name)
    rng = np.random.default_rng(SEED)
    points = {}
    if images:
        for pid in range(1, N_POINTS + 1):
            v = rng.normal(size=3)
            xyz = v / np.linalg.norm(v) * rng.uniform() ** (1 / 3)
            rgb = tuple(int(c) for c in rng.integers(0, 256, 3))
            track = tuple((image_id, pid - 1) for image_id in images)
            points[pid] = Point3D(pid, tuple(float(c) for c in xyz), rgb, 0.5, track)
    return SparseModel({1: cam}, images, points)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m nerfprep.stub_estimator", description=__doc__.splitlines()[0])
    ap.add_argument("frames_dir", type=Path)
    ap.add_argument("model_dir", type=Path)
    ap.add_argument("--coverage", type=float, default=1.0, help="fraction of frames to pose (default 1)")
    ap.add_argument("--format", choices=("text", "binary"), default="binary")
    ap.add_argument("--canned", type=Path, help="copy this model directory instead of synthesizing one")
    ap.add_argument("--fail", action="store_true", help="exit with status 1 without writing anything")
    args = ap.parse_args(argv)

    if args.fail:
        print("stub estimator: failing on request", file=sys.stderr)
        return 1
    args.model_dir.mkdir(parents=True, exist_ok=True)
    if args.canned:
        files = BINARY_FILES if all((args.canned / f).is_file() for f in BINARY_FILES) else TEXT_FILES
        for f in files:
            shutil.copyfile(args.canned / f, args.model_dir / f)
        print(f"stub estimator: copied {args.canned}")
        return 0

    names = sorted(p.name for p in args.frames_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not names:
        print("stub estimator: no frames", file=sys.stderr)
        return 1
    with Image.open(args.frames_dir / names[0]) as im:
        width, height = im.size
    chosen = select_evenly(names, args.coverage)
    model = synthesize_model(chosen, width, height)
    (write_colmap_binary if args.format == "binary" else write_colmap_text)(model, args.model_dir)
    print(f"stub estimator: posed {len(chosen)} of {len(names)} frames")
    return 0


if __name__ == "__main__":
    sys.exit(main())
