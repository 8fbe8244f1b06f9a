"""Pose algebra: quaternions, camera-to-world matrices, NeRF axis convention,
scene normalization and per-image depth bounds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .colmap import ImagePose, SparseModel

UNIT_TOLERANCE = 1e-3
NEAR_PERCENTILE, FAR_PERCENTILE = 1.0, 99.0
NEAR_PAD, FAR_PAD = 0.9, 1.1


class DegenerateBoundsError(ValueError):
    pass


def quat_to_rotmat(q) -> np.ndarray:
    """Hamilton (qw, qx, qy, qz) to a 3x3 rotation matrix; renormalizes first."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        raise ValueError("near-zero quaternion")
    if abs(norm - 1.0) > UNIT_TOLERANCE:
        raise ValueError(f"quaternion norm {norm:.6g} is not within {UNIT_TOLERANCE} of 1")
    w, x, y, z = q / norm
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_to_quat(R) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat`, returned with qw >= 0."""
    R = np.asarray(R, dtype=np.float64)
    trace = np.trace(R)
    if trace > 0:
        s = 2.0 * np.sqrt(trace + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = [0.0, 0.0, 0.0, 0.0]
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def w2c_matrix(pose: ImagePose) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_to_rotmat(pose.qvec)
    m[:3, 3] = pose.tvec
    return m


def w2c_to_c2w(pose: ImagePose) -> np.ndarray:
    """Camera-to-world 4x4: rotation R^T, translation -R^T t."""
    R = quat_to_rotmat(pose.qvec)
    t = np.asarray(pose.tvec, dtype=np.float64)
    m = np.eye(4)
    m[:3, :3] = R.T
    m[:3, 3] = -R.T @ t
    return m


def invert_rigid(m: np.ndarray) -> np.ndarray:
    """Inverse of a rigid 4x4 transform (c2w <-> w2c)."""
    R = m[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ m[:3, 3]
    return out


def colmap_to_nerf_convention(c2w: np.ndarray) -> np.ndarray:
    """Flip the camera y and z axes (+z forward/-y up to -z forward/+y up)."""
    out = np.array(c2w, dtype=np.float64, copy=True)
    out[:3, 1:3] *= -1.0
    return out


@dataclass(frozen=True)
class SceneTransform:
    """new_center = (old_center - translation) * scale"""

    translation: tuple[float, float, float]
    scale: float

    def to_dict(self) -> dict:
        return {"translation": list(self.translation), "scale": self.scale}


def normalize_scene(poses: Sequence[np.ndarray]) -> tuple[list[np.ndarray], SceneTransform]:
    """Centre camera positions on their centroid and scale the farthest to norm 1.

    Coincident cameras keep scale 1.
    """
    if len(poses) == 0:
        raise ValueError("normalize_scene needs at least one pose")
    centers = np.array([p[:3, 3] for p in poses], dtype=np.float64)
    centroid = centers.mean(axis=0)
    radius = np.linalg.norm(centers - centroid, axis=1).max()
    scale = 1.0 / radius if radius > 0 else 1.0
    out = []
    for p in poses:
        q = np.array(p, dtype=np.float64, copy=True)
        q[:3, 3] = (q[:3, 3] - centroid) * scale
        out.append(q)
    return out, SceneTransform(tuple(float(v) for v in centroid), float(scale))


def observations(model: SparseModel) -> dict[int, np.ndarray]:
    """image_id -> (n, 3) coordinates of the points that image observes."""
    seen: dict[int, list] = {image_id: [] for image_id in model.images}
    for pt in model.points.values():
        for image_id in {i for i, _ in pt.track}:
            seen.setdefault(image_id, []).append(pt.xyz)
    return {k: np.asarray(v, dtype=np.float64).reshape(-1, 3) for k, v in seen.items()}


def compute_bounds(model: SparseModel, pose: ImagePose, observed: np.ndarray | None = None) -> tuple[float, float]:
    """(near, far) from the depths of the points this image observes.

    ``observed`` may pass this image's entry from :func:`observations`.
    """
    xyz = model.points_seen_by(pose.image_id) if observed is None else observed
    R = quat_to_rotmat(pose.qvec)
    depths = (xyz @ R.T + np.asarray(pose.tvec))[:, 2] if len(xyz) else np.empty(0)
    depths = depths[depths > 0]
    if depths.size == 0:
        raise DegenerateBoundsError(f"degenerate bounds: image {pose.name!r} sees no point in front of it")
    near = NEAR_PAD * float(np.percentile(depths, NEAR_PERCENTILE))
    far = FAR_PAD * float(np.percentile(depths, FAR_PERCENTILE))
    return near, far
