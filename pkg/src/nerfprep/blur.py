"""Defocus-blur scoring and filtering.

The removal decision uses a frequency-domain sharpness measure: the fraction
of (centre-shifted) spectrum coefficients whose magnitude exceeds 1/1000 of
the spectrum's peak. Variance of the Laplacian is reported next to it for
diagnostics only.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .fft import fft2d, fftshift2d
from .frames import Frame, FrameId, FrameSet, to_gray

SPECTRUM_THRESHOLD_RATIO = 1e-3


class Decision(str, enum.Enum):
    KEEP = "keep"
    REMOVE = "remove"


@dataclass(frozen=True)
class SharpnessReport:
    frame: FrameId
    fm_score: float
    lap_var: float
    decision: Decision
    h_b: float

    def to_record(self) -> dict:
        return {
            "frame": str(self.frame),
            "fm_score": self.fm_score,
            "lap_var": self.lap_var,
            "decision": self.decision.value,
            "h_b": self.h_b,
        }


def sharpness_fm(plane) -> float:
    """Frequency-domain sharpness in [0, 1]; higher is sharper.

    An all-zero plane scores 0.
    """
    p = np.asarray(plane, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2 or p.shape[1] < 2:
        raise ValueError(f"sharpness needs a 2-D plane of at least 2x2, got {p.shape}")
    magnitude = np.abs(fftshift2d(fft2d(p)))
    peak = magnitude.max()
    if peak == 0.0:
        return 0.0
    count = np.count_nonzero(magnitude > peak * SPECTRUM_THRESHOLD_RATIO)
    return count / p.size


def laplacian_variance(plane) -> float:
    """Population variance of the 4-neighbour Laplacian over the valid interior."""
    p = np.asarray(plane, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 3 or p.shape[1] < 3:
        raise ValueError(f"laplacian needs a 2-D plane of at least 3x3, got {p.shape}")
    response = (
        p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * p[1:-1, 1:-1]
    )
    return float(response.var())


def measure_sharpness(frame: Frame) -> tuple[float, float]:
    """(fm_score, lap_var) of a frame's luma plane."""
    gray = to_gray(frame.rgb)
    fm = sharpness_fm(gray) if min(gray.shape) >= 2 else 0.0
    lap = laplacian_variance(gray) if min(gray.shape) >= 3 else 0.0
    return fm, lap


def _report(frame_id: FrameId, scores: tuple[float, float], h_b: float) -> SharpnessReport:
    fm, lap = scores
    decision = Decision.REMOVE if fm <= h_b else Decision.KEEP
    return SharpnessReport(frame_id, fm, lap, decision, h_b)


def _check_threshold(h_b: float) -> None:
    if not 0.0 <= h_b <= 1.0:
        raise ValueError(f"h_b must lie in [0, 1], got {h_b}")


def classify_blur(frame: Frame, h_b: float) -> SharpnessReport:
    _check_threshold(h_b)
    return _report(frame.id, measure_sharpness(frame), h_b)


def score_frames(frames: FrameSet, workers: int = 1) -> dict[FrameId, tuple[float, float]]:
    """Threshold-independent sharpness scores for every frame."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(measure_sharpness, frames.frames))
    else:
        scores = [measure_sharpness(f) for f in frames]
    return {f.id: s for f, s in zip(frames, scores)}


def filter_blurred(
    frames: FrameSet,
    h_b: float,
    scores: Mapping[FrameId, tuple[float, float]] | None = None,
) -> tuple[FrameSet, list[SharpnessReport]]:
    """Drop every frame with fm_score <= h_b.

    ``scores`` may carry precomputed :func:`measure_sharpness` results so a
    retry with a new threshold does not re-run the transforms.
    """
    if frames.provenance != "sampled":
        raise ValueError(f"blur filtering expects sampled frames, got {frames.provenance!r}")
    _check_threshold(h_b)
    reports = []
    kept = []
    for frame in frames:
        s = scores[frame.id] if scores is not None and frame.id in scores else measure_sharpness(frame)
        report = _report(frame.id, s, h_b)
        reports.append(report)
        if report.decision is Decision.KEEP:
            kept.append(frame)
    return frames.with_frames(kept, "deblurred"), reports
