"""Full-reference image quality: PSNR and SSIM."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .frames import decode_image, to_gray

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
DYNAMIC_RANGE = 255.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_value: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    a, b = _pair(a, b)
    if a.size == 0:
        raise ValueError("empty images")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(max_value * max_value / mse))


@lru_cache(maxsize=4)
def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable correlation over positions where the window fits entirely."""
    n = len(taps)
    h, w = plane.shape
    rows = sum(taps[i] * plane[:, i:w - n + 1 + i] for i in range(n))
    return sum(taps[i] * rows[i:h - n + 1 + i, :] for i in range(n))


def _luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3 and img.shape[2] == 3:
        return to_gray(img).astype(np.float64)
    if img.ndim == 2:
        return img.astype(np.float64)
    raise ValueError(f"expected a grayscale or RGB image, got shape {img.shape}")


def ssim_map(a, b) -> np.ndarray:
    """Per-window SSIM over every valid 11x11 position (luma for RGB input)."""
    a, b = _pair(a, b)
    x, y = _luma(a), _luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    g = gaussian_kernel()
    c1 = (K1 * DYNAMIC_RANGE) ** 2
    c2 = (K2 * DYNAMIC_RANGE) ** 2
    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    var_x = _filter_valid(x * x, g) - mu_x * mu_x
    var_y = _filter_valid(y * y, g) - mu_y * mu_y
    cov = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM; identical inputs give exactly 1 since numerator and denominator agree bitwise."""
    return float(ssim_map(a, b).mean())


@dataclass(frozen=True)
class MetricReport:
    pair: tuple[str, str]
    psnr_db: float
    ssim: float

    def to_record(self) -> dict:
        return {
            "a": self.pair[0],
            "b": self.pair[1],
            "psnr_db": "inf" if math.isinf(self.psnr_db) else self.psnr_db,
            "ssim": self.ssim,
        }


def compare_images(path_a: str | os.PathLike, path_b: str | os.PathLike) -> MetricReport:
    a, b = decode_image(Path(path_a)), decode_image(Path(path_b))
    return MetricReport((str(path_a), str(path_b)), psnr(a, b), ssim(a, b))


def compare(path_a: str | os.PathLike, path_b: str | os.PathLike) -> list[MetricReport]:
    """Compare two images, or two directories paired by file name."""
    pa, pb = Path(path_a), Path(path_b)
    if pa.is_dir() != pb.is_dir():
        raise ValueError("compare either two files or two directories")
    if not pa.is_dir():
        return [compare_images(pa, pb)]
    names_a = {p.name for p in pa.iterdir() if p.is_file()}
    names_b = {p.name for p in pb.iterdir() if p.is_file()}
    common = sorted(names_a & names_b)
    if not common:
        raise ValueError(f"no file names in common between {pa} and {pb}")
    return [compare_images(pa / n, pb / n) for n in common]
