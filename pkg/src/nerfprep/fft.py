"""Exact-size discrete Fourier transforms.

Lengths whose prime factors are all in {2, 3, 5} run through a self-sorting
(Stockham) mixed-radix Cooley-Tukey kernel; every other length goes through
Bluestein's chirp-z algorithm on top of a power-of-two kernel. Nothing is
cropped or zero-padded in the result: a W x H plane always yields a W x H
spectrum. All arithmetic is double precision.
"""

from __future__ import annotations

from functools import lru_cache

import numba
import numpy as np

__all__ = ["fft", "ifft", "fft2d", "ifft2d", "fftshift2d"]

_SMOOTH_PRIMES = (2, 3, 5)


@numba.njit(cache=True, nogil=True)
def _stockham_rows(a, radices, tw):
    """In-place forward DFT of every row of ``a`` (complex128, C-contiguous).

    ``tw[t] = exp(-2j*pi*t/n)``; the product of ``radices`` must equal n.
    """
    rows, n = a.shape
    buf = np.empty(n, np.complex128)
    tmp = np.empty(8, np.complex128)
    small = np.empty((8, 8), np.complex128)
    for row in range(rows):
        src = a[row]
        dst = buf
        swapped = False
        l = 1
        r = n
        for p in radices:
            r //= p
            lp = l * p
            if p == 2:
                for k in range(r):
                    for j in range(l):
                        x0 = src[k * l + j]
                        x1 = src[(k + r) * l + j] * tw[j * r]
                        b = k * lp + j
                        dst[b] = x0 + x1
                        dst[b + l] = x0 - x1
            elif p == 4:
                for k in range(r):
                    for j in range(l):
                        x0 = src[k * l + j]
                        x1 = src[(k + r) * l + j] * tw[j * r]
                        x2 = src[(k + 2 * r) * l + j] * tw[2 * j * r]
                        x3 = src[(k + 3 * r) * l + j] * tw[3 * j * r]
                        s02 = x0 + x2
                        d02 = x0 - x2
                        s13 = x1 + x3
                        d13 = x1 - x3
                        # multiply by -i
                        d13 = complex(d13.imag, -d13.real)
                        b = k * lp + j
                        dst[b] = s02 + s13
                        dst[b + l] = d02 + d13
                        dst[b + 2 * l] = s02 - s13
                        dst[b + 3 * l] = d02 - d13
            else:
                wp = n // p
                for m in range(p):
                    for q in range(p):
                        small[m, q] = tw[((q * m) % p) * wp]
                for k in range(r):
                    for j in range(l):
                        for q in range(p):
                            tmp[q] = src[(k + r * q) * l + j] * tw[q * j * r]
                        b = k * lp + j
                        for m in range(p):
                            acc = tmp[0]
                            for q in range(1, p):
                                acc += tmp[q] * small[m, q]
                            dst[b + l * m] = acc
            l = lp
            src, dst = dst, src
            swapped = not swapped
        if swapped:
            for i in range(n):
                a[row, i] = buf[i]


@numba.njit(cache=True, nogil=True)
def _bluestein_rows(x, out, chirp, kernel, radices, tw):
    rows, n = x.shape
    m = kernel.shape[0]
    work = np.empty((1, m), np.complex128)
    scale = 1.0 / m
    for row in range(rows):
        w = work[0]
        for i in range(n):
            w[i] = x[row, i] * chirp[i]
        for i in range(n, m):
            w[i] = 0.0
        _stockham_rows(work, radices, tw)
        # inverse transform as conj(fft(conj(.)))
        for i in range(m):
            w[i] = np.conj(w[i] * kernel[i])
        _stockham_rows(work, radices, tw)
        for i in range(n):
            out[row, i] = np.conj(w[i]) * scale * chirp[i]


def _factor_smooth(n: int) -> tuple[int, ...] | None:
    radices = []
    while n % 4 == 0:
        radices.append(4)
        n //= 4
    for p in _SMOOTH_PRIMES:
        while n % p == 0:
            radices.append(p)
            n //= p
    return tuple(radices) if n == 1 else None


@lru_cache(maxsize=64)
def _stockham_plan(n: int) -> tuple[np.ndarray, np.ndarray]:
    radices = _factor_smooth(n)
    if radices is None:
        raise ValueError(f"length {n} is not 2,3,5-smooth")
    tw = np.exp(-2j * np.pi * np.arange(n) / n)
    return np.array(radices, dtype=np.int64), tw


@lru_cache(maxsize=64)
def _bluestein_plan(n: int):
    m = 1
    while m < 2 * n - 1:
        m <<= 1
    k = np.arange(n, dtype=np.int64)
    # k^2 mod 2n keeps the chirp phase exact for large k
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    kernel = np.zeros((1, m), dtype=np.complex128)
    kernel[0, :n] = np.conj(chirp)
    kernel[0, m - n + 1:] = np.conj(chirp[1:][::-1])
    radices, tw = _stockham_plan(m)
    _stockham_rows(kernel, radices, tw)
    return chirp, kernel[0], radices, tw


def _fft_rows(x: np.ndarray) -> np.ndarray:
    """Forward DFT along the last axis of a 2-D array; returns a new array."""
    a = np.array(x, dtype=np.complex128, order="C", copy=True)
    n = a.shape[1]
    if n <= 1 or a.shape[0] == 0:
        return a
    if _factor_smooth(n) is not None:
        radices, tw = _stockham_plan(n)
        _stockham_rows(a, radices, tw)
        return a
    chirp, kernel, radices, tw = _bluestein_plan(n)
    out = np.empty_like(a)
    _bluestein_rows(a, out, chirp, kernel, radices, tw)
    return out


def fft(x, axis: int = -1) -> np.ndarray:
    """Forward DFT of ``x`` along ``axis`` (unnormalized, e^{-2 pi i} kernel)."""
    x = np.asarray(x)
    moved = np.moveaxis(x, axis, -1)
    shape = moved.shape
    if moved.ndim == 0:
        raise ValueError("fft needs at least one axis")
    out = _fft_rows(moved.reshape(-1, shape[-1]))
    return np.moveaxis(out.reshape(shape), -1, axis)


def ifft(x, axis: int = -1) -> np.ndarray:
    """Inverse DFT along ``axis``, scaled by 1/n."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[axis]
    return np.conj(fft(np.conj(x), axis=axis)) / n


def _rfft_rows(x: np.ndarray) -> np.ndarray:
    """Full-length DFT of real rows, two rows per complex transform."""
    rows, n = x.shape
    if rows % 2:
        x = np.vstack([x, np.zeros((1, n))])
    z = _fft_rows(x[0::2] + 1j * x[1::2])
    zr = np.conj(z[:, (-np.arange(n)) % n])
    out = np.empty((x.shape[0], n), dtype=np.complex128)
    out[0::2] = 0.5 * (z + zr)
    out[1::2] = -0.5j * (z - zr)
    return out[:rows]


def fft2d(plane) -> np.ndarray:
    """2-D DFT of an (H, W) plane.

    ``F[v, u] = sum_{y,x} plane[y, x] * exp(-2 pi i (u x / W + v y / H))``.
    Real planes take a faster path that packs row pairs and fills the
    right half of the spectrum from Hermitian symmetry.
    """
    p = np.asarray(plane)
    if p.ndim != 2 or min(p.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D plane, got shape {p.shape}")
    if np.iscomplexobj(p):
        return _fft_rows(_fft_rows(p).T).T.copy()
    h, w = p.shape
    rows = _rfft_rows(p.astype(np.float64, copy=False))
    half = w // 2 + 1
    cols = _fft_rows(rows[:, :half].T).T
    spec = np.empty((h, w), dtype=np.complex128)
    spec[:, :half] = cols
    if half < w:
        v = np.arange(half, w)
        spec[:, half:] = np.conj(cols[(-np.arange(h)) % h][:, w - v])
    return spec


def ifft2d(spectrum) -> np.ndarray:
    """Inverse of :func:`fft2d` (scaled by 1/(W*H)); always complex."""
    s = np.asarray(spectrum, dtype=np.complex128)
    if s.ndim != 2 or min(s.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D spectrum, got shape {s.shape}")
    return np.conj(fft2d(np.conj(s))) / s.size


def fftshift2d(spectrum: np.ndarray) -> np.ndarray:
    """Move the zero-frequency term to the centre of the array."""
    h, w = spectrum.shape
    return np.roll(spectrum, (h // 2, w // 2), axis=(0, 1))
