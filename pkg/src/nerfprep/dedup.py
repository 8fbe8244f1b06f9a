"""Perceptual hashing, BK-tree indexing and near-duplicate removal."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Mapping

import numpy as np

from .frames import Frame, FrameId, FrameSet, to_gray

HASH_BITS = 64
RESIZE = 32
BLOCK = 8
DEFAULT_H_S = 10
# coefficients within this fraction of the largest possible coefficient
# (RESIZE**2 * peak pixel) of the median count as ties
TIE_TOLERANCE = 1e-9

_MASK = (1 << HASH_BITS) - 1


@dataclass(frozen=True)
class PerceptualHash:
    bits: int
    frame: FrameId

    def __post_init__(self):
        if not 0 <= self.bits <= _MASK:
            raise ValueError("hash must be a 64-bit unsigned integer")

    @property
    def hex(self) -> str:
        return f"{self.bits:016x}"


@lru_cache(maxsize=32)
def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging each output cell's footprint by overlap."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


@lru_cache(maxsize=4)
def _dct_rows(n: int, keep: int) -> np.ndarray:
    """First ``keep`` rows of the unnormalized DCT-II matrix of size n."""
    k = np.arange(keep)[:, None]
    x = np.arange(n)[None, :]
    return np.cos(np.pi * (2 * x + 1) * k / (2 * n))


def area_resize(plane: np.ndarray, height: int, width: int) -> np.ndarray:
    p = np.asarray(plane, dtype=np.float64)
    return _area_weights(p.shape[0], height) @ p @ _area_weights(p.shape[1], width).T


def low_frequency_block(small: np.ndarray) -> np.ndarray:
    """8x8 top-left DCT-II block of a mean-centred 32x32 plane."""
    c = _dct_rows(RESIZE, BLOCK)
    return c @ (small - small.mean()) @ c.T


def hash_plane(plane) -> int:
    """64-bit perceptual hash of a grayscale plane.

    Bits are row-major over the 8x8 low-frequency block, bit 0 being the
    most significant; a bit is set when its coefficient is strictly above
    the median of the 63 non-DC coefficients. The plane is mean-centred
    first, so the DC slot records whether that median is negative and
    brightness offsets leave the hash unchanged.
    """
    small = area_resize(plane, RESIZE, RESIZE)
    block = low_frequency_block(small).ravel()
    median = np.median(block[1:])
    tol = TIE_TOLERANCE * RESIZE * RESIZE * np.abs(small).max()
    bits = 0
    for coeff in block:
        bits = (bits << 1) | int(coeff - median > tol)
    return bits


def phash64(frame: Frame) -> PerceptualHash:
    return PerceptualHash(hash_plane(to_gray(frame.rgb)), frame.id)


def hamming(u: int, v: int) -> int:
    return ((u ^ v) & _MASK).bit_count()


@dataclass
class _Node:
    items: list[PerceptualHash]  # items[0] owns the node; the rest share its bits
    children: dict[int, "_Node"] = field(default_factory=dict)

    @property
    def bits(self) -> int:
        return self.items[0].bits


class BKTree:
    """Burkhard-Keller tree over 64-bit hashes under Hamming distance.

    Build once (single writer), then query freely; queries never mutate.
    """

    def __init__(self, hashes=()):
        self.root: _Node | None = None
        self._frames: set[FrameId] = set()
        for h in hashes:
            self.insert(h)

    def __len__(self) -> int:
        return len(self._frames)

    def __iter__(self) -> Iterator[PerceptualHash]:
        stack = [self.root] if self.root else []
        while stack:
            node = stack.pop()
            yield from node.items
            stack.extend(node.children.values())

    def insert(self, h: PerceptualHash) -> None:
        if h.frame in self._frames:
            raise ValueError(f"frame {h.frame} is already in the tree")
        self._frames.add(h.frame)
        if self.root is None:
            self.root = _Node([h])
            return
        node = self.root
        while True:
            d = hamming(node.bits, h.bits)
            if d == 0:
                node.items.append(h)
                return
            child = node.children.get(d)
            if child is None:
                node.children[d] = _Node([h])
                return
            node = child

    def query(self, bits: int, radius: int) -> set[PerceptualHash]:
        """Every stored hash within ``radius`` of ``bits``."""
        if not 0 <= radius <= HASH_BITS:
            raise ValueError(f"radius must lie in [0, {HASH_BITS}], got {radius}")
        found: set[PerceptualHash] = set()
        stack = [self.root] if self.root else []
        while stack:
            node = stack.pop()
            d = hamming(node.bits, bits)
            if d <= radius:
                found.update(node.items)
            for edge, child in node.children.items():
                if abs(edge - d) <= radius:
                    stack.append(child)
        return found


@dataclass(frozen=True)
class DuplicateCluster:
    representative: FrameId
    members: dict[FrameId, int]  # removed frame -> distance to representative
    h_s: int

    def to_record(self) -> dict:
        return {
            "representative": str(self.representative),
            "members": [{"frame": str(f), "distance": d} for f, d in self.members.items()],
        }


def hash_frames(frames: FrameSet, workers: int = 1) -> dict[FrameId, PerceptualHash]:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hashes = list(pool.map(phash64, frames.frames))
    else:
        hashes = [phash64(f) for f in frames]
    return {h.frame: h for h in hashes}


def find_duplicates(
    frames: FrameSet,
    h_s: int = DEFAULT_H_S,
    hashes: Mapping[FrameId, PerceptualHash] | None = None,
) -> list[DuplicateCluster]:
    """Greedy star clustering in FrameId order.

    Each not-yet-clustered frame seeds a cluster holding every other
    unclustered frame within ``h_s`` of it; the seed (the earliest id) is
    kept as representative. Singletons produce no cluster.
    """
    if frames.provenance != "deblurred":
        raise ValueError(f"duplicate search expects deblurred frames, got {frames.provenance!r}")
    if not 0 <= h_s <= HASH_BITS:
        raise ValueError(f"h_s must lie in [0, {HASH_BITS}], got {h_s}")
    table = {f.id: (hashes[f.id] if hashes is not None and f.id in hashes else phash64(f)) for f in frames}
    tree = BKTree(table[fid] for fid in frames.ids)

    clustered: set[FrameId] = set()
    clusters = []
    for fid in frames.ids:
        if fid in clustered:
            continue
        clustered.add(fid)
        seed = table[fid]
        near = sorted(h.frame for h in tree.query(seed.bits, h_s) if h.frame not in clustered)
        if not near:
            continue
        clustered.update(near)
        members = {m: hamming(seed.bits, table[m].bits) for m in near}
        clusters.append(DuplicateCluster(fid, members, h_s))
    return clusters


def reduce_duplicates(frames: FrameSet, clusters) -> FrameSet:
    removed = {m for c in clusters for m in c.members}
    unknown = removed - set(frames.ids)
    if unknown:
        raise ValueError(f"clusters name frames outside this set: {sorted(map(str, unknown))[:3]}")
    return frames.with_frames((f for f in frames if f.id not in removed), "deduped")
