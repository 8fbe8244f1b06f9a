import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import fft as sfft

from nerfprep.dedup import (
    BKTree,
    PerceptualHash,
    area_resize,
    find_duplicates,
    hamming,
    hash_frames,
    hash_plane,
    phash64,
    reduce_duplicates,
)
from nerfprep.frames import Frame, FrameId, FrameSet, to_gray
import synth

u64 = st.integers(0, 2**64 - 1)


def fid(i, cam="A"):
    return FrameId(cam, "", i)


def frame(rgb, i, cam="A"):
    return Frame(fid(i, cam), np.ascontiguousarray(rgb, dtype=np.uint8), None)


def reference_hash(plane):
    """Independent route: block-mean resize, scipy DCT, median of AC terms."""
    p = np.asarray(plane, dtype=np.float64)
    h, w = p.shape
    small = p.reshape(32, h // 32, 32, w // 32).mean(axis=(1, 3))
    small = small - small.mean()
    block = sfft.dctn(small, type=2, norm=None)[:8, :8].ravel() / 4.0  # scipy's DCT-II is 2x per axis
    med = np.median(block[1:])
    tol = 1e-9 * 1024 * np.abs(small).max()
    return int("".join("1" if c - med > tol else "0" for c in block), 2)


# ---------------------------------------------------------------- hamming


def test_hamming_examples():
    assert hamming(0, 0) == 0
    assert hamming(2**64 - 1, 0) == 64
    assert hamming(0b1010, 0b0110) == 2


@settings(max_examples=200)
@given(u64, u64, u64)
def test_hamming_is_a_metric(a, b, c):
    assert hamming(a, b) == hamming(b, a) >= 0
    assert (hamming(a, b) == 0) == (a == b)
    assert hamming(a, c) <= hamming(a, b) + hamming(b, c)


# ------------------------------------------------------------------ hash


def test_area_resize_matches_block_mean_when_divisible(rng):
    p = rng.normal(size=(64, 96))
    np.testing.assert_allclose(area_resize(p, 32, 32), p.reshape(32, 2, 32, 3).mean(axis=(1, 3)), atol=1e-12)


def test_area_resize_preserves_mean_for_any_size(rng):
    p = rng.normal(size=(37, 53))
    assert area_resize(p, 32, 32).mean() == pytest.approx(p.mean(), abs=1e-12)


def test_hash_matches_independent_reference(rng):
    for _ in range(20):
        plane = rng.integers(0, 256, (64, 128)).astype(float)
        plane = synth.gaussian_blur(plane, 2.0)
        assert hash_plane(plane) == reference_hash(plane)


def test_constant_image_hash():
    # mean-centring leaves an all-zero block, so no coefficient beats the median
    f = frame(np.full((40, 50, 3), 123), 0)
    assert phash64(f).bits == 0
    assert phash64(f).hex == "0000000000000000"


def test_brightness_offset_does_not_change_hash(rng):
    base = synth.to_u8(synth.scene(rng, 96, 128) * 0.8)
    brighter = synth.to_u8(base.astype(int) + 20)
    assert hamming(phash64(frame(base, 0)).bits, phash64(frame(brighter, 1)).bits) == 0


def test_identical_frames_share_hash(rng):
    rgb = rng.integers(0, 256, (33, 47, 3))
    assert phash64(frame(rgb, 0)).bits == phash64(frame(rgb, 1)).bits


def test_hash_value_range():
    with pytest.raises(ValueError):
        PerceptualHash(2**64, fid(0))
    with pytest.raises(ValueError):
        PerceptualHash(-1, fid(0))


def test_hash_frames_parallel_agrees(rng):
    fs = FrameSet(tuple(frame(rng.integers(0, 256, (20, 20, 3)), i) for i in range(8)), "deblurred")
    assert hash_frames(fs) == hash_frames(fs, workers=4)


# ---------------------------------------------------------------- BK-tree


def linear_scan(items, q, r):
    return {h for h in items if hamming(h.bits, q) <= r}


def test_bktree_basics():
    tree = BKTree()
    assert tree.query(0, 64) == set()
    a = PerceptualHash(0b1111, fid(0))
    tree.insert(a)
    assert tree.root.items == [a]
    b = PerceptualHash(0b1111, fid(1))
    tree.insert(b)
    assert tree.root.items == [a, b] and len(tree) == 2
    c = PerceptualHash(0b0011, fid(2))
    tree.insert(c)
    assert tree.root.children[2].items == [c]
    with pytest.raises(ValueError):
        tree.insert(PerceptualHash(5, fid(0)))
    assert tree.query(0b1111, 0) == {a, b}
    assert tree.query(0b0101_0000, 0) == set()
    assert tree.query(0b0101_0000, 64) == {a, b, c}
    assert set(tree) == {a, b, c}
    with pytest.raises(ValueError):
        tree.query(0, 65)


def test_bktree_edges_equal_parent_distance(rng):
    items = [PerceptualHash(int(v), fid(i)) for i, v in enumerate(rng.integers(0, 2**63, 300, dtype=np.int64))]
    tree = BKTree(items)
    stack = [tree.root]
    while stack:
        node = stack.pop()
        for h in node.items:
            assert h.bits == node.bits
        for d, child in node.children.items():
            assert 1 <= d <= 64 and hamming(node.bits, child.bits) == d
            stack.append(child)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 2**12 - 1), min_size=0, max_size=60), st.integers(0, 2**12 - 1), st.integers(0, 12))
def test_bktree_query_equals_linear_scan(values, q, r):
    # a 12-bit universe forces many collisions and same-hash lists
    items = [PerceptualHash(v, fid(i)) for i, v in enumerate(values)]
    assert BKTree(items).query(q, r) == linear_scan(items, q, r)


# -------------------------------------------------------------- clustering


def deblurred(frames):
    return FrameSet(tuple(frames), "deblurred")


def test_no_close_pairs_gives_no_clusters(rng):
    fs = deblurred(frame(synth.scene(rng, 64, 64), i) for i in range(6))
    assert find_duplicates(fs, 10) == []
    assert reduce_duplicates(fs, []).ids == fs.ids


def test_three_identical_frames(rng):
    rgb = synth.scene(rng, 64, 64)
    fs = deblurred([frame(rgb, 0), frame(rgb, 1), frame(rgb, 2)])
    clusters = find_duplicates(fs, 0)
    assert len(clusters) == 1
    assert clusters[0].representative == fid(0)
    assert clusters[0].members == {fid(1): 0, fid(2): 0}
    out = reduce_duplicates(fs, clusters)
    assert out.ids == [fid(0)] and out.provenance == "deduped"


def test_greedy_star_is_not_transitive():
    # hashes chained at distance 4: 0 ~ 1 ~ 2 but 0 and 2 are 8 apart
    hashes = {fid(0): PerceptualHash(0, fid(0)), fid(1): PerceptualHash(0xF, fid(1)),
              fid(2): PerceptualHash(0xFF, fid(2))}
    fs = deblurred([frame(np.zeros((2, 2, 3)), i) for i in range(3)])
    clusters = find_duplicates(fs, 4, hashes)
    assert [(c.representative, c.members) for c in clusters] == [(fid(0), {fid(1): 4})]
    assert reduce_duplicates(fs, clusters).ids == [fid(0), fid(2)]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 2**10 - 1), min_size=1, max_size=40), st.integers(0, 10))
def test_representatives_are_spread(values, h_s):
    ids = [fid(i) for i in range(len(values))]
    hashes = {f: PerceptualHash(v, f) for f, v in zip(ids, values)}
    fs = deblurred([frame(np.zeros((1, 1, 3)), i) for i in range(len(values))])
    clusters = find_duplicates(fs, h_s, hashes)
    out = reduce_duplicates(fs, clusters)
    kept = [hashes[f].bits for f in out.ids]
    assert all(hamming(a, b) > h_s for i, a in enumerate(kept) for b in kept[i + 1:])
    removed = [m for c in clusters for m in c.members]
    assert len(removed) == len(set(removed)) and len(out) + len(removed) == len(fs)
    for c in clusters:
        assert c.representative not in c.members
        assert all(hamming(hashes[c.representative].bits, hashes[m].bits) == d <= h_s for m, d in c.members.items())


def test_all_identical_reduce_to_one():
    fs = deblurred([frame(np.full((8, 8, 3), 5), i) for i in range(7)])
    assert len(reduce_duplicates(fs, find_duplicates(fs))) == 1


def test_clustering_contract_errors(rng):
    fs = FrameSet((frame(np.zeros((2, 2, 3)), 0),), "sampled")
    with pytest.raises(ValueError):
        find_duplicates(fs)
    with pytest.raises(ValueError):
        find_duplicates(deblurred(fs.frames), 65)
    other = find_duplicates(deblurred([frame(np.zeros((4, 4, 3)), i, "Z") for i in range(2)]))
    with pytest.raises(ValueError):
        reduce_duplicates(deblurred(fs.frames), other)


def test_cluster_record():
    fs = deblurred([frame(np.full((8, 8, 3), 5), i) for i in range(2)])
    rec = find_duplicates(fs)[0].to_record()
    assert rec == {"representative": "A_0", "members": [{"frame": "A_1", "distance": 0}]}
