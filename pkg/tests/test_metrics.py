import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from nerfprep.frames import to_gray
from nerfprep.metrics import compare, psnr, ssim, ssim_map
import synth


def test_psnr_closed_forms():
    a = np.full((8, 8, 3), 255, np.uint8)
    assert psnr(a, a) == math.inf
    assert psnr(a, np.zeros_like(a)) == pytest.approx(0.0, abs=1e-12)
    c = np.full((5, 7), 100, np.uint8)
    assert psnr(c, c + 16) == pytest.approx(24.0482, abs=1e-3)
    assert psnr(c, c + 16) == pytest.approx(10 * math.log10(255 ** 2 / 256), abs=1e-12)
    assert psnr(c.astype(float) / 255, (c + 16).astype(float) / 255, max_value=1.0) == pytest.approx(24.0482, abs=1e-3)


def test_psnr_inf_only_when_identical(rng):
    a = rng.integers(0, 256, (10, 10, 3), dtype=np.uint8)
    b = a.copy()
    b[3, 4, 1] ^= 1
    assert math.isfinite(psnr(a, b))


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_psnr_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 256, (2, 9, 7, 3), dtype=np.uint8)
    perm = rng.permutation(a.size)
    assert psnr(a, b) == pytest.approx(psnr(a.ravel()[perm], b.ravel()[perm]), rel=1e-12)


def test_ssim_identity_exact(rng):
    x = rng.integers(0, 256, (30, 40, 3), dtype=np.uint8)
    assert abs(ssim(x, x) - 1.0) <= 1e-12


@pytest.mark.parametrize("shape", [(11, 11), (16, 20), (25, 13)])
def test_ssim_matches_naive_windows(shape, rng):
    a = rng.integers(0, 256, shape).astype(np.uint8)
    b = synth.to_u8(synth.gaussian_blur(a.astype(float), 1.0) + rng.normal(0, 8, shape))
    assert ssim(a, b) == pytest.approx(synth.naive_ssim(a, b), abs=1e-9)


def test_ssim_uses_luma_for_rgb(rng):
    a, b = rng.integers(0, 256, (2, 20, 20, 3), dtype=np.uint8)
    assert ssim(a, b) == pytest.approx(synth.naive_ssim(to_gray(a), to_gray(b)), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 256, (2, 14, 17), dtype=np.uint8)
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12
    m = ssim_map(a, b)
    assert np.all(m >= -1) and np.all(m <= 1)


def test_ssim_drops_with_noise():
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = synth.scene(rng, 64, 64)
        scores = [ssim(x, synth.to_u8(x + rng.normal(0, s, x.shape))) for s in (5, 10, 20)]
        assert scores[0] > scores[1] > scores[2]


def test_ssim_input_checks():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12, 4)), np.zeros((12, 12, 4)))


def test_compare_files_and_directories(tmp_path, rng):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    for name in ("x.png", "y.png"):
        img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        Image.fromarray(img).save(tmp_path / "a" / name)
        Image.fromarray(img if name == "x.png" else 255 - img).save(tmp_path / "b" / name)
    Image.fromarray(img).save(tmp_path / "a" / "only_here.png")
    reports = compare(tmp_path / "a", tmp_path / "b")
    assert [r.pair[0].rsplit("/", 1)[1] for r in reports] == ["x.png", "y.png"]
    assert reports[0].to_record()["psnr_db"] == "inf" and reports[0].ssim == 1.0
    assert math.isfinite(reports[1].psnr_db)
    single = compare(tmp_path / "a" / "x.png", tmp_path / "b" / "y.png")
    assert len(single) == 1
    with pytest.raises(ValueError):
        compare(tmp_path / "a", tmp_path / "b" / "x.png")
