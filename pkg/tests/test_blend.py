import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unportrait.blend import collapse, gaussian_pyramid, laplacian_blend, laplacian_pyramid, max_levels
from unportrait.imaging import ImageBuffer


def rand_image(h, w, seed):
    return ImageBuffer.from_rgb(np.random.default_rng(seed).random((h, w, 3)))


def test_full_mask_returns_foreground():
    fg, bg = rand_image(64, 48, 0), rand_image(64, 48, 1)
    out = laplacian_blend(fg, bg, np.ones(fg.shape), 3)
    np.testing.assert_allclose(out.rgba, fg.rgba, atol=1e-6)
    out = laplacian_blend(fg, bg, np.zeros(fg.shape), 3)
    np.testing.assert_allclose(out.rgba, bg.rgba, atol=1e-6)


def test_identical_inputs():
    fg = rand_image(40, 40, 2)
    mask = np.random.default_rng(3).random(fg.shape)
    out = laplacian_blend(fg, fg, mask, max_levels(fg.shape))
    np.testing.assert_allclose(out.rgba, fg.rgba, atol=1e-6)


def test_black_white_seam_is_monotone():
    h, w = 32, 64
    fg = ImageBuffer.from_rgb(np.zeros((h, w, 3)))
    bg = ImageBuffer.from_rgb(np.ones((h, w, 3)))
    mask = np.zeros((h, w))
    mask[:, : w // 2] = 1.0
    out = laplacian_blend(fg, bg, mask, max_levels((h, w)))
    row = out.rgb[h // 2, :, 0]
    assert row.min() >= -0.02 and row.max() <= 1.02
    smooth = np.clip(row, 0, 1)
    assert np.all(np.diff(smooth) >= -0.02)
    assert row[0] < 0.05 and row[-1] > 0.95


def test_level_bounds():
    img = rand_image(32, 32, 4)
    assert max_levels((32, 32)) == 3
    with pytest.raises(ValueError):
        laplacian_pyramid(img.rgb, 4)
    with pytest.raises(ValueError):
        laplacian_blend(img, img, np.ones((32, 32)) * 2, 2)
    with pytest.raises(ValueError):
        laplacian_blend(img, rand_image(16, 16, 0), np.ones((32, 32)), 1)


def test_pyramid_shapes():
    pyr = gaussian_pyramid(np.zeros((33, 20)), 2)
    assert [p.shape for p in pyr] == [(33, 20), (17, 10), (9, 5)]


@settings(max_examples=40, deadline=None)
@given(st.integers(8, 70), st.integers(8, 70), st.integers(0, 2 ** 31 - 1), st.data())
def test_pyramid_roundtrip(h, w, seed, data):
    levels = data.draw(st.integers(0, max_levels((h, w))))
    img = np.random.default_rng(seed).random((h, w, 3))
    np.testing.assert_allclose(collapse(laplacian_pyramid(img, levels)), img, atol=1e-6)
