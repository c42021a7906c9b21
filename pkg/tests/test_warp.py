import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unportrait.imaging import FlowMap, ImageBuffer
from unportrait.warp import (WarpError, backward_remap, closed_region, fill_scattered, forward_warp, rescale_flow,
                             warp_and_fill)


def ramp_image(h=24, w=32, a=(0.01, -0.02, 0.005), b=(0.015, 0.01, -0.01), c=(0.2, 0.6, 0.5)):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    rgb = np.stack([c[k] + a[k] * xs + b[k] * ys for k in range(3)], axis=-1)
    return ImageBuffer.from_rgb(rgb)


def smooth_image(h=32, w=32, seed=0):
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w] / max(h, w)
    rgb = np.stack([0.5 + 0.3 * np.sin(2.0 * xs + rng.uniform(0, 3)) * np.cos(1.5 * ys + rng.uniform(0, 3))
                    for _ in range(3)], axis=-1)
    return ImageBuffer.from_rgb(rgb)


def test_zero_flow_identity():
    img = smooth_image()
    img.mask[:3] = False
    res = forward_warp(img, FlowMap.zeros(*img.shape))
    np.testing.assert_array_equal(res.hit_mask, img.mask)
    np.testing.assert_array_equal(res.image.rgb[img.mask], img.rgb[img.mask])
    assert res.collisions == 0 and res.dropped == 0


def test_constant_flow_translates():
    img = smooth_image()
    res = forward_warp(img, FlowMap.constant(*img.shape, 5.0, 0.0))
    assert not res.hit_mask[:, :5].any()
    assert res.hit_mask[:, 5:].all()
    np.testing.assert_array_equal(res.image.rgb[:, 5:], img.rgb[:, :-5])
    assert res.dropped == 5 * img.height


def test_collisions_last_writer_and_depth():
    img = ImageBuffer.from_rgb(np.stack([np.full((1, 8), v) for v in (0.1, 0.5, 0.9)], -1))
    img.rgba[0, :, 0] = np.arange(8) / 10
    flow = FlowMap.zeros(1, 8)
    flow.flow[0, 1, 0] = -1.0  # pixel 1 lands on pixel 0
    res = forward_warp(img, flow)
    assert res.collisions == 1
    assert res.image.rgb[0, 0, 0] == pytest.approx(0.1)  # later source wins
    depth = np.ones((1, 8))
    depth[0, 0] = 0.5
    res = forward_warp(img, flow, depth)
    assert res.image.rgb[0, 0, 0] == pytest.approx(0.0)  # nearer source wins


def test_fill_all_hit_is_identity():
    img = smooth_image()
    out = fill_scattered(img, np.ones(img.shape, bool), np.ones(img.shape, bool)).image
    np.testing.assert_array_equal(out.rgba, img.rgba)


def test_fill_single_hole_on_ramp():
    img = ramp_image()
    hit = np.ones(img.shape, bool)
    hit[10, 12] = False
    sparse = img.copy()
    sparse.rgba[10, 12] = 0
    out = fill_scattered(sparse, hit, np.ones(img.shape, bool)).image
    np.testing.assert_allclose(out.rgb[10, 12], img.rgb[10, 12], atol=1e-6)


def test_fill_random_holes_on_radial_gradient():
    h = w = 48
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.hypot(xs - 20.3, ys - 27.1)
    rgb = np.repeat((0.1 + 0.8 * r / r.max())[..., None], 3, axis=2)
    rng = np.random.default_rng(4)
    hit = rng.random((h, w)) >= 0.3
    hit[[0, -1], :] = hit[:, [0, -1]] = True
    out = fill_scattered(ImageBuffer.from_rgb(rgb * hit[..., None]), hit, np.ones((h, w), bool)).image
    grad = max(np.abs(np.diff(rgb, axis=0)).max(), np.abs(np.diff(rgb, axis=1)).max())
    assert np.abs(out.rgb - rgb).max() <= 2 * grad


def test_fill_needs_three_hits():
    img = smooth_image()
    hit = np.zeros(img.shape, bool)
    hit[0, :2] = True
    with pytest.raises(WarpError):
        fill_scattered(img, hit, np.ones(img.shape, bool))
    hit[0, :6] = True
    with pytest.raises(WarpError):
        fill_scattered(img, hit, np.ones(img.shape, bool))


def test_fill_extrapolates_outside_hull():
    img = ramp_image()
    hit = np.zeros(img.shape, bool)
    hit[5:15, 5:15] = True
    res = fill_scattered(img, hit, np.ones(img.shape, bool))
    assert res.extrapolated[0, 0] and not res.extrapolated[10, 10]
    np.testing.assert_allclose(res.image.rgb[0, 0], img.rgb[5, 5])


def test_backward_remap_identity_and_translation():
    img = smooth_image()
    out = backward_remap(img, FlowMap.zeros(*img.shape))
    np.testing.assert_allclose(out.rgba, img.rgba)
    shifted = ImageBuffer.from_rgb(np.zeros_like(img.rgb), np.zeros(img.shape, bool))
    shifted.rgba[:, 5:, :3] = img.rgb[:, :-5]
    shifted.rgba[:, 5:, 3] = 1.0
    shifted.mask[:, 5:] = True
    back = backward_remap(shifted, FlowMap.constant(*img.shape, 5.0, 0.0))
    overlap = back.mask
    assert overlap[:, :-5].all() and not overlap[:, -5:].any()
    np.testing.assert_allclose(back.rgb[overlap], img.rgb[overlap], atol=1e-12)


def test_backward_remap_does_not_bleed_uncovered():
    img = ImageBuffer.from_rgb(np.ones((8, 8, 3)), np.ones((8, 8), bool))
    img.rgba[:, 4:, :3] = 0.0
    img.mask[:, 4:] = False
    out = backward_remap(img, FlowMap.constant(8, 8, 0.4, 0.0))
    np.testing.assert_allclose(out.rgb[out.mask], 1.0)


def test_rescale_flow():
    f = FlowMap(np.random.default_rng(0).normal(size=(16, 16, 2)))
    same = rescale_flow(f, (16, 16))
    np.testing.assert_allclose(same.flow, f.flow, atol=1e-7)
    up = rescale_flow(FlowMap.constant(16, 16, 3.0, 4.0), (32, 32))
    np.testing.assert_allclose(up.flow, np.broadcast_to([6.0, 8.0], (32, 32, 2)), atol=1e-12)
    aniso = rescale_flow(FlowMap.constant(16, 16, 3.0, 4.0), (48, 8))
    assert aniso.shape == (8, 48)
    np.testing.assert_allclose(aniso.flow[4, 4], [9.0, 2.0])
    with pytest.raises(WarpError):
        rescale_flow(f, (4, 4))


def test_closed_region_fills_pinholes():
    hit = np.zeros((20, 20), bool)
    hit[4:16, 4:16] = True
    hit[8, 8] = hit[10, 11] = False
    region = closed_region(hit)
    assert region[8, 8] and region[10, 11]
    assert not region[0, 0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 0.9))
def test_fill_reproduces_affine_images(seed, hole_frac):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(-0.02, 0.02, 3), rng.uniform(-0.02, 0.02, 3), rng.uniform(0.3, 0.7, 3)
    img = ramp_image(20, 24, a, b, c)
    hit = rng.random(img.shape) >= hole_frac
    hit[0, 0] = hit[0, -1] = hit[-1, 0] = hit[-1, -1] = True  # hull covers the frame
    sparse = ImageBuffer(img.rgba * hit[..., None], hit)
    out = fill_scattered(sparse, hit, np.ones(img.shape, bool)).image
    np.testing.assert_allclose(out.rgb, img.rgb, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_forward_then_backward_roundtrip(seed):
    rng = np.random.default_rng(seed)
    img = smooth_image(32, 32, seed % 97)
    ys, xs = np.mgrid[0:32, 0:32] / 32.0
    flow = np.stack([rng.uniform(-3, 3) + 1.5 * np.sin(3 * ys + rng.uniform(0, 6)),
                     rng.uniform(-3, 3) + 1.5 * np.cos(2 * xs + rng.uniform(0, 6))], axis=-1)
    fmap = FlowMap(flow)
    splat = forward_warp(img, fmap)
    region = closed_region(splat.hit_mask)
    filled = fill_scattered(splat.image, splat.hit_mask, region).image
    back = backward_remap(filled, fmap)
    # pixels that won their splat target cleanly
    tx = np.floor(np.arange(32)[None, :] + flow[..., 0] + 0.5).astype(int)
    ty = np.floor(np.arange(32)[:, None] + flow[..., 1] + 0.5).astype(int)
    inb = (tx >= 1) & (tx < 31) & (ty >= 1) & (ty < 31)
    counts = np.zeros((32, 32), int)
    np.add.at(counts, (ty[inb], tx[inb]), 1)
    clean = inb & back.mask
    clean[inb] &= counts[ty[inb], tx[inb]] == 1
    assert clean.sum() > 100
    assert np.abs(back.rgb[clean] - img.rgb[clean]).mean() <= 2 / 255


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_warp_resolution_covariance(seed):
    rng = np.random.default_rng(seed)
    big = smooth_image(64, 64, seed % 31)
    small = ImageBuffer.from_rgb(big.rgb.reshape(32, 2, 32, 2, 3).mean(axis=(1, 3)))
    ys, xs = np.mgrid[0:32, 0:32] / 32.0
    flow = FlowMap(np.stack([rng.uniform(-2, 2) + np.sin(3 * ys), rng.uniform(-2, 2) + np.cos(2 * xs)], -1))
    a, _ = warp_and_fill(small, flow, np.ones((32, 32), bool))
    b, _ = warp_and_fill(big, rescale_flow(flow, (64, 64)), np.ones((64, 64), bool))
    b_small = b.image.rgb.reshape(32, 2, 32, 2, 3).mean(axis=(1, 3))
    inner = np.zeros((32, 32), bool)
    inner[4:-4, 4:-4] = True
    assert np.abs(a.image.rgb - b_small)[inner].mean() <= 2 / 255
