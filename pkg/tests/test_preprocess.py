import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unportrait.calibration import SimilarityTransform
from unportrait.imaging import ImageBuffer
from unportrait.preprocess import PreprocessError, PreprocessSpec, preprocess, resample_similarity

SPEC = PreprocessSpec()


def landmarks(ipd, anchor=(216.0, 216.0)):
    ax, ay = anchor
    return {"right_eye_inner": np.array([ax, ay]), "right_pupil": np.array([ax - 0.25 * ipd, ay]),
            "left_pupil": np.array([ax + 0.75 * ipd, ay])}


def test_aligned_input_is_identity():
    rng = np.random.default_rng(0)
    img = ImageBuffer.from_rgb(rng.random((512, 512, 3)))
    out, tf = preprocess(img, landmarks(96.0))
    assert (tf.scale, tf.theta, tf.tx, tf.ty) == (1.0, 0.0, 0.0, 0.0)
    np.testing.assert_array_equal(out.rgb, img.rgb)


def test_double_ipd_halves_scale():
    img = ImageBuffer.from_rgb(np.full((600, 600, 3), 0.5))
    _, tf = preprocess(img, landmarks(192.0, (300.0, 280.0)))
    assert tf.scale == pytest.approx(0.5)
    np.testing.assert_allclose(tf.apply(np.array([[300.0, 280.0]]))[0], SPEC.anchor_px)


def test_small_input_is_padded():
    img = ImageBuffer.from_rgb(np.full((100, 100, 3), 0.7))
    spec = PreprocessSpec(pad_color=(0.1, 0.2, 0.3))
    out, tf = preprocess(img, landmarks(96.0, (40.0, 40.0)), spec)
    assert out.shape == (512, 512)
    pad = ~out.mask
    assert pad.sum() > 0.9 * 512 * 512
    np.testing.assert_array_equal(out.rgb[pad], np.broadcast_to([0.1, 0.2, 0.3], (int(pad.sum()), 3)))
    assert (out.rgba[pad, 3] == 0).all()
    np.testing.assert_allclose(out.rgb[out.mask], 0.7, atol=1e-12)
    assert out.mask.sum() == pytest.approx(100 * 100, rel=0.05)


def test_spec_validation():
    with pytest.raises(PreprocessError):
        PreprocessSpec(size=(4, 4))
    with pytest.raises(PreprocessError):
        PreprocessSpec(anchor_px=(600.0, 10.0))
    with pytest.raises(PreprocessError):
        preprocess(ImageBuffer.from_rgb(np.zeros((8, 8, 3))), {"right_pupil": [0, 0]})
    s = PreprocessSpec.scaled(256)
    assert s.target_ipd_px == 48.0 and s.anchor_px == (108.0, 108.0)


def test_resample_maps_points():
    img = ImageBuffer.from_rgb(np.zeros((64, 64, 3)))
    img.rgba[20, 30, :3] = 1.0
    tf = SimilarityTransform(2.0, 0.0, 10.0, -5.0)
    out = resample_similarity(img, tf, (160, 160))
    # input pixel center (30.5, 20.5) lands at 2 * (30.5, 20.5) + (10, -5)
    i, j = np.unravel_index(np.argmax(out.rgb[..., 0]), out.shape)
    assert abs(j + 0.5 - 71.0) <= 1.0 and abs(i + 0.5 - 36.0) <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.floats(40.0, 300.0), st.floats(50.0, 400.0), st.floats(50.0, 400.0), st.floats(-0.3, 0.3))
def test_inverse_transform_recovers_landmarks(ipd, ax, ay, tilt):
    lms = landmarks(ipd, (ax, ay))
    lms["left_pupil"] = lms["left_pupil"] + [0.0, tilt * ipd]
    img = ImageBuffer.from_rgb(np.zeros((64, 64, 3)))
    _, tf = preprocess(img, lms, PreprocessSpec((128, 128), 24.0, (54.0, 54.0)))
    for name, p in lms.items():
        out = tf.apply(np.asarray(p)[None])
        np.testing.assert_allclose(tf.inverse().apply(out)[0], p, atol=0.5)
    np.testing.assert_allclose(tf.apply(lms["right_eye_inner"][None])[0], (54.0, 54.0), atol=1e-9)
