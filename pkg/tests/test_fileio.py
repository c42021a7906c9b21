import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unportrait.fileio import (FormatError, decode_checkpoint, decode_flow, encode_checkpoint, encode_flow,
                               parse_named_points, read_manifest, read_mask, read_png, write_manifest, write_mask,
                               write_png)
from unportrait.imaging import FlowMap, ImageBuffer


def test_flow_header_layout():
    f = FlowMap.constant(2, 3, 1.5, -2.0)
    data = encode_flow(f)
    assert data[:4] == bytes([0x46, 0x4C, 0x57, 0x31])
    assert data[4:8] == (3).to_bytes(4, "little") and data[8:12] == (2).to_bytes(4, "little")
    assert data[12] == 1
    assert len(data) == 13 + 6 * 8 + 6
    assert len(encode_flow(f, with_validity=False)) == 13 + 6 * 8
    assert decode_flow(encode_flow(f, with_validity=False)).valid.all()


@pytest.mark.parametrize("mutate", [
    lambda d: b"FLW2" + d[4:],
    lambda d: d[:-1],
    lambda d: d + b"\0",
    lambda d: d[:-1] + b"\x07",
    lambda d: d[:5],
])
def test_flow_rejects_corruption(mutate):
    data = encode_flow(FlowMap.zeros(4, 4))
    with pytest.raises(FormatError):
        decode_flow(mutate(data))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_flow_byte_roundtrip(h, w, data):
    vals = data.draw(arrays(np.float32, (h, w, 2), elements=st.floats(-1e4, 1e4, width=32)))
    valid = data.draw(arrays(bool, (h, w)))
    f = FlowMap(vals.astype(np.float64), valid)
    blob = encode_flow(f)
    g = decode_flow(blob)
    np.testing.assert_array_equal(g.flow, f.flow)
    np.testing.assert_array_equal(g.valid, valid)
    assert encode_flow(g) == blob


def test_png_roundtrip_16bit(tmp_path):
    rng = np.random.default_rng(0)
    img = ImageBuffer.from_rgb(np.round(rng.random((9, 7, 3)) * 65535) / 65535, rng.random((9, 7)) > 0.3)
    write_png(tmp_path / "a.png", img)
    back = read_png(tmp_path / "a.png")
    np.testing.assert_array_equal(back.mask, img.mask)
    np.testing.assert_allclose(back.rgb, img.rgb, atol=1e-12)
    write_png(tmp_path / "b.png", img, bits=8)
    back8 = read_png(tmp_path / "b.png")
    assert np.abs(back8.rgb - img.rgb).max() <= 0.5 / 255 + 1e-12
    assert (tmp_path / "a.png").read_bytes() != (tmp_path / "b.png").read_bytes()


def test_mask_io(tmp_path):
    m = np.random.default_rng(1).random((10, 11)) > 0.5
    write_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), m)
    with pytest.raises(FormatError):
        read_png(tmp_path / "missing.png")


def test_checkpoint_roundtrip():
    p = np.random.default_rng(2).normal(size=1000).astype(np.float32)
    blob = encode_checkpoint(p)
    assert blob[:4] == b"UPDM"
    np.testing.assert_array_equal(decode_checkpoint(blob), p)
    with pytest.raises(FormatError):
        decode_checkpoint(blob[:-4])
    with pytest.raises(FormatError):
        decode_checkpoint(b"XXXX" + blob[4:])


def test_manifest_roundtrip(tmp_path):
    rows = [{"id": "a", "distance_cm": 23.5, "pose_deg": [1.0, 2.0, 3.0]}, {"id": "b", "distance_cm": 160.0}]
    write_manifest(tmp_path / "m.txt", rows, {"seed": 3})
    first = (tmp_path / "m.txt").read_bytes()
    header, back = read_manifest(tmp_path / "m.txt")
    assert header["schema"] == "unportrait.manifest" and header["version"] == 1 and header["seed"] == 3
    assert back == rows
    write_manifest(tmp_path / "m.txt", rows, {"seed": 3})
    assert (tmp_path / "m.txt").read_bytes() == first
    (tmp_path / "bad.txt").write_text('{"schema": "other"}\n')
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "bad.txt")


def test_named_points():
    pts = parse_named_points("# eyes\nright_pupil 10 20\nleft_pupil 30.5, 20  # comma ok\n")
    np.testing.assert_array_equal(pts["left_pupil"], [30.5, 20.0])
    with pytest.raises(FormatError):
        parse_named_points("a 1 2\na 3 4\n")
    with pytest.raises(FormatError):
        parse_named_points("a 1\n")
    with pytest.raises(FormatError):
        parse_named_points("a x y\n")
    assert parse_named_points("nose 1 2 3", dims=3)["nose"].tolist() == [1.0, 2.0, 3.0]
