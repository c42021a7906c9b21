"""On-disk formats: FLW1 flow files, PNG images, UPDM checkpoints, manifests."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import cv2
import numpy as np

from .imaging import FlowMap, ImageBuffer

FLOW_MAGIC = b"FLW1"
CKPT_MAGIC = b"UPDM"
CKPT_VERSION = 1
MANIFEST_SCHEMA = "unportrait.manifest"
MANIFEST_VERSION = 1


class FormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# FLW1


def encode_flow(flow: FlowMap, with_validity: bool = True) -> bytes:
    h, w = flow.shape
    header = FLOW_MAGIC + struct.pack("<IIB", w, h, 1 if with_validity else 0)
    body = np.ascontiguousarray(flow.flow, dtype="<f4").tobytes()
    if with_validity:
        body += np.ascontiguousarray(flow.valid, dtype=np.uint8).tobytes()
    return header + body


def decode_flow(data: bytes) -> FlowMap:
    if len(data) < 13 or data[:4] != FLOW_MAGIC:
        raise FormatError("not a FLW1 flow file")
    w, h, flags = struct.unpack("<IIB", data[4:13])
    n = w * h
    expected = 13 + 8 * n + (n if flags & 1 else 0)
    if len(data) != expected:
        raise FormatError(f"FLW1 size mismatch: expected {expected} bytes, got {len(data)}")
    flow = np.frombuffer(data, dtype="<f4", count=2 * n, offset=13).reshape(h, w, 2).astype(np.float64)
    valid = None
    if flags & 1:
        plane = np.frombuffer(data, dtype=np.uint8, count=n, offset=13 + 8 * n).reshape(h, w)
        if plane.max(initial=0) > 1:
            raise FormatError("validity plane must hold 0/1 bytes")
        valid = plane.astype(bool)
    return FlowMap(flow, valid)


def write_flow(path, flow: FlowMap, with_validity: bool = True) -> None:
    Path(path).write_bytes(encode_flow(flow, with_validity))


def read_flow(path) -> FlowMap:
    return decode_flow(Path(path).read_bytes())


# --------------------------------------------------------------------------
# PNG


def write_png(path, image: ImageBuffer, bits: int = 16) -> None:
    """Straight-alpha RGBA PNG; alpha carries the coverage mask."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = 255 if bits == 8 else 65535
    dtype = np.uint8 if bits == 8 else np.uint16
    rgba = image.rgba.copy()
    rgba[..., 3] = image.mask
    data = np.round(np.clip(rgba, 0.0, 1.0) * top).astype(dtype)
    bgra = data[..., [2, 1, 0, 3]]
    if not cv2.imwrite(str(path), bgra, [cv2.IMWRITE_PNG_COMPRESSION, 6]):
        raise OSError(f"could not write {path}")


def _read_raw(path) -> np.ndarray:
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise FormatError(f"could not read image {path}")
    top = 255.0 if data.dtype == np.uint8 else 65535.0
    return data.astype(np.float64) / top


def read_png(path) -> ImageBuffer:
    data = _read_raw(path)
    if data.ndim == 2:
        rgb = np.repeat(data[..., None], 3, axis=2)
        return ImageBuffer.from_rgb(rgb)
    if data.shape[2] == 3:
        return ImageBuffer.from_rgb(data[..., ::-1])
    rgba = data[..., [2, 1, 0, 3]]
    return ImageBuffer(rgba, rgba[..., 3] >= 0.5)


def read_mask(path) -> np.ndarray:
    """Mask from a gray image, or from alpha when present."""
    data = _read_raw(path)
    if data.ndim == 3:
        data = data[..., 3] if data.shape[2] == 4 else data.mean(axis=2)
    return data >= 0.5


def write_mask(path, mask: np.ndarray) -> None:
    if not cv2.imwrite(str(path), np.asarray(mask, np.uint8) * 255):
        raise OSError(f"could not write {path}")


# --------------------------------------------------------------------------
# UPDM


def encode_checkpoint(params: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(np.asarray(params).ravel(), dtype="<f4")
    return CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, flat.size) + flat.tobytes()


def decode_checkpoint(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != CKPT_MAGIC:
        raise FormatError("not a UPDM checkpoint")
    version, count = struct.unpack("<IQ", data[4:16])
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(data) != 16 + 4 * count:
        raise FormatError("checkpoint truncated or padded")
    return np.frombuffer(data, dtype="<f4", count=count, offset=16).copy()


def write_checkpoint(path, params: np.ndarray) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def read_checkpoint(path) -> np.ndarray:
    return decode_checkpoint(Path(path).read_bytes())


# --------------------------------------------------------------------------
# manifests and reports


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_manifest(path, rows: list[dict], extra_header: dict | None = None) -> None:
    """One JSON object per line after a schema header line."""
    header = {"schema": MANIFEST_SCHEMA, "version": MANIFEST_VERSION}
    header.update(extra_header or {})
    lines = [_dumps(header)] + [_dumps(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("empty manifest")
    header = json.loads(lines[0])
    if header.get("schema") != MANIFEST_SCHEMA:
        raise FormatError("missing manifest schema header")
    if header.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {header.get('version')}")
    rows = [json.loads(line) for line in lines[1:] if line.strip()]
    return header, rows


def write_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# named point tables


def parse_named_points(text: str, dims: int = 2) -> dict[str, np.ndarray]:
    """``name x y [z]`` per line; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != dims + 1:
            raise FormatError(f"line {lineno}: expected a name and {dims} numbers")
        if parts[0] in out:
            raise FormatError(f"line {lineno}: duplicate point {parts[0]!r}")
        try:
            out[parts[0]] = np.array([float(p) for p in parts[1:]])
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric coordinate") from None
    return out


def read_named_points(path, dims: int = 2) -> dict[str, np.ndarray]:
    return parse_named_points(Path(path).read_text(encoding="utf-8"), dims)
