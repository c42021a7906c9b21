"""Raster containers shared by the renderer, the warps and the models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ImageBuffer:
    """RGBA float image in [0, 1], ``rgba`` shaped (H, W, 4).

    ``mask`` is the coverage/validity mask; when omitted it is derived from
    alpha > 0.
    """

    rgba: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        rgba = np.asarray(self.rgba, dtype=np.float64)
        if rgba.ndim != 3 or rgba.shape[2] not in (3, 4):
            raise ValueError(f"expected (H, W, 3|4) array, got {rgba.shape}")
        if rgba.shape[2] == 3:
            rgba = np.concatenate([rgba, np.ones(rgba.shape[:2] + (1,))], axis=2)
        if not np.all(np.isfinite(rgba)):
            raise ValueError("image contains non-finite values")
        self.rgba = rgba
        if self.mask is None:
            self.mask = rgba[..., 3] > 0
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != rgba.shape[:2]:
                raise ValueError("mask shape does not match image")

    @classmethod
    def from_rgb(cls, rgb, mask=None) -> "ImageBuffer":
        rgb = np.asarray(rgb, dtype=np.float64)
        if mask is None:
            alpha = np.ones(rgb.shape[:2])
        else:
            alpha = np.asarray(mask, dtype=np.float64)
        return cls(np.concatenate([rgb, alpha[..., None]], axis=2),
                   None if mask is None else np.asarray(mask, bool))

    @classmethod
    def blank(cls, height: int, width: int) -> "ImageBuffer":
        return cls(np.zeros((height, width, 4)), np.zeros((height, width), bool))

    @property
    def rgb(self) -> np.ndarray:
        return self.rgba[..., :3]

    @property
    def height(self) -> int:
        return self.rgba.shape[0]

    @property
    def width(self) -> int:
        return self.rgba.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgba.shape[:2]

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.rgba.copy(), self.mask.copy())


@dataclass
class FlowMap:
    """Per-pixel displacement ``(dx, dy)`` in pixels, shaped (H, W, 2).

    ``occluded`` optionally flags valid pixels whose destination is hidden in
    the target view.
    """

    flow: np.ndarray
    valid: np.ndarray | None = None
    occluded: np.ndarray | None = None

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=np.float64)
        if flow.ndim != 3 or flow.shape[2] != 2:
            raise ValueError(f"expected (H, W, 2) flow, got {flow.shape}")
        self.flow = flow
        if self.valid is None:
            self.valid = np.ones(flow.shape[:2], bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != flow.shape[:2]:
            raise ValueError("validity mask shape does not match flow")
        if not np.all(np.isfinite(flow[self.valid])):
            raise ValueError("flow has non-finite values on valid pixels")
        if self.occluded is None:
            self.occluded = np.zeros(flow.shape[:2], bool)
        self.occluded = np.asarray(self.occluded, dtype=bool)

    @classmethod
    def zeros(cls, height: int, width: int, valid=None) -> "FlowMap":
        return cls(np.zeros((height, width, 2)), valid)

    @classmethod
    def constant(cls, height: int, width: int, dx: float, dy: float, valid=None) -> "FlowMap":
        flow = np.empty((height, width, 2))
        flow[..., 0] = dx
        flow[..., 1] = dy
        return cls(flow, valid)

    @property
    def height(self) -> int:
        return self.flow.shape[0]

    @property
    def width(self) -> int:
        return self.flow.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.flow.shape[:2]


def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``data`` (H, W, C) at fractional pixel-index coordinates.

    Coordinates are clamped to the image; callers handle out-of-bounds
    policy themselves.
    """
    h, w = data.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2) if w > 1 else np.zeros(xs.shape, np.intp)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2) if h > 1 else np.zeros(ys.shape, np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
    bottom = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(data: np.ndarray, new_hw: tuple[int, int]) -> np.ndarray:
    """Pixel-center aligned bilinear resize of an (H, W, C) array."""
    h, w = data.shape[:2]
    nh, nw = new_hw
    if (nh, nw) == (h, w):
        return data.copy()
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return bilinear_sample(data, gx, gy)


def resize_area(data: np.ndarray, factor: int) -> np.ndarray:
    """Box-filter downsample by an integer factor."""
    h, w = data.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"size {h}x{w} not divisible by {factor}")
    shaped = data.reshape(h // factor, factor, w // factor, factor, *data.shape[2:])
    return shaped.mean(axis=(1, 3))


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel-index coordinate grids ``(xs, ys)``."""
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)
