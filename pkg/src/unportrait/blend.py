"""Burt-Adelson Laplacian pyramids and multi-band blending."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import convolve1d

from .imaging import ImageBuffer

KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _blur(img: np.ndarray) -> np.ndarray:
    out = convolve1d(img, KERNEL, axis=0, mode="reflect")
    return convolve1d(out, KERNEL, axis=1, mode="reflect")


def reduce(img: np.ndarray) -> np.ndarray:
    return _blur(img)[::2, ::2]


def expand(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.zeros(shape[:2] + img.shape[2:])
    up[::2, ::2] = img
    return 4.0 * _blur(up)


def max_levels(shape: tuple[int, int]) -> int:
    return max(int(math.floor(math.log2(min(shape[:2])))) - 2, 0)


def _check_levels(shape, levels: int) -> None:
    if not 0 <= levels <= max_levels(shape):
        raise ValueError(f"levels={levels} outside [0, {max_levels(shape)}] for size {shape[:2]}")


def gaussian_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels):
        pyr.append(reduce(pyr[-1]))
    return pyr


def laplacian_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Band-pass levels followed by the low-pass residual (``levels + 1`` arrays)."""
    _check_levels(np.shape(img), levels)
    gauss = gaussian_pyramid(img, levels)
    bands = [g - expand(gauss[i + 1], g.shape) for i, g in enumerate(gauss[:-1])]
    return bands + [gauss[-1]]


def collapse(pyr: list[np.ndarray]) -> np.ndarray:
    img = pyr[-1]
    for band in reversed(pyr[:-1]):
        img = band + expand(img, band.shape)
    return img


def laplacian_blend(fg: ImageBuffer, bg: ImageBuffer, mask: np.ndarray, levels: int) -> ImageBuffer:
    """Blend ``fg`` over ``bg`` band by band under a Gaussian-smoothed ``mask``.

    ``mask`` is real-valued in [0, 1]; 1 selects the foreground. All four
    channels are blended; the result is not clipped.
    """
    if fg.shape != bg.shape or np.shape(mask) != fg.shape:
        raise ValueError(f"shape mismatch: fg {fg.shape}, bg {bg.shape}, mask {np.shape(mask)}")
    m = np.asarray(mask, dtype=np.float64)
    if m.min() < 0 or m.max() > 1:
        raise ValueError("mask values must lie in [0, 1]")
    _check_levels(fg.shape, levels)
    lf = laplacian_pyramid(fg.rgba, levels)
    lb = laplacian_pyramid(bg.rgba, levels)
    gm = gaussian_pyramid(m, levels)
    bands = [g[..., None] * a + (1.0 - g[..., None]) * b for a, b, g in zip(lf, lb, gm)]
    return ImageBuffer(collapse(bands), fg.mask | bg.mask)
