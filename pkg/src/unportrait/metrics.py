"""Evaluation metrics: equalized intensity error, landmark NME, distance statistics."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .camera import bin_label
from .imaging import ImageBuffer

LUMA = np.array([0.299, 0.587, 0.114])


class MetricError(ValueError):
    pass


def _pixels(img) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        return img.rgb
    return np.asarray(img, dtype=np.float64)


def histogram_equalize(image, mask: np.ndarray | None = None) -> np.ndarray:
    """256-bin histogram equalization of luminance with chroma kept.

    Color images get the same luminance offset added to every channel, which
    leaves the YCbCr chroma of each pixel untouched. Only ``mask`` pixels take
    part and are remapped; a constant input is returned unchanged.
    """
    img = _pixels(image)
    lum = img if img.ndim == 2 else img[..., :3] @ LUMA
    sel = np.ones(lum.shape, bool) if mask is None else np.asarray(mask, bool)
    if not sel.any():
        return img.copy()
    levels = np.clip(np.round(lum * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(levels[sel], minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[hist > 0][0]
    total = cdf[-1]
    if total == cdf_min:
        return img.copy()
    lut = np.round((cdf - cdf_min) / (total - cdf_min) * 255.0) / 255.0
    delta = np.where(sel, lut[levels] - lum, 0.0)
    if img.ndim == 2:
        return img + delta
    out = img.copy()
    out[..., :3] += delta[..., None]
    return out


class ErrorReport(NamedTuple):
    error_map: np.ndarray
    mean: float
    count: int


def mean_intensity_error(a, b, mask=None, equalize: bool = True) -> ErrorReport:
    """Per-pixel channel-mean absolute difference on a 0-255 scale."""
    x, y = _pixels(a), _pixels(b)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    m = np.ones(x.shape[:2], bool) if mask is None else np.asarray(mask, bool)
    if m.shape != x.shape[:2]:
        raise MetricError("mask shape does not match images")
    n = int(m.sum())
    if n == 0:
        raise MetricError("empty mask")
    if equalize:
        x, y = histogram_equalize(x, m), histogram_equalize(y, m)
    diff = np.abs(x - y) * 255.0
    emap = diff if diff.ndim == 2 else diff.mean(axis=2)
    emap = np.where(m, emap, 0.0)
    return ErrorReport(emap, float(emap[m].sum() / n), n)


def masked_psnr(a, b, mask, peak: float = 1.0, cap: float = 100.0) -> float:
    x, y = _pixels(a), _pixels(b)
    m = np.asarray(mask, bool)
    if not m.any():
        raise MetricError("empty mask")
    mse = float(np.mean((x[m] - y[m]) ** 2))
    if mse <= peak ** 2 * 10.0 ** (-cap / 10.0):
        return cap
    return 10.0 * math.log10(peak ** 2 / mse)


def inter_ocular(lms: dict) -> float:
    """Outer-eye-corner distance, the default NME normalizer."""
    return float(np.linalg.norm(np.asarray(lms["right_eye_outer"]) - np.asarray(lms["left_eye_outer"])))


def nme(pred_lms: dict, gt_lms: dict, normalizer: float | None = None) -> float:
    """Mean Euclidean landmark error over the ground-truth names, divided by ``normalizer``."""
    missing = sorted(set(gt_lms) - set(pred_lms))
    if missing:
        raise MetricError(f"missing landmarks: {', '.join(missing)}")
    if normalizer is None:
        normalizer = inter_ocular(gt_lms)
    if not normalizer > 0:
        raise MetricError("normalizer must be positive")
    names = sorted(gt_lms)
    p = np.array([pred_lms[k] for k in names], dtype=np.float64)
    g = np.array([gt_lms[k] for k in names], dtype=np.float64)
    return float(np.mean(np.linalg.norm(p - g, axis=1)) / normalizer)


def distance_stats(pred, truth) -> dict:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise MetricError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise MetricError("no samples")
    rel = np.abs(p - t) / t
    lp = np.array([bin_label(v).index for v in p])
    lt = np.array([bin_label(v).index for v in t])
    return {
        "count": int(p.size),
        "mean_relative_error": float(rel.mean()),
        "std_relative_error": float(rel.std()),
        "label_accuracy": float(np.mean(lp == lt)),
        "one_step_label_accuracy": float(np.mean(np.abs(lp - lt) <= 1)),
    }


def transitivity_rate(model, images, query_grid) -> float:
    """Fraction of adjacent query pairs whose responses do not decrease."""
    from .distance import probe_curve

    grid = np.asarray(query_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 8:
        raise MetricError("query grid needs at least 8 points")
    if np.any(np.diff(grid) <= 0):
        raise MetricError("query grid must be strictly ascending")
    good = total = 0
    for img in images:
        p = probe_curve(model, img, grid)
        good += int(np.sum(np.diff(p) >= 0))
        total += len(grid) - 1
    if total == 0:
        raise MetricError("no images")
    return good / total
