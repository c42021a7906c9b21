"""Two-camera rig calibration: color matching and 2D similarity alignment."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class CalibrationError(ValueError):
    pass


class ColorFit(NamedTuple):
    matrix: np.ndarray
    rms: float


def fit_color_matrix(src, ref, affine: bool = False) -> ColorFit:
    """Least-squares color correction ``ref ~ M @ src`` over chart patches.

    ``src`` and ``ref`` are (N, 3) RGB arrays. With ``affine`` the result is
    3x4 and includes an offset column.
    """
    src = np.asarray(src, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if src.shape != ref.shape or src.ndim != 2 or src.shape[1] != 3:
        raise CalibrationError(f"expected matching (N, 3) arrays, got {src.shape} and {ref.shape}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(ref))):
        raise CalibrationError("patch values must be finite")
    design = np.hstack([src, np.ones((len(src), 1))]) if affine else src
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise CalibrationError("source patches are rank deficient")
    sol, *_ = np.linalg.lstsq(design, ref, rcond=None)
    m = sol.T
    resid = ref - design @ sol
    return ColorFit(m, float(np.sqrt(np.mean(resid ** 2))))


def apply_color_matrix(m: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    out = rgb @ m[:, :3].T
    if m.shape[1] == 4:
        out = out + m[:, 3]
    return out


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * R(theta) @ p + (tx, ty)`` with theta in radians."""

    scale: float = 1.0
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise CalibrationError(f"scale must be positive, got {self.scale}")

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = self.scale * self.rotation
        m[:2, 2] = self.translation
        return m

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        s = 1.0 / self.scale
        t = -s * self.rotation.T @ self.translation
        return SimilarityTransform(s, -self.theta, float(t[0]), float(t[1]))

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """``self`` after ``inner``."""
        t = self.scale * self.rotation @ inner.translation + self.translation
        return SimilarityTransform(self.scale * inner.scale, self.theta + inner.theta,
                                   float(t[0]), float(t[1]))


class SimilarityFit(NamedTuple):
    transform: SimilarityTransform
    rms: float


def fit_similarity(src_pts, dst_pts) -> SimilarityFit:
    """Closed-form least-squares 2D similarity (rotation kept proper)."""
    x = np.asarray(src_pts, dtype=np.float64)
    y = np.asarray(dst_pts, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 2:
        raise CalibrationError(f"expected matching (N, 2) point arrays, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise CalibrationError("need at least two correspondences")
    mx, my = x.mean(0), y.mean(0)
    xc, yc = x - mx, y - my
    var = float(np.sum(xc ** 2))
    if var <= 1e-24 * max(1.0, float(np.sum(x ** 2))):
        raise CalibrationError("source points coincide")
    dot = float(np.sum(xc * yc))
    cross = float(np.sum(xc[:, 0] * yc[:, 1] - xc[:, 1] * yc[:, 0]))
    norm = math.hypot(dot, cross)
    if norm == 0.0:
        raise CalibrationError("no proper similarity fits these correspondences")
    theta = math.atan2(cross, dot)
    scale = norm / var
    c, s = math.cos(theta), math.sin(theta)
    t = my - scale * np.array([c * mx[0] - s * mx[1], s * mx[0] + c * mx[1]])
    tf = SimilarityTransform(scale, theta, float(t[0]), float(t[1]))
    resid = y - tf.apply(x)
    return SimilarityFit(tf, float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1)))))


def read_rows(stream, width: int) -> np.ndarray:
    """Whitespace-separated numeric rows of fixed ``width``; ``#`` starts a comment."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != width:
            raise CalibrationError(f"line {lineno}: expected {width} numbers, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise CalibrationError(f"line {lineno}: non-numeric value") from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, width)
