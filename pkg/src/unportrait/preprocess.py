"""Portrait normalization: scale to a target pupil distance, anchor the right inner eye corner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import SimilarityTransform
from .imaging import ImageBuffer, bilinear_sample

PREPROCESS_LANDMARKS = ("right_pupil", "left_pupil", "right_eye_inner")


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessSpec:
    size: tuple[int, int] = (512, 512)
    target_ipd_px: float = 96.0
    anchor_px: tuple[float, float] = (216.0, 216.0)
    pad_color: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        w, h = self.size
        if w < 8 or h < 8:
            raise PreprocessError(f"target size {self.size} below 8x8")
        if not 8 < self.target_ipd_px < w / 2:
            raise PreprocessError(f"target IPD {self.target_ipd_px} outside (8, {w / 2})")
        ax, ay = self.anchor_px
        if not (0 <= ax < w and 0 <= ay < h):
            raise PreprocessError(f"anchor {self.anchor_px} outside the {w}x{h} frame")

    @classmethod
    def scaled(cls, size: int, pad_color=(0.0, 0.0, 0.0)) -> "PreprocessSpec":
        """Default anchor and IPD scaled linearly from 512 to ``size``."""
        r = size / 512.0
        return cls((size, size), 96.0 * r, (216.0 * r, 216.0 * r), pad_color)


def resample_similarity(image: ImageBuffer, transform: SimilarityTransform, size: tuple[int, int],
                        pad_color=(0.0, 0.0, 0.0)) -> ImageBuffer:
    """Resample ``image`` so output point ``transform(p)`` shows input point ``p``.

    Coordinates are continuous with pixel (row i, col j) centered at
    (j + 0.5, i + 0.5). Frame coverage and the mask are resampled
    bilinearly; pixels with less than half coverage take ``pad_color`` and
    alpha 0.
    """
    w, h = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    centers = np.stack([xs + 0.5, ys + 0.5], axis=-1).reshape(-1, 2)
    src = transform.inverse().apply(centers)
    # one ring of zeros makes coverage fall off smoothly at the frame border
    ih, iw = image.shape
    cover = np.pad(np.ones((ih, iw)), 1)
    stack = np.concatenate([np.pad(image.rgb, ((1, 1), (1, 1), (0, 0))) * cover[..., None],
                            cover[..., None],
                            np.pad(image.mask.astype(np.float64), 1)[..., None]], axis=2)
    sx = (src[:, 0] - 0.5 + 1.0).reshape(h, w)
    sy = (src[:, 1] - 0.5 + 1.0).reshape(h, w)
    inside = (sx >= 0) & (sx <= iw + 1) & (sy >= 0) & (sy <= ih + 1)
    s = bilinear_sample(stack, sx, sy)
    a = np.where(inside, s[..., 3], 0.0)
    ok = a >= 0.5
    mask = ok & (s[..., 4] >= 0.5 * np.maximum(a, 1e-12))
    rgba = np.empty((h, w, 4))
    rgba[..., :3] = np.asarray(pad_color, dtype=np.float64)
    rgba[ok, :3] = s[ok, :3] / a[ok, None]
    rgba[..., 3] = mask
    rgba[~mask, :3] = np.asarray(pad_color, dtype=np.float64)
    return ImageBuffer(rgba, mask)


def preprocess_transform(landmarks: dict, spec: PreprocessSpec) -> SimilarityTransform:
    missing = [k for k in PREPROCESS_LANDMARKS if k not in landmarks]
    if missing:
        raise PreprocessError(f"missing landmarks: {', '.join(missing)}")
    rp = np.asarray(landmarks["right_pupil"], dtype=np.float64)
    lp = np.asarray(landmarks["left_pupil"], dtype=np.float64)
    ipd = float(np.linalg.norm(lp - rp))
    if not ipd > 1e-9:
        raise PreprocessError("degenerate inter-pupillary distance")
    scale = spec.target_ipd_px / ipd
    anchor = np.asarray(spec.anchor_px) - scale * np.asarray(landmarks["right_eye_inner"], dtype=np.float64)
    return SimilarityTransform(scale, 0.0, float(anchor[0]), float(anchor[1]))


def preprocess(image: ImageBuffer, landmarks: dict, spec: PreprocessSpec = PreprocessSpec()
               ) -> tuple[ImageBuffer, SimilarityTransform]:
    """Scale to the target pupil distance and move the right inner eye corner to the anchor.

    Returns the normalized image and the input-to-output transform; its
    inverse maps results back onto the original photo.
    """
    tf = preprocess_transform(landmarks, spec)
    if tf.scale == 1.0 and tf.tx == 0.0 and tf.ty == 0.0 and image.shape == spec.size[::-1]:
        out = image.copy()
        out.rgba[~out.mask, :3] = spec.pad_color
        out.rgba[..., 3] = out.mask
        return out, tf
    return resample_similarity(image, tf, spec.size, spec.pad_color), tf
