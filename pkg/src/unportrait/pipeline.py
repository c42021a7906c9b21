"""End-to-end undistortion: estimate, label, flow, warp, complete, blend."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .blend import laplacian_blend, max_levels
from .camera import DistanceLabel
from .distance import EstimateDiagnostics, estimate_distance, label_from_estimate
from .fileio import read_checkpoint, write_checkpoint
from .imaging import FlowMap, ImageBuffer, resize_bilinear
from .nets import (ClassifierModel, CompletionModel, FlowNetModel, ModelConfig, fit_to_size, flatten_params,
                   image_tensor, load_params, predict_flow)
from .warp import closed_region, fill_scattered, forward_warp, rescale_flow

FEATHER_PX = 2.0
MODELS_FILE = "models.json"
CHECKPOINTS = {"classifier": "classifier.updm", "flownet": "flownet.updm", "completion": "completion.updm"}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ModelBundle:
    config: ModelConfig
    classifier: ClassifierModel
    flownet: FlowNetModel
    completion: CompletionModel

    @classmethod
    def untrained(cls, config: ModelConfig = ModelConfig(), seed: int = 0) -> "ModelBundle":
        torch.manual_seed(seed)
        return cls(config, ClassifierModel(config), FlowNetModel(config), CompletionModel(config))

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"format": "UPDM", "version": 1, "config": self.config.to_dict(), "checkpoints": CHECKPOINTS}
        (d / MODELS_FILE).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        for name, fname in CHECKPOINTS.items():
            write_checkpoint(d / fname, flatten_params(getattr(self, name)))

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        d = Path(directory)
        meta = json.loads((d / MODELS_FILE).read_text(encoding="utf-8"))
        cfg = ModelConfig.from_dict(meta["config"])
        bundle = cls(cfg, ClassifierModel(cfg), FlowNetModel(cfg), CompletionModel(cfg))
        for name, fname in meta.get("checkpoints", CHECKPOINTS).items():
            model = getattr(bundle, name)
            load_params(model, read_checkpoint(d / fname))
            model.eval()
        return bundle


@dataclass
class UndistortResult:
    flow: FlowMap
    warped: ImageBuffer
    completed: ImageBuffer
    blended: ImageBuffer
    est_distance: float | None
    label: DistanceLabel
    diagnostics: EstimateDiagnostics | None
    hit_mask: np.ndarray

    def report(self) -> dict:
        d = self.diagnostics
        return {
            "est_distance_cm": self.est_distance,
            "label": self.label.index,
            "estimate_flag": None if d is None else d.flag,
            "non_monotone": None if d is None else d.non_monotone,
            "flow_valid_px": int(self.flow.valid.sum()),
            "hit_px": int(self.hit_mask.sum()),
            "output_px": int(self.blended.mask.sum()),
        }


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise PipelineError(name, exc) from exc


def feather(mask: np.ndarray, width: float = FEATHER_PX) -> np.ndarray:
    """Soft [0, 1] version of a binary mask with a ``width``-pixel Gaussian edge."""
    m = np.asarray(mask, dtype=np.float64)
    if width <= 0:
        return m
    return np.clip(ndimage.gaussian_filter(m, sigma=width / 2.0, mode="nearest"), 0.0, 1.0)


def _warp_fill(image: ImageBuffer, flow: FlowMap) -> tuple[ImageBuffer, np.ndarray]:
    splat = forward_warp(image, flow)
    region = closed_region(splat.hit_mask)
    filled = fill_scattered(splat.image, splat.hit_mask, region).image
    return filled, splat.hit_mask


def _complete(models: ModelBundle, warped: ImageBuffer, hit: np.ndarray, label: int) -> ImageBuffer:
    size = models.config.size
    rgb, _ = image_tensor(warped, size)
    h = fit_to_size(hit.astype(np.float64)[..., None], size)[..., 0]
    hit_t = torch.from_numpy((h >= 0.5).astype(np.float64)).to(rgb.dtype)[None, None]
    with torch.no_grad():
        out = models.completion(rgb, hit_t, [label])[0].double().numpy().transpose(1, 2, 0)
    up = resize_bilinear(out, warped.shape) if out.shape[:2] != warped.shape else out
    return ImageBuffer.from_rgb(np.clip(up, 0.0, 1.0), np.ones(warped.shape, bool))


def undistort(image: ImageBuffer, models: ModelBundle, flow: FlowMap | None = None,
              distance_cm: float | None = None, levels: int | None = None) -> UndistortResult:
    """Correct a preprocessed portrait at its own resolution.

    ``flow`` injects a known correction flow (at the image resolution) in
    place of the FlowNet prediction; ``distance_cm`` skips the estimator.
    """
    size = models.config.size
    diag = None
    small = None
    if distance_cm is None:
        small = _stage("estimate", lambda: image_tensor(image, size)[0])
        distance_cm, diag = _stage("estimate", estimate_distance, models.classifier, small)
    label = _stage("label", label_from_estimate, distance_cm)

    if flow is None:
        def run_flow():
            rgb, mask = image_tensor(image, size)
            low = ImageBuffer.from_rgb(rgb[0].double().numpy().transpose(1, 2, 0), mask[0, 0].numpy() >= 0.5)
            pred = predict_flow(models.flownet, low, label.index)
            full = rescale_flow(pred, (image.width, image.height))
            return FlowMap(np.where(image.mask[..., None], full.flow, 0.0), image.mask.copy())
        flow = _stage("flow", run_flow)
    elif flow.shape != image.shape:
        raise PipelineError("flow", ValueError(f"flow {flow.shape} does not match image {image.shape}"))

    warped, hit = _stage("warp", _warp_fill, image, flow)
    completed = _stage("complete", _complete, models, warped, hit, label.index)

    def run_blend():
        n = max_levels(image.shape) if levels is None else levels
        # splat pinholes inside the warped region are already interpolated,
        # so only content outside it comes from the completion. The warp is
        # padded with the completion there so coarse bands do not pull the
        # empty background into the face.
        keep = warped.mask[..., None]
        bg = ImageBuffer(np.where(keep, warped.rgba, completed.rgba), warped.mask | completed.mask)
        out = laplacian_blend(completed, bg, feather(~warped.mask), n)
        rgba = np.clip(out.rgba, 0.0, 1.0)
        support = warped.mask | _completed_support(completed, hit)
        rgba[..., 3] = support
        rgba[~support, :3] = 0.0
        return ImageBuffer(rgba, support)

    blended = _stage("blend", run_blend)
    return UndistortResult(flow, warped, completed, blended, distance_cm, label, diag, hit)


def _completed_support(completed: ImageBuffer, hit: np.ndarray, threshold: float = 0.02) -> np.ndarray:
    """Pixels where the completion produced visible (non-black) content."""
    return (completed.rgb.max(axis=2) > threshold) | hit
