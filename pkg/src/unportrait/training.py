"""Stage-wise training of the probe classifier, FlowNet and CompletionNet."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .camera import sample_query_logdistance
from .dataset import PairArrays
from .fileio import write_checkpoint
from .imaging import FlowMap, ImageBuffer
from .losses import classifier_loss, loss_adversarial, loss_completion, loss_flow, remap_torch
from .nets import ClassifierModel, CompletionModel, Discriminator, FlowNetModel, ModelConfig, flatten_params
from .warp import closed_region, fill_scattered, forward_warp


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 16
    lr: float = 2e-4
    l1_weight: float = 10.0
    gan_weight: float = 1.0
    inside_weight: float = 5.0
    outside_weight: float = 1.0
    adversarial: bool = False
    queries_per_sample: int = 8
    flip_augment: bool = True
    checkpoint_dir: str | None = None

    def __post_init__(self):
        for name in ("lr", "l1_weight", "gan_weight", "inside_weight", "outside_weight"):
            if not getattr(self, name) > 0:
                raise TrainingError(f"{name} must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.queries_per_sample < 1:
            raise TrainingError("epochs, batch_size and queries_per_sample must be >= 1")


@dataclass
class History:
    step_losses: list
    epoch_losses: list


def _tensor(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a)).to(torch.get_default_dtype())


def _nchw(a: np.ndarray) -> torch.Tensor:
    return _tensor(np.moveaxis(a, -1, 1)) if a.ndim == 4 else _tensor(a[:, None])


def _batches(n: int, batch: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen)
    for i in range(0, n, batch):
        yield perm[i:i + batch]


def _checkpoint(cfg: TrainConfig, name: str, epoch: int, model: torch.nn.Module) -> None:
    if cfg.checkpoint_dir is None:
        return
    d = Path(cfg.checkpoint_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_checkpoint(d / f"{name}_epoch{epoch:03d}.updm", flatten_params(model))


def _require(data: PairArrays) -> None:
    if len(data) == 0:
        raise TrainingError("empty dataset")


# --------------------------------------------------------------------------
# classifier


def classifier_targets(queries: np.ndarray, true_cm: np.ndarray) -> np.ndarray:
    """1 where the query reaches the true distance."""
    return (np.asarray(queries) >= np.asarray(true_cm)).astype(np.float64)


def train_classifier(data: PairArrays, cfg: TrainConfig = TrainConfig(),
                     model_cfg: ModelConfig = ModelConfig()) -> tuple[ClassifierModel, History]:
    """Binary cross-entropy on 1[query >= true distance] with log-normal query draws."""
    _require(data)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = ClassifierModel(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    images = _nchw(data.near_rgb)
    hist = History([], [])
    q_per = cfg.queries_per_sample
    for epoch in range(cfg.epochs):
        queries = np.stack([sample_query_logdistance(d, rng, size=q_per) for d in data.distances])
        targets = classifier_targets(queries, data.distances[:, None])
        total = 0.0
        for idx in _batches(len(data), cfg.batch_size, gen):
            x = images[idx]
            if cfg.flip_augment:
                # mirrored portraits share the camera distance
                flip = torch.rand(len(idx), generator=gen) < 0.5
                x = torch.where(flip[:, None, None, None], x.flip(3), x)
            q = _tensor(queries[idx.numpy()].reshape(-1))
            t = _tensor(targets[idx.numpy()].reshape(-1))
            loss = classifier_loss(model.head(model.image_features(x), q), t)
            opt.zero_grad()
            loss.backward()
            opt.step()
            hist.step_losses.append(loss.item())
            total += loss.item() * len(idx)
        hist.epoch_losses.append(total / len(data))
        _checkpoint(cfg, "classifier", epoch, model)
    model.eval()
    return model, hist


def classifier_eval_loss(model: ClassifierModel, data: PairArrays, seed: int = 0, q_per: int = 4) -> float:
    rng = np.random.default_rng(seed)
    queries = np.stack([sample_query_logdistance(d, rng, size=q_per) for d in data.distances])
    targets = classifier_targets(queries, data.distances[:, None])
    with torch.no_grad():
        logits = model(_nchw(data.near_rgb), _tensor(queries.reshape(-1)))
        return float(classifier_loss(logits, _tensor(targets.reshape(-1))))


# --------------------------------------------------------------------------
# FlowNet


def flow_inputs(data: PairArrays):
    rgb = _nchw(data.near_rgb)
    mask = _nchw(data.near_mask.astype(np.float64))
    gt = _nchw(data.flow)
    valid = _nchw((data.flow_valid & data.near_mask).astype(np.float64))
    return rgb, mask, gt, valid, torch.as_tensor(data.labels)


def flow_l1(model: FlowNetModel | None, data: PairArrays) -> float:
    """Held-out masked flow L1; ``model=None`` gives the zero-flow baseline."""
    rgb, mask, gt, valid, labels = flow_inputs(data)
    with torch.no_grad():
        pred = torch.zeros_like(gt) if model is None else model(rgb, mask, labels)
        return float(loss_flow(pred, gt, valid))


def train_flownet(data: PairArrays, cfg: TrainConfig = TrainConfig(),
                  model_cfg: ModelConfig = ModelConfig()) -> tuple[FlowNetModel, History]:
    """``l1_weight`` * masked flow L1, plus ``gan_weight`` * adversarial loss when enabled."""
    _require(data)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = FlowNetModel(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    disc = d_opt = None
    if cfg.adversarial:
        disc = Discriminator()
        d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.lr)
    rgb, mask, gt, valid, labels = flow_inputs(data)
    far = _nchw(data.far_rgb)
    hist = History([], [])
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(len(data), cfg.batch_size, gen):
            pred = model(rgb[idx], mask[idx], labels[idx])
            loss = cfg.l1_weight * loss_flow(pred, gt[idx], valid[idx])
            if disc is not None:
                a_prime = remap_torch(far[idx], pred) * mask[idx]
                d_loss, _ = loss_adversarial(disc, rgb[idx], a_prime.detach(), labels[idx], mask[idx])
                d_opt.zero_grad()
                d_loss.backward()
                d_opt.step()
                _, g_loss = loss_adversarial(disc, rgb[idx], a_prime, labels[idx], mask[idx])
                loss = loss + cfg.gan_weight * g_loss
            opt.zero_grad()
            loss.backward()
            opt.step()
            hist.step_losses.append(loss.item())
            total += loss.item() * len(idx)
        hist.epoch_losses.append(total / len(data))
        _checkpoint(cfg, "flownet", epoch, model)
    model.eval()
    return model, hist


# --------------------------------------------------------------------------
# CompletionNet


@dataclass
class CompletionArrays:
    rgb: np.ndarray       # (N, H, W, 3) forward-warped and filled near images
    hit: np.ndarray       # (N, H, W) splat hits
    region: np.ndarray    # (N, H, W) loss support
    target: np.ndarray    # (N, H, W, 3) far images
    labels: np.ndarray


def warp_fill(rgb: np.ndarray, mask: np.ndarray, flow: FlowMap) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward-warp and fill one image; returns (filled rgb, hit mask, filled region)."""
    src = ImageBuffer.from_rgb(rgb, mask)
    splat = forward_warp(src, flow)
    region = closed_region(splat.hit_mask)
    if splat.hit_mask.sum() >= 3:
        try:
            filled = fill_scattered(splat.image, splat.hit_mask, region).image
        except ValueError:
            filled = splat.image
    else:
        filled = splat.image
    out = filled.rgb * filled.mask[..., None]
    return out, splat.hit_mask, filled.mask


def completion_arrays(data: PairArrays) -> CompletionArrays:
    """Ground-truth-flow warps of the near images paired with the far targets."""
    rgbs, hits, regions = [], [], []
    for i in range(len(data)):
        flow = FlowMap(data.flow[i], data.flow_valid[i] & data.near_mask[i])
        rgb, hit, filled = warp_fill(data.near_rgb[i], data.near_mask[i], flow)
        rgbs.append(rgb)
        hits.append(hit)
        regions.append(filled | data.far_mask[i])
    return CompletionArrays(np.stack(rgbs), np.stack(hits), np.stack(regions), data.far_rgb, data.labels)


def completion_l1(model: CompletionModel | None, arr: CompletionArrays, novel_only: bool = True) -> float:
    """Mean abs error against the target on novel (or hit) region pixels; ``None`` scores the raw input."""
    x, hit = _nchw(arr.rgb), _nchw(arr.hit.astype(np.float64))
    with torch.no_grad():
        pred = x if model is None else model(x, hit, torch.as_tensor(arr.labels))
    sel = arr.region & (~arr.hit if novel_only else arr.hit)
    err = torch.abs(pred - _nchw(arr.target)).mean(dim=1).numpy()
    return float(err[sel].mean())


def completion_hit_change(model: CompletionModel, arr: CompletionArrays) -> float:
    """Mean abs change the model makes to already-observed (hit) pixels."""
    x, hit = _nchw(arr.rgb), _nchw(arr.hit.astype(np.float64))
    with torch.no_grad():
        pred = model(x, hit, torch.as_tensor(arr.labels))
    diff = torch.abs(pred - x).mean(dim=1).numpy()
    return float(diff[arr.hit].mean())


def train_completion(arr: CompletionArrays, cfg: TrainConfig = TrainConfig(),
                     model_cfg: ModelConfig = ModelConfig()) -> tuple[CompletionModel, History]:
    """5:1 novel-region weighted L1 against the far image."""
    if len(arr.rgb) == 0:
        raise TrainingError("empty dataset")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = CompletionModel(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    x, hit = _nchw(arr.rgb), _nchw(arr.hit.astype(np.float64))
    region, target = _nchw(arr.region.astype(np.float64)), _nchw(arr.target)
    labels = torch.as_tensor(arr.labels)
    hist = History([], [])
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(len(x), cfg.batch_size, gen):
            pred = model(x[idx], hit[idx], labels[idx])
            loss = cfg.l1_weight * loss_completion(pred, target[idx], hit[idx], region[idx],
                                                   cfg.inside_weight, cfg.outside_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            hist.step_losses.append(loss.item())
            total += loss.item() * len(idx)
        hist.epoch_losses.append(total / len(x))
        _checkpoint(cfg, "completion", epoch, model)
    model.eval()
    return model, hist
