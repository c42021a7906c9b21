"""Toy-scale trainable models: distance probe classifier, FlowNet, CompletionNet, discriminator."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .camera import NUM_LABELS, QUERY_MAX_CM, QUERY_MIN_CM
from .imaging import FlowMap, ImageBuffer, resize_area, resize_bilinear

# log2 queries are centered on the middle of the probe range before entering the network
LOG2_QUERY_CENTER = 0.5 * (math.log2(QUERY_MIN_CM) + math.log2(QUERY_MAX_CM))


class ModelError(ValueError):
    pass


def configure_threads() -> int | None:
    """Apply UNPORTRAIT_THREADS to torch; returns the cap or None."""
    raw = os.environ.get("UNPORTRAIT_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("UNPORTRAIT_THREADS must be a positive integer")
    torch.set_num_threads(n)
    return n


@dataclass(frozen=True)
class ModelConfig:
    size: int = 64
    levels: int = 4
    base_channels: int = 16
    flow_scale: float = 0.125  # max |flow| as a fraction of the image width
    classifier_channels: tuple[int, ...] = (16, 32, 64, 64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier_channels"] = list(self.classifier_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["classifier_channels"] = tuple(d.get("classifier_channels", cls.classifier_channels))
        return cls(**d)


# --------------------------------------------------------------------------
# input plumbing


def label_planes(labels, height: int, width: int) -> torch.Tensor:
    """One-hot label stack (B, 8, H, W)."""
    lab = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if lab.numel() and (lab.min() < 0 or lab.max() >= NUM_LABELS):
        raise ModelError(f"labels must lie in 0..{NUM_LABELS - 1}")
    onehot = F.one_hot(lab, NUM_LABELS).to(torch.get_default_dtype())
    return onehot[:, :, None, None].expand(-1, -1, height, width).contiguous()


def fit_to_size(data: np.ndarray, size: int) -> np.ndarray:
    """Area-downsample by an integer factor when possible, else bilinear."""
    h, w = data.shape[:2]
    if (h, w) == (size, size):
        return data
    if h == w and h % size == 0:
        return resize_area(data, h // size)
    return resize_bilinear(data, (size, size))


def image_tensor(image: ImageBuffer, size: int | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """RGB composited on black and the coverage mask, as (1,3,H,W) and (1,1,H,W)."""
    m = image.mask.astype(np.float64)
    data = np.concatenate([image.rgb * m[..., None], m[..., None]], axis=2)
    if size is not None:
        data = fit_to_size(data, size)
    mask = (data[..., 3] >= 0.5).astype(np.float64)
    rgb = data[..., :3] * mask[..., None]
    t = torch.from_numpy(np.ascontiguousarray(rgb.transpose(2, 0, 1))).to(torch.get_default_dtype())
    return t[None], torch.from_numpy(mask).to(torch.get_default_dtype())[None, None]


# --------------------------------------------------------------------------
# parameter serialization


def flatten_params(model: nn.Module) -> np.ndarray:
    parts = [t.detach().cpu().reshape(-1).to(torch.float64).numpy() for t in model.state_dict().values()]
    return np.concatenate(parts) if parts else np.zeros(0)


def load_params(model: nn.Module, flat: np.ndarray) -> nn.Module:
    state = model.state_dict()
    total = sum(t.numel() for t in state.values())
    if flat.size != total:
        raise ModelError(f"checkpoint holds {flat.size} values, model needs {total}")
    pos, new = 0, {}
    for k, t in state.items():
        n = t.numel()
        new[k] = torch.from_numpy(np.asarray(flat[pos:pos + n], dtype=np.float64)).reshape(t.shape).to(t.dtype)
        pos += n
    model.load_state_dict(new)
    return model


# --------------------------------------------------------------------------
# backbones


def _conv(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.LeakyReLU(0.2))


class UNet(nn.Module):
    """Encoder-decoder with skip connections; stride-2 convs down, bilinear up."""

    def __init__(self, in_ch: int, out_ch: int, levels: int = 4, base: int = 16, max_ch: int = 128):
        super().__init__()
        self.levels = levels
        chans = [min(base * 2 ** i, max_ch) for i in range(levels + 1)]
        self.stem = nn.Sequential(_conv(in_ch, chans[0]), _conv(chans[0], chans[0]))
        self.down = nn.ModuleList(
            nn.Sequential(_conv(chans[i], chans[i + 1], 2), _conv(chans[i + 1], chans[i + 1]))
            for i in range(levels))
        self.up = nn.ModuleList(
            nn.Sequential(_conv(chans[i + 1] + chans[i], chans[i]), _conv(chans[i], chans[i]))
            for i in range(levels))
        self.head = nn.Conv2d(chans[0], out_ch, 1)
        # zero head: an untrained model starts from the identity output
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        step = 2 ** self.levels
        if h % step or w % step:
            raise ModelError(f"input {h}x{w} not divisible by {step}")
        skips = [self.stem(x)]
        for blk in self.down:
            skips.append(blk(skips[-1]))
        y = skips.pop()
        for blk in reversed(self.up):
            skip = skips.pop()
            y = F.interpolate(y, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            y = blk(torch.cat([y, skip], dim=1))
        return self.head(y)


class FlowNetModel(nn.Module):
    """RGB + mask + label planes -> 2-channel flow in pixels, bounded by ``flow_scale * width``."""

    in_channels = 3 + 1 + NUM_LABELS

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.net = UNet(self.in_channels, 2, cfg.levels, cfg.base_channels)

    def forward(self, rgb: torch.Tensor, mask: torch.Tensor, labels) -> torch.Tensor:
        h, w = rgb.shape[-2:]
        x = torch.cat([rgb, mask, label_planes(labels, h, w).to(rgb.dtype)], dim=1)
        return torch.tanh(self.net(x)) * (self.cfg.flow_scale * w)


class CompletionModel(nn.Module):
    """Warped RGB + hit mask + label planes -> completed RGB (residual on the input)."""

    in_channels = 3 + 1 + NUM_LABELS

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.net = UNet(self.in_channels, 3, cfg.levels, cfg.base_channels)

    def forward(self, rgb: torch.Tensor, hit: torch.Tensor, labels) -> torch.Tensor:
        h, w = rgb.shape[-2:]
        x = torch.cat([rgb, hit, label_planes(labels, h, w).to(rgb.dtype)], dim=1)
        return rgb + self.net(x)


class Discriminator(nn.Module):
    """Four strided convolutions and one fully connected layer over image + mask + label planes."""

    def __init__(self, channels: tuple[int, ...] = (16, 32, 64, 64)):
        super().__init__()
        layers, cin = [], 3 + 1 + NUM_LABELS
        for c in channels:
            layers += [nn.Conv2d(cin, c, 3, 2, 1), nn.LeakyReLU(0.2)]
            cin = c
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(cin, 1)

    def forward(self, rgb: torch.Tensor, mask: torch.Tensor, labels) -> torch.Tensor:
        h, w = rgb.shape[-2:]
        x = torch.cat([rgb * mask, mask, label_planes(labels, h, w).to(rgb.dtype)], dim=1)
        f = self.features(x).mean(dim=(2, 3))
        return self.fc(f).squeeze(1)


class ClassifierModel(nn.Module):
    """Distance probe: logit of P(query >= true distance) for an image and a log2 query.

    The log2 query is the constant extra input channel. Because the plane is
    constant, the VGG-style convolutional stack runs on RGB alone and the
    fully connected head reads the plane's value next to the image features,
    so one feature pass serves every query of a bisection.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        layers, cin = [], 3
        for c in cfg.classifier_channels:
            layers += [nn.Conv2d(cin, c, 3, 1, 1), nn.ReLU(), nn.MaxPool2d(2)]
            cin = c
        self.features = nn.Sequential(*layers)
        side = cfg.size // 2 ** len(cfg.classifier_channels)
        if side < 1:
            raise ModelError("classifier too deep for the image size")
        self.fc = nn.Sequential(nn.Linear(cin * side * side + 1, 64), nn.ReLU(), nn.Linear(64, 1))

    @staticmethod
    def query_feature(query_cm) -> torch.Tensor:
        q = torch.as_tensor(query_cm, dtype=torch.get_default_dtype())
        return torch.log2(q) - LOG2_QUERY_CENTER

    @staticmethod
    def stack_input(rgb: torch.Tensor, query_cm) -> torch.Tensor:
        """RGB plus the constant normalized log2(query) plane, (B, 4, H, W)."""
        b, _, h, w = rgb.shape
        qf = ClassifierModel.query_feature(query_cm).to(rgb.dtype).reshape(b)
        return torch.cat([rgb, qf[:, None, None, None].expand(b, 1, h, w)], dim=1)

    def image_features(self, rgb: torch.Tensor) -> torch.Tensor:
        h, w = rgb.shape[-2:]
        if (h, w) != (self.cfg.size, self.cfg.size):
            raise ModelError(f"classifier expects {self.cfg.size}x{self.cfg.size} input, got {h}x{w}")
        return self.features(rgb).flatten(1)

    def head(self, feats: torch.Tensor, query_cm) -> torch.Tensor:
        """Logits for ``feats`` (B, F) against queries (B * k,), each image repeated k times."""
        qf = self.query_feature(query_cm).to(feats.dtype).reshape(-1)
        if len(qf) % len(feats):
            raise ModelError("query count must be a multiple of the image count")
        f = feats.repeat_interleave(len(qf) // len(feats), dim=0)
        return self.fc(torch.cat([f, qf[:, None]], dim=1)).squeeze(1)

    def forward(self, x: torch.Tensor, query_cm=None) -> torch.Tensor:
        """Logits for a stacked (B, 4, H, W) input, or RGB plus per-image queries."""
        if query_cm is None:
            if x.shape[1] != 4:
                raise ModelError("stacked input needs 4 channels")
            return self.head(self.image_features(x[:, :3]), 2.0 ** (x[:, 3, 0, 0] + LOG2_QUERY_CENTER))
        return self.head(self.image_features(x), query_cm)

    def respond(self, image, queries) -> np.ndarray:
        """Probe responses of one image for a batch of query distances."""
        rgb = image if isinstance(image, torch.Tensor) else image_tensor(image, self.cfg.size)[0]
        q = torch.as_tensor(np.asarray(queries, dtype=np.float64))
        with torch.no_grad():
            logits = self(rgb.to(torch.get_default_dtype()), q)
        return torch.sigmoid(logits).double().numpy()


def predict_flow(model: FlowNetModel, image: ImageBuffer, label: int) -> FlowMap:
    """Flow at the image's own resolution; validity is the input mask."""
    if image.shape != (model.cfg.size, model.cfg.size):
        raise ModelError(f"FlowNet expects {model.cfg.size}x{model.cfg.size} input, got {image.shape}")
    rgb, mask = image_tensor(image)
    with torch.no_grad():
        out = model(rgb, mask, [int(label)])[0].double().numpy().transpose(1, 2, 0)
    valid = image.mask.copy()
    out = np.where(valid[..., None], out, 0.0)
    return FlowMap(out, valid)
