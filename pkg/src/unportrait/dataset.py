"""Paired distorted/undistorted portrait generation and loading."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CANONICAL_DISTANCE_CM, CameraConfig, bin_label, focal_for_distance
from .fileio import read_flow, read_manifest, read_png, write_flow, write_manifest, write_png
from .imaging import FlowMap, ImageBuffer, resize_area
from .mesh import HeadParams, TriMesh, load_obj, parametric_head, read_landmark_table
from .render import Framing, PairSample, RenderOutput, SampleRejected, render_pair


class DatasetError(ValueError):
    pass


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("UNPORTRAIT_THREADS")
    return max(1, int(raw)) if raw else default


def distance_grid(n: int, lo: float = 23.0, hi: float = CANONICAL_DISTANCE_CM) -> list[float]:
    """``n`` distances log-uniform over [lo, hi], ends included."""
    if n < 1:
        raise DatasetError("need at least one distance")
    if n == 1:
        return [float(lo)]
    return [float(v) for v in np.exp(np.linspace(math.log(lo), math.log(hi), n))]


@dataclass(frozen=True)
class DatasetSpec:
    subjects: int = 2
    views: int = 10
    distances: int | tuple[float, ...] = 20
    size: int = 64
    supersample: int = 4
    seed: int = 0
    pose_range_deg: tuple[float, float, float] = (45.0, 45.0, 45.0)
    distance_range_cm: tuple[float, float] = (23.0, CANONICAL_DISTANCE_CM)
    # extra subjects as (obj path, landmark table path)
    meshes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.subjects < 0 or self.views < 1:
            raise DatasetError("subjects must be >= 0 and views >= 1")
        if self.subjects == 0 and not self.meshes:
            raise DatasetError("no subjects")
        if self.size < 8 or self.supersample < 1:
            raise DatasetError("size must be >= 8 and supersample >= 1")
        if any(not 0 <= r <= 45 for r in self.pose_range_deg):
            raise DatasetError("pose ranges must lie in [0, 45] degrees")

    def distance_list(self) -> list[float]:
        if isinstance(self.distances, int):
            return distance_grid(self.distances, *self.distance_range_cm)
        return [float(d) for d in self.distances]


@dataclass
class ToySample:
    """A rendered pair reduced to the training resolution."""

    near: ImageBuffer
    far: ImageBuffer
    flow: FlowMap
    distance_cm: float
    pose_deg: tuple[float, float, float]
    pair: PairSample | None = field(default=None, repr=False)


def downsample_image(render: RenderOutput, factor: int) -> ImageBuffer:
    """Area-average a render; color is composited on black, coverage >= 0.5 is kept."""
    m = render.mask.astype(np.float64)
    data = np.concatenate([render.color.rgb * m[..., None], m[..., None]], axis=2)
    if factor > 1:
        data = resize_area(data, factor)
    mask = data[..., 3] >= 0.5
    rgba = np.zeros(data.shape[:2] + (4,))
    rgba[..., :3] = np.where(mask[..., None], data[..., :3], 0.0)
    rgba[..., 3] = mask
    return ImageBuffer(rgba, mask)


def downsample_flow(flow: FlowMap, factor: int) -> FlowMap:
    """Validity-weighted area average of a flow field, vectors divided by ``factor``."""
    if factor == 1:
        return FlowMap(flow.flow.copy(), flow.valid.copy(), flow.occluded.copy())
    v = flow.valid.astype(np.float64)
    stack = np.concatenate([flow.flow * v[..., None], v[..., None], flow.occluded[..., None] * v[..., None]], axis=2)
    s = resize_area(stack, factor)
    valid = s[..., 2] >= 0.5
    out = np.zeros(s.shape[:2] + (2,))
    out[valid] = s[valid, :2] / s[valid, 2:3] / factor
    occluded = valid & (s[..., 3] >= 0.5 * np.maximum(s[..., 2], 1e-12))
    return FlowMap(out, valid, occluded)


def render_sample(mesh: TriMesh, distance_cm: float, pose_deg, size: int = 64, supersample: int = 4,
                  keep_pair: bool = False) -> ToySample:
    cam = CameraConfig(focal_for_distance(distance_cm), (size * supersample, size * supersample))
    pair = render_pair(mesh, distance_cm, pose_deg, cam, Framing())
    return ToySample(downsample_image(pair.near, supersample), downsample_image(pair.far, supersample),
                     downsample_flow(pair.gt_flow, supersample), float(distance_cm),
                     tuple(float(a) for a in pose_deg), pair if keep_pair else None)


def subject_mesh(seed: int, index: int) -> tuple[TriMesh, int]:
    sub_seed = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
    params = HeadParams.random(np.random.default_rng(sub_seed))
    return parametric_head(params), sub_seed


def subject_poses(seed: int, index: int, views: int, ranges) -> list[tuple[float, float, float]]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index, 1]))
    r = np.asarray(ranges, dtype=np.float64)
    poses = rng.uniform(-1.0, 1.0, size=(views, 3)) * r
    return [tuple(round(float(a), 4) for a in p) for p in poses]


def _subjects(spec: DatasetSpec):
    for i in range(spec.subjects):
        mesh, sub_seed = subject_mesh(spec.seed, i)
        yield i, mesh, sub_seed, f"param:{sub_seed}"
    for j, (obj, table) in enumerate(spec.meshes):
        with open(table, encoding="utf-8") as fh:
            landmarks = read_landmark_table(fh)
        with open(obj, encoding="utf-8") as fh:
            mesh = load_obj(fh, landmarks)
        yield spec.subjects + j, mesh, None, f"obj:{Path(obj).name}"


def generate_dataset(spec: DatasetSpec, out_dir, workers: int | None = None) -> tuple[dict, list[dict]]:
    """Render every (subject, view, distance) pair into ``out_dir``.

    Writes near/far PNGs, FLW1 flow files and ``manifest.txt``. Rejected
    samples are listed in the manifest header with their reason.
    """
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    distances = spec.distance_list()
    jobs = []
    for s, mesh, sub_seed, source in _subjects(spec):
        for v, pose in enumerate(subject_poses(spec.seed, s, spec.views, spec.pose_range_deg)):
            for k, d in enumerate(distances):
                sid = f"s{s:03d}_v{v:02d}_d{k:02d}"
                seed = int(np.random.SeedSequence([spec.seed, s, v, k]).generate_state(1)[0])
                jobs.append((sid, s, source, mesh, pose, d, seed))

    def run(job):
        sid, s, source, mesh, pose, d, seed = job
        try:
            sample = render_sample(mesh, d, pose, spec.size, spec.supersample)
        except SampleRejected as exc:
            return {"id": sid, "reason": exc.reason}, None
        paths = {key: f"samples/{sid}_{key}" + ext
                 for key, ext in (("near", ".png"), ("far", ".png"), ("flow", ".flw"))}
        write_png(out / paths["near"], sample.near)
        write_png(out / paths["far"], sample.far)
        write_flow(out / paths["flow"], sample.flow)
        row = {"id": sid, "subject": s, "source": source, "pose_deg": list(pose), "distance_cm": d,
               "focal_mm": focal_for_distance(d), "label": bin_label(d).index, "seed": seed, **paths}
        return None, row

    n = workers or worker_count()
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    rejected = [r for r, _ in results if r is not None]
    rows = [row for _, row in results if row is not None]
    header = {"size": spec.size, "supersample": spec.supersample, "seed": spec.seed,
              "subjects": spec.subjects + len(spec.meshes), "views": spec.views,
              "distances": distances, "rejected": rejected}
    write_manifest(out / "manifest.txt", rows, header)
    return header, rows


@dataclass
class PairArrays:
    """Stacked training arrays; images are (N, H, W, 3) composited on black."""

    ids: list[str]
    subjects: np.ndarray
    distances: np.ndarray
    labels: np.ndarray
    near_rgb: np.ndarray
    near_mask: np.ndarray
    far_rgb: np.ndarray
    far_mask: np.ndarray
    flow: np.ndarray
    flow_valid: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index) -> "PairArrays":
        idx = np.asarray(index)
        return PairArrays([self.ids[i] for i in np.arange(len(self.ids))[idx]], self.subjects[idx],
                          self.distances[idx], self.labels[idx], self.near_rgb[idx], self.near_mask[idx],
                          self.far_rgb[idx], self.far_mask[idx], self.flow[idx], self.flow_valid[idx])

    def split_by_subject(self, holdout_subjects) -> tuple["PairArrays", "PairArrays"]:
        test = np.isin(self.subjects, list(holdout_subjects))
        return self.subset(~test), self.subset(test)


def stack_samples(samples: list[ToySample], ids=None, subjects=None) -> PairArrays:
    if not samples:
        raise DatasetError("no samples")
    n = len(samples)
    return PairArrays(
        list(ids) if ids is not None else [str(i) for i in range(n)],
        np.asarray(subjects if subjects is not None else np.zeros(n, int)),
        np.array([s.distance_cm for s in samples]),
        np.array([bin_label(s.distance_cm).index for s in samples]),
        np.stack([s.near.rgb * s.near.mask[..., None] for s in samples]),
        np.stack([s.near.mask for s in samples]),
        np.stack([s.far.rgb * s.far.mask[..., None] for s in samples]),
        np.stack([s.far.mask for s in samples]),
        np.stack([s.flow.flow for s in samples]),
        np.stack([s.flow.valid for s in samples]),
    )


def load_dataset(manifest_path) -> PairArrays:
    path = Path(manifest_path)
    _, rows = read_manifest(path)
    if not rows:
        raise DatasetError("manifest lists no samples")
    root = path.parent
    samples = []
    for r in rows:
        near, far = read_png(root / r["near"]), read_png(root / r["far"])
        samples.append(ToySample(near, far, read_flow(root / r["flow"]), r["distance_cm"], tuple(r["pose_deg"])))
    return stack_samples(samples, [r["id"] for r in rows], [r["subject"] for r in rows])
