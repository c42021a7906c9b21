"""Applying correction flow: forward splatting, hole filling, backward remap."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .imaging import FlowMap, ImageBuffer, bilinear_sample, resize_bilinear


class WarpError(ValueError):
    pass


class SplatResult(NamedTuple):
    image: ImageBuffer
    hit_mask: np.ndarray
    collisions: int
    dropped: int


class FillResult(NamedTuple):
    image: ImageBuffer
    extrapolated: np.ndarray


def splat_targets(flow: FlowMap) -> tuple[np.ndarray, np.ndarray]:
    """Rounded integer target (col, row) of every source pixel."""
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w]
    tx = np.floor(xs + flow.flow[..., 0] + 0.5).astype(np.int64)
    ty = np.floor(ys + flow.flow[..., 1] + 0.5).astype(np.int64)
    return tx, ty


def forward_warp(src: ImageBuffer, flow: FlowMap, depth: np.ndarray | None = None) -> SplatResult:
    """Move every valid source pixel to ``round(position + flow)``.

    With ``depth`` the nearest source wins a contested target; otherwise the
    last source in raster order does. Either way ``collisions`` counts the
    losing writes and ``dropped`` the targets that fell outside the frame.
    """
    if flow.shape != src.shape:
        raise WarpError(f"flow {flow.shape} does not match image {src.shape}")
    h, w = src.shape
    valid = flow.valid & src.mask
    tx, ty = splat_targets(flow)
    inb = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    dropped = int((valid & ~inb).sum())
    use = valid & inb
    src_idx = np.flatnonzero(use)
    tgt_idx = (ty * w + tx).ravel()[src_idx]
    if depth is not None:
        d = np.asarray(depth, dtype=np.float64).ravel()[src_idx]
        # nearest first, then lowest source index
        order = np.lexsort((src_idx, d, tgt_idx))
    else:
        # last writer: highest source index first within each target
        order = np.lexsort((-src_idx, tgt_idx))
    t_sorted = tgt_idx[order]
    first = np.ones(len(order), bool)
    first[1:] = t_sorted[1:] != t_sorted[:-1]
    winners = order[first]
    rgba = np.zeros((h * w, 4))
    rgba[tgt_idx[winners]] = src.rgba.reshape(-1, 4)[src_idx[winners]]
    rgba[tgt_idx[winners], 3] = 1.0
    hit = np.zeros(h * w, bool)
    hit[tgt_idx[winners]] = True
    hit = hit.reshape(h, w)
    collisions = int(len(src_idx) - len(winners))
    return SplatResult(ImageBuffer(rgba.reshape(h, w, 4), hit), hit, collisions, dropped)


def fill_scattered(sparse: ImageBuffer, hit_mask: np.ndarray, region_mask: np.ndarray) -> FillResult:
    """Densify a splatted image over ``region_mask``.

    Unhit region pixels inside the convex hull of the hits are linearly
    interpolated over a Delaunay triangulation of the hit pixel centers;
    the rest take the nearest hit's color and are flagged extrapolated.
    """
    hit_mask = np.asarray(hit_mask, bool)
    region_mask = np.asarray(region_mask, bool)
    h, w = sparse.shape
    hy, hx = np.nonzero(hit_mask)
    if len(hx) < 3:
        raise WarpError(f"need at least 3 hits to interpolate, got {len(hx)}")
    pts = np.stack([hx, hy], 1).astype(np.float64)
    try:
        tri = Delaunay(pts)
    except QhullError:
        raise WarpError("hit pixels are collinear") from None

    out = sparse.rgba.copy()
    out[~hit_mask] = 0.0
    extrapolated = np.zeros((h, w), bool)
    qy, qx = np.nonzero(region_mask & ~hit_mask)
    if len(qx):
        q = np.stack([qx, qy], 1).astype(np.float64)
        values = sparse.rgba[hy, hx]
        simplex = tri.find_simplex(q)
        inside = simplex >= 0
        if inside.any():
            s = simplex[inside]
            trans = tri.transform[s]
            delta = q[inside] - trans[:, 2]
            b01 = np.einsum("nij,nj->ni", trans[:, :2], delta)
            bary = np.concatenate([b01, 1 - b01.sum(1, keepdims=True)], axis=1)
            verts = tri.simplices[s]
            out[qy[inside], qx[inside]] = np.einsum("nk,nkc->nc", bary, values[verts])
        if (~inside).any():
            _, nearest = cKDTree(pts).query(q[~inside])
            out[qy[~inside], qx[~inside]] = values[nearest]
            extrapolated[qy[~inside], qx[~inside]] = True
    mask = hit_mask | region_mask
    out[mask, 3] = 1.0
    out[~mask] = 0.0
    return FillResult(ImageBuffer(out, mask), extrapolated)


def backward_remap(target: ImageBuffer, flow: FlowMap) -> ImageBuffer:
    """Pull ``target`` back through ``flow``: out(p) = target(p + flow(p)).

    Bilinear sampling is alpha-normalized so uncovered target pixels never
    bleed in; samples outside the frame or the target's coverage come back
    transparent and invalid.
    """
    h, w = flow.shape
    th, tw = target.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = xs + flow.flow[..., 0]
    sy = ys + flow.flow[..., 1]
    inb = (sx >= 0) & (sx <= tw - 1) & (sy >= 0) & (sy <= th - 1) & flow.valid
    alpha = target.mask.astype(np.float64)
    premul = np.concatenate([target.rgb * alpha[..., None], alpha[..., None]], axis=2)
    sampled = bilinear_sample(premul, sx, sy)
    a = sampled[..., 3]
    ok = inb & (a >= 0.5)
    rgba = np.zeros((h, w, 4))
    rgba[ok, :3] = sampled[ok, :3] / a[ok, None]
    rgba[ok, 3] = 1.0
    return ImageBuffer(rgba, ok)


def rescale_flow(flow: FlowMap, new_size: tuple[int, int]) -> FlowMap:
    """Resample a flow field to ``new_size = (width, height)``.

    Vectors are scaled by the per-axis size ratio; validity is resampled
    bilinearly and thresholded at one half.
    """
    nw, nh = new_size
    if nw < 8 or nh < 8:
        raise WarpError(f"target size {new_size} below 8x8")
    h, w = flow.shape
    if (nh, nw) == (h, w):
        return FlowMap(flow.flow.copy(), flow.valid.copy(), flow.occluded.copy())
    v = flow.valid.astype(np.float64)
    stack = np.concatenate([flow.flow * v[..., None], v[..., None]], axis=2)
    res = resize_bilinear(stack, (nh, nw))
    weight = res[..., 2]
    valid = weight >= 0.5
    out = np.zeros((nh, nw, 2))
    out[valid] = res[valid, :2] / weight[valid, None]
    out[..., 0] *= nw / w
    out[..., 1] *= nh / h
    return FlowMap(out, valid)


def warp_and_fill(src: ImageBuffer, flow: FlowMap, region_mask: np.ndarray | None = None,
                  depth: np.ndarray | None = None) -> tuple[FillResult, SplatResult]:
    """Forward warp followed by hole filling; the default region closes the hit mask."""
    splat = forward_warp(src, flow, depth)
    if region_mask is None:
        region_mask = closed_region(splat.hit_mask)
    return fill_scattered(splat.image, splat.hit_mask, region_mask), splat


def closed_region(hit_mask: np.ndarray, radius: int = 2) -> np.ndarray:
    """Hit mask with small gaps closed and enclosed holes filled."""
    from scipy import ndimage

    structure = np.ones((2 * radius + 1, 2 * radius + 1), bool)
    padded = np.pad(hit_mask, radius + 1)
    closed = ndimage.binary_closing(padded, structure)[radius + 1:-radius - 1, radius + 1:-radius - 1]
    return ndimage.binary_fill_holes(closed | hit_mask)
