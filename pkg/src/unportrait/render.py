"""Z-buffered software rasterizer and ground-truth correction flow.

Pixel ``(row i, col j)`` covers ``[j, j+1) x [i, i+1)`` in the continuous
image coordinates returned by :func:`camera.project` and is sampled at its
center ``(j + 0.5, i + 0.5)``. Edges exactly through a center follow the
top-left fill rule, so triangles sharing an edge never both claim a pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import (CANONICAL_DISTANCE_CM, CameraConfig, HEAD_TO_CAMERA, ShotParams,
                     FRAMING_SCALE, head_to_camera, rotation_matrix)
from .imaging import FlowMap, ImageBuffer
from .mesh import TriMesh

NEAR_PLANE_CM = 1.0
MIN_SHOT_DISTANCE_CM = 5.0
DEPTH_TOLERANCE = 0.005
LIGHT_DIR = np.array([-0.35, -0.45, -1.0]) / np.linalg.norm([-0.35, -0.45, -1.0])
AMBIENT = 0.35
DIFFUSE = 0.65

# framing defaults at 512x512, scaled linearly with the image width
ANCHOR_512 = (216.0, 216.0)
TARGET_IPD_512 = 96.0

_CHUNK_FRAGMENTS = 1 << 21


class RenderError(ValueError):
    pass


class SampleRejected(RenderError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class ViewTransform:
    """Image-plane similarity ``uv' = scale * uv + (tx, ty)`` applied after projection."""

    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def apply(self, uv: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(uv) + np.array([self.tx, self.ty])


@dataclass
class RenderOutput:
    color: ImageBuffer
    depth: np.ndarray
    tri_id: np.ndarray
    bary: np.ndarray
    landmarks_px: dict[str, np.ndarray]
    landmark_visible: dict[str, bool]
    shot: ShotParams
    cam: CameraConfig
    view: ViewTransform = field(default_factory=ViewTransform)
    empty: bool = False

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.depth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class PairSample:
    near: RenderOutput
    far: RenderOutput
    gt_flow: FlowMap
    meta: dict


def _camera_for(shot: ShotParams, cam: CameraConfig) -> CameraConfig:
    return cam.with_focal(shot.focal_mm_35eq)


def project_head_points(points: np.ndarray, shot: ShotParams, cam: CameraConfig,
                        view: ViewTransform = ViewTransform()) -> tuple[np.ndarray, np.ndarray]:
    """Head-frame points to (uv, depth) including the view transform.

    Points at or behind the near plane get NaN coordinates.
    """
    p = head_to_camera(points, shot)
    c = _camera_for(shot, cam)
    z = p[..., 2]
    ok = z > NEAR_PLANE_CM
    zs = np.where(ok, z, np.nan)
    k = c.pixels_per_unit
    cx, cy = c.principal_point_px
    uv = np.stack([cx + k * p[..., 0] / zs, cy + k * p[..., 1] / zs], axis=-1)
    return view.apply(uv), z


def edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _is_top_left(ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    return (dy < 0) | ((dy == 0) & (dx > 0))


def _fragments(q: np.ndarray, inv_z: np.ndarray, tris: np.ndarray, tri_ids: np.ndarray,
               width: int, height: int):
    """Yield (pixel, depth, tri, b0, b1, b2) fragment arrays for same-size triangle batches.

    ``q`` holds index-space vertex coordinates (pixel centers on integers).
    """
    v0, v1, v2 = q[tris[:, 0]], q[tris[:, 1]], q[tris[:, 2]]
    area = edge(v0[:, 0], v0[:, 1], v1[:, 0], v1[:, 1], v2[:, 0], v2[:, 1])
    keep = np.isfinite(area) & (area != 0)
    # make every triangle positively oriented
    flip = area < 0
    tris = tris.copy()
    tris[flip, 1], tris[flip, 2] = tris[flip, 2], tris[flip, 1].copy()
    tris, tri_ids, area = tris[keep], tri_ids[keep], np.abs(area[keep])
    if not len(tris):
        return
    v0, v1, v2 = q[tris[:, 0]], q[tris[:, 1]], q[tris[:, 2]]
    xs = np.stack([v0[:, 0], v1[:, 0], v2[:, 0]], 1)
    ys = np.stack([v0[:, 1], v1[:, 1], v2[:, 1]], 1)
    x0 = np.maximum(np.ceil(xs.min(1)), 0).astype(np.int64)
    x1 = np.minimum(np.floor(xs.max(1)), width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(ys.min(1)), 0).astype(np.int64)
    y1 = np.minimum(np.floor(ys.max(1)), height - 1).astype(np.int64)
    on_screen = (x1 >= x0) & (y1 >= y0)
    span = np.maximum(x1 - x0 + 1, y1 - y0 + 1)
    bucket = np.where(on_screen, np.ceil(np.log2(np.maximum(span, 1))).astype(np.int64), -1)
    for b in np.unique(bucket):
        if b < 0:
            continue
        size = 1 << int(b)
        sel_all = np.flatnonzero(bucket == b)
        per_chunk = max(1, _CHUNK_FRAGMENTS // (size * size))
        oy, ox = np.mgrid[0:size, 0:size]
        ox, oy = ox.ravel(), oy.ravel()
        for start in range(0, len(sel_all), per_chunk):
            sel = sel_all[start:start + per_chunk]
            px = x0[sel, None] + ox[None, :]
            py = y0[sel, None] + oy[None, :]
            inside_box = (px <= x1[sel, None]) & (py <= y1[sel, None])
            t = tris[sel]
            a, bb, c = q[t[:, 0]], q[t[:, 1]], q[t[:, 2]]
            fx, fy = px.astype(np.float64), py.astype(np.float64)
            w0 = edge(bb[:, 0, None], bb[:, 1, None], c[:, 0, None], c[:, 1, None], fx, fy)
            w1 = edge(c[:, 0, None], c[:, 1, None], a[:, 0, None], a[:, 1, None], fx, fy)
            w2 = edge(a[:, 0, None], a[:, 1, None], bb[:, 0, None], bb[:, 1, None], fx, fy)
            tl0 = _is_top_left(bb[:, 0], bb[:, 1], c[:, 0], c[:, 1])[:, None]
            tl1 = _is_top_left(c[:, 0], c[:, 1], a[:, 0], a[:, 1])[:, None]
            tl2 = _is_top_left(a[:, 0], a[:, 1], bb[:, 0], bb[:, 1])[:, None]
            inside = (inside_box
                      & ((w0 > 0) | ((w0 == 0) & tl0))
                      & ((w1 > 0) | ((w1 == 0) & tl1))
                      & ((w2 > 0) | ((w2 == 0) & tl2)))
            if not inside.any():
                continue
            r, k = np.nonzero(inside)
            ar = area[sel][r]
            b0, b1, b2 = w0[r, k] / ar, w1[r, k] / ar, w2[r, k] / ar
            iz = inv_z[t[r, 0]] * b0 + inv_z[t[r, 1]] * b1 + inv_z[t[r, 2]] * b2
            # perspective-correct barycentrics
            p0 = b0 * inv_z[t[r, 0]] / iz
            p1 = b1 * inv_z[t[r, 1]] / iz
            p2 = b2 * inv_z[t[r, 2]] / iz
            pix = py[r, k] * width + px[r, k]
            yield pix, 1.0 / iz, tri_ids[sel][r], t[r], np.stack([p0, p1, p2], 1)


def rasterize(mesh: TriMesh, shot: ShotParams, cam: CameraConfig,
              view: ViewTransform = ViewTransform()) -> RenderOutput:
    """Render ``mesh`` under ``shot`` with a z-buffer and Lambertian shading.

    ``cam`` supplies the image geometry; the focal length comes from
    ``shot``. Barycentrics in the result refer to the mesh's own vertex order
    for each triangle.
    """
    if shot.distance_cm <= MIN_SHOT_DISTANCE_CM:
        raise RenderError(f"shot distance {shot.distance_cm}cm inside the {MIN_SHOT_DISTANCE_CM}cm near plane")
    width, height = cam.width, cam.height
    uv, z = project_head_points(mesh.vertices, shot, cam, view)
    q = uv - 0.5
    inv_z = np.where(z > NEAR_PLANE_CM, 1.0 / np.where(z > NEAR_PLANE_CM, z, 1.0), np.nan)
    tri_ids = np.arange(len(mesh.triangles))
    front = np.all(z[mesh.triangles] > NEAR_PLANE_CM, axis=1)

    depth = np.full(height * width, np.inf)
    winner_tri = np.full(height * width, -1, dtype=np.int64)
    bary = np.zeros((height * width, 3))

    frags = list(_fragments(q, inv_z, mesh.triangles[front], tri_ids[front], width, height))
    if frags:
        pix = np.concatenate([f[0] for f in frags])
        dep = np.concatenate([f[1] for f in frags])
        tid = np.concatenate([f[2] for f in frags])
        verts = np.concatenate([f[3] for f in frags])
        bar = np.concatenate([f[4] for f in frags])
        order = np.lexsort((tid, dep, pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win = order[first]
        p = pix[win]
        depth[p] = dep[win]
        winner_tri[p] = tid[win]
        # re-express barycentrics in the triangle's stored vertex order
        stored = mesh.triangles[tid[win]]
        used = verts[win]
        b = bar[win]
        out = np.zeros_like(b)
        for slot in range(3):
            for k in range(3):
                hit = stored[:, slot] == used[:, k]
                out[hit, slot] = b[hit, k]
        bary[p] = out

    depth = depth.reshape(height, width)
    winner_tri = winner_tri.reshape(height, width)
    bary = bary.reshape(height, width, 3)
    mask = np.isfinite(depth)
    color = _shade(mesh, shot, winner_tri, bary, mask)
    rgba = np.concatenate([color, mask[..., None].astype(np.float64)], axis=2)

    lm_px, lm_vis = {}, {}
    if mesh.landmarks:
        names = list(mesh.landmarks)
        pts = mesh.vertices[[mesh.landmarks[n] for n in names]]
        luv, lz = project_head_points(pts, shot, cam, view)
        for name, (u, v), dz in zip(names, luv, lz):
            lm_px[name] = np.array([u, v])
            lm_vis[name] = _landmark_visible(u, v, dz, depth)
    return RenderOutput(ImageBuffer(rgba, mask), depth, winner_tri, bary, lm_px, lm_vis,
                        shot, cam, view, empty=not mask.any())


def _landmark_visible(u: float, v: float, z: float, depth: np.ndarray) -> bool:
    h, w = depth.shape
    if not (np.isfinite(u) and np.isfinite(v)) or z <= NEAR_PLANE_CM:
        return False
    j, i = int(math.floor(u)), int(math.floor(v))
    if not (0 <= i < h and 0 <= j < w):
        return False
    d = depth[i, j]
    return bool(np.isfinite(d) and abs(z - d) <= DEPTH_TOLERANCE * d)


def _shade(mesh: TriMesh, shot: ShotParams, tri: np.ndarray, bary: np.ndarray,
           mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    color = np.zeros((h, w, 3))
    if not mask.any():
        return color
    t = mesh.triangles[tri[mask]]
    b = bary[mask]
    albedo = np.einsum("nk,nkc->nc", b, mesh.albedo[t])
    normal = np.einsum("nk,nkc->nc", b, mesh.normals[t])
    pos = np.einsum("nk,nkc->nc", b, mesh.vertices[t])
    r = HEAD_TO_CAMERA @ rotation_matrix(shot.pose_deg)
    n_cam = normal @ r.T
    p_cam = head_to_camera(pos, shot)
    # two-sided: flip normals that face away from the camera
    facing = np.einsum("nc,nc->n", n_cam, -p_cam)
    n_cam = np.where(facing[:, None] < 0, -n_cam, n_cam)
    n_cam /= np.maximum(np.linalg.norm(n_cam, axis=1, keepdims=True), 1e-12)
    lambert = np.maximum(n_cam @ LIGHT_DIR, 0.0)
    color[mask] = np.clip(albedo * (AMBIENT + DIFFUSE * lambert[:, None]), 0.0, 1.0)
    return color


def surface_points(render: RenderOutput, mesh: TriMesh) -> np.ndarray:
    """Head-frame surface point behind every covered pixel (NaN elsewhere)."""
    out = np.full(render.shape + (3,), np.nan)
    m = render.mask
    t = mesh.triangles[render.tri_id[m]]
    out[m] = np.einsum("nk,nkc->nc", render.bary[m], mesh.vertices[t])
    return out


def _plane_depth(render: RenderOutput, mesh: TriMesh, rows, cols, uv) -> np.ndarray:
    """Depth of the triangle covering each pixel, evaluated along the ray through ``uv``.

    Comparing against the covering triangle's plane rather than its depth at
    the pixel center keeps sub-pixel offsets on sloped surfaces from reading
    as occlusion. Uncovered pixels give inf.
    """
    out = np.full(len(rows), np.inf)
    tri = render.tri_id[rows, cols]
    ok = tri >= 0
    if not ok.any():
        return out
    p = head_to_camera(mesh.vertices[mesh.triangles[tri[ok]]], render.shot)
    c = _camera_for(render.shot, render.cam)
    k, (cx, cy) = c.pixels_per_unit, c.principal_point_px
    v = render.view
    ray = np.column_stack([((uv[ok, 0] - v.tx) / v.scale - cx) / k, ((uv[ok, 1] - v.ty) / v.scale - cy) / k,
                           np.ones(int(ok.sum()))])
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    den = np.einsum("ij,ij->i", n, ray)
    num = np.einsum("ij,ij->i", n, p[:, 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(np.abs(den) > 1e-12, num / den, render.depth[rows[ok], cols[ok]])
    out[ok] = np.where(z > 0, z, render.depth[rows[ok], cols[ok]])
    return out


def trace_flow(src: RenderOutput, dst: RenderOutput, mesh: TriMesh) -> FlowMap:
    """Displacement taking each covered ``src`` pixel to its surface point in ``dst``.

    Pixels whose surface point fails the ``dst`` depth test, or leaves the
    ``dst`` frame, are valid but flagged occluded.
    """
    if tuple(src.shot.pose_deg) != tuple(dst.shot.pose_deg):
        raise RenderError("source and target shots disagree on head pose")
    if src.shape != dst.shape:
        raise RenderError("source and target renders differ in size")
    h, w = src.shape
    pts = surface_points(src, mesh)
    valid = src.mask
    uv, z = project_head_points(pts[valid], dst.shot, dst.cam, dst.view)
    ii, jj = np.nonzero(valid)
    flow = np.zeros((h, w, 2))
    flow[ii, jj, 0] = (uv[:, 0] - 0.5) - jj
    flow[ii, jj, 1] = (uv[:, 1] - 0.5) - ii
    tj = np.floor(uv[:, 0]).astype(np.int64)
    ti = np.floor(uv[:, 1]).astype(np.int64)
    inside = (tj >= 0) & (tj < w) & (ti >= 0) & (ti < h)
    d = np.full(len(ii), np.inf)
    d[inside] = _plane_depth(dst, mesh, ti[inside], tj[inside], uv[inside])
    seen = inside & np.isfinite(d) & (np.abs(z - d) <= DEPTH_TOLERANCE * d)
    occluded = np.zeros((h, w), bool)
    occluded[ii, jj] = ~seen
    return FlowMap(flow, valid, occluded)


def ground_truth_flow(near: RenderOutput, far: RenderOutput, mesh: TriMesh) -> FlowMap:
    """Correction flow from the near (distorted) render to the far one."""
    if not near.shot.distance_cm > 0 or not far.shot.distance_cm > 0:
        raise RenderError("invalid shot distance")
    return trace_flow(near, far, mesh)


def covisible_mask(target: RenderOutput, source: RenderOutput, mesh: TriMesh) -> np.ndarray:
    """Target pixels whose surface point is also visible in ``source``."""
    back = trace_flow(target, source, mesh)
    return back.valid & ~back.occluded


def group_pixel_count(render: RenderOutput, mesh: TriMesh, groups) -> int:
    ids = np.concatenate([mesh.groups[g] for g in groups])
    return int(np.isin(render.tri_id, ids).sum())


@dataclass(frozen=True)
class Framing:
    """Where the right inner eye corner lands and how large the pupil distance is."""

    anchor_512: tuple[float, float] = ANCHOR_512
    ipd_512: float = TARGET_IPD_512

    def anchor(self, cam: CameraConfig) -> np.ndarray:
        return np.array([self.anchor_512[0] * cam.width / 512.0, self.anchor_512[1] * cam.height / 512.0])

    def ipd(self, cam: CameraConfig) -> float:
        return self.ipd_512 * cam.width / 512.0


def framing_view(mesh: TriMesh, shot: ShotParams, cam: CameraConfig, framing: Framing) -> ViewTransform:
    """View transform putting the right inner eye corner on the anchor.

    The scale is a property of the head alone: it maps the frontal
    pupil distance under the framing law onto the target length.
    """
    native_ipd = FRAMING_SCALE / cam.sensor_width_mm * cam.width * mesh.pupil_distance
    scale = framing.ipd(cam) / native_ipd
    uv, _ = project_head_points(mesh.vertices[mesh.landmarks["right_eye_inner"]][None], shot, cam,
                                ViewTransform(scale))
    if not np.all(np.isfinite(uv)):
        raise SampleRejected("right inner eye corner behind the camera")
    tx, ty = framing.anchor(cam) - uv[0]
    return ViewTransform(scale, float(tx), float(ty))


def render_pair(mesh: TriMesh, near_cm: float, pose, cam: CameraConfig,
                framing: Framing = Framing(), far_cm: float = CANONICAL_DISTANCE_CM) -> PairSample:
    """Render a distorted/undistorted pair with its ground-truth correction flow."""
    if not 23.0 <= near_cm <= far_cm:
        raise RenderError(f"near distance {near_cm}cm outside [23, {far_cm}]")
    mesh.check_landmarks()
    near_shot = ShotParams(near_cm, tuple(pose))
    far_shot = ShotParams(far_cm, tuple(pose))
    near = rasterize(mesh, near_shot, cam, framing_view(mesh, near_shot, cam, framing))
    far = rasterize(mesh, far_shot, cam, framing_view(mesh, far_shot, cam, framing))
    for name, r in (("near", near), ("far", far)):
        if not r.landmark_visible.get("right_eye_inner", False):
            raise SampleRejected(f"right inner eye corner occluded in {name} view")
    flow = ground_truth_flow(near, far, mesh)
    meta = {"distance_cm": float(near_cm), "pose_deg": tuple(float(a) for a in pose),
            "focal_mm": near_shot.focal_mm_35eq}
    return PairSample(near, far, flow, meta)
