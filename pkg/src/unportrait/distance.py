"""Camera-to-subject distance from a single portrait.

Two routes: a query-probe model whose response crosses 0.5 at the true
distance, and a geometric least-squares fit of projected landmarks under the
framing law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .camera import (FRAMING_SCALE, HEAD_TO_CAMERA, QUERY_MAX_CM, QUERY_MIN_CM, SENSOR_WIDTH_MM,
                     CameraConfig, CameraError, DistanceLabel, bin_label, rotation_matrix)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DistanceError(ValueError):
    pass


# --------------------------------------------------------------------------
# query-probe route


class SigmoidOracle:
    """Analytic probe ``sigmoid(k * (ln q - ln center))``; ``increasing=False`` flips it."""

    def __init__(self, center_cm: float, k: float = 10.0, increasing: bool = True):
        if not center_cm > 0:
            raise DistanceError("oracle center must be positive")
        self.center_cm = float(center_cm)
        self.k = float(k)
        self.sign = 1.0 if increasing else -1.0

    def respond(self, image, queries: np.ndarray) -> np.ndarray:
        t = self.sign * self.k * (np.log(queries) - math.log(self.center_cm))
        return 0.5 * (1.0 + np.tanh(0.5 * t))


class ConstantOracle:
    def __init__(self, value: float):
        self.value = float(value)

    def respond(self, image, queries: np.ndarray) -> np.ndarray:
        return np.full(np.shape(queries), self.value)


def _check_query(q: np.ndarray) -> None:
    # a little slack so log-space round trips of the range ends are accepted
    if np.any(q < QUERY_MIN_CM * (1 - 1e-12)) or np.any(q > QUERY_MAX_CM * (1 + 1e-12)):
        raise DistanceError(f"query outside [{QUERY_MIN_CM}, {QUERY_MAX_CM}] cm")


def probe(model, image, query_cm: float) -> float:
    """Model estimate of P(query >= true distance)."""
    q = np.array([float(query_cm)])
    _check_query(q)
    return float(model.respond(image, q)[0])


def probe_curve(model, image, queries) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    _check_query(q)
    return np.asarray(model.respond(image, q), dtype=np.float64)


def log_query_grid(n: int = 33) -> np.ndarray:
    return np.exp2(np.linspace(math.log2(QUERY_MIN_CM), math.log2(QUERY_MAX_CM), n))


@dataclass
class EstimateDiagnostics:
    flag: str = "ok"  # ok | below_range | above_range
    iterations: int = 0
    final_response: float = float("nan")
    non_monotone: bool = False
    evaluations: int = 0
    notes: list = field(default_factory=list)


def estimate_distance(model, image, tol: float = 1e-3, max_iter: int = 40,
                      grid_points: int = 33) -> tuple[float, EstimateDiagnostics]:
    """Distance where the probe response crosses 0.5.

    A coarse log2 grid locates the first crossing from the low end, then
    bisection in log2 query refines it.
    """
    diag = EstimateDiagnostics()
    grid = log_query_grid(grid_points)
    p = probe_curve(model, image, grid)
    diag.evaluations = len(grid)
    if np.any(np.diff(p) < 0):
        diag.non_monotone = True
        diag.notes.append("response decreases somewhere on the grid; using first crossing")
    if p[0] > 0.5:
        diag.flag, diag.final_response = "below_range", float(p[0])
        return QUERY_MIN_CM, diag
    if p[-1] < 0.5:
        diag.flag, diag.final_response = "above_range", float(p[-1])
        return QUERY_MAX_CM, diag
    i = int(np.argmax(p >= 0.5))
    if i == 0 or abs(p[i] - 0.5) <= tol:
        diag.final_response = float(p[i])
        return float(grid[i]), diag
    lo, hi = math.log2(grid[i - 1]), math.log2(grid[i])
    mid, pm = hi, float(p[i])
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        pm = probe(model, image, 2.0 ** mid)
        diag.iterations, diag.evaluations = it, diag.evaluations + 1
        if abs(pm - 0.5) <= tol:
            break
        if pm < 0.5:
            lo = mid
        else:
            hi = mid
    diag.final_response = pm
    return float(2.0 ** mid), diag


def label_from_estimate(d_cm: float) -> DistanceLabel:
    return bin_label(d_cm)


# --------------------------------------------------------------------------
# geometric route


@dataclass
class GeomLandmarkSet:
    """Observed pixel landmarks with their head-frame reference positions.

    ``view_scale`` is the image-plane scale applied after projection (the
    framing scale of the renderer or preprocessing). ``None`` leaves it as a
    free nuisance parameter, solved in closed form alongside translation.
    """

    points_px: dict
    reference: dict
    visible: dict = field(default_factory=dict)
    view_scale: float | None = None

    def usable(self) -> list[str]:
        return sorted(k for k in self.points_px
                      if k in self.reference and self.visible.get(k, True))

    @classmethod
    def from_render(cls, render, mesh, names=None, known_scale: bool = True) -> "GeomLandmarkSet":
        names = names or sorted(render.landmarks_px)
        ref = mesh.landmark_points(names)
        return cls({k: np.asarray(render.landmarks_px[k]) for k in names}, ref,
                   {k: bool(render.landmark_visible[k]) for k in names},
                   render.view.scale if known_scale else None)


@dataclass
class GeomFit:
    distance_cm: float
    residual_px: float
    pose_deg: tuple[float, float, float]
    scale: float
    translation: np.ndarray
    iterations: int


def _normalized_coords(ref: np.ndarray, d: float, pose_deg) -> np.ndarray:
    p = ref @ (HEAD_TO_CAMERA @ rotation_matrix(pose_deg)).T
    z = p[:, 2] + d
    if np.any(z <= 0):
        return np.full((len(ref), 2), np.nan)
    return p[:, :2] / z[:, None]


def _solve_nuisance(xy: np.ndarray, obs: np.ndarray, scale: float | None) -> tuple[float, np.ndarray]:
    mx, mo = xy.mean(0), obs.mean(0)
    if scale is None:
        dx = xy - mx
        den = float(np.sum(dx ** 2))
        scale = float(np.sum(dx * (obs - mo)) / den) if den > 0 else 0.0
    return scale, mo - scale * mx


def _residuals(log_d: float, ref, obs, pose_deg, cam: CameraConfig, view_scale):
    d = math.exp(log_d)
    xy = _normalized_coords(ref, d, pose_deg)
    if not np.all(np.isfinite(xy)):
        return None, None, None
    scale = None
    if view_scale is not None:
        scale = view_scale * FRAMING_SCALE * d / cam.sensor_width_mm * cam.width
    a, t = _solve_nuisance(xy, obs, scale)
    return obs - (a * xy + t), a, t


def _rms(r: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum(r ** 2, axis=1))))


def fit_distance_geometric(lms: GeomLandmarkSet, cam: CameraConfig, pose_deg=(0.0, 0.0, 0.0),
                           fit_pose: bool = False, d_range=(5.0, 2000.0), tol: float = 1e-10,
                           max_iter: int = 200) -> GeomFit:
    """Least-squares camera distance from landmarks under the framing law.

    With a known pose the objective is one-dimensional in log distance: a
    coarse grid brackets the minimum and golden-section search refines it.
    ``fit_pose`` then polishes distance and pose jointly with a
    Levenberg-Marquardt solve.
    """
    names = lms.usable()
    if len(names) < 4:
        raise DistanceError(f"need at least 4 visible landmarks, got {len(names)}")
    ref = np.array([lms.reference[k] for k in names], dtype=np.float64)
    obs = np.array([lms.points_px[k] for k in names], dtype=np.float64)
    if np.linalg.matrix_rank(obs - obs.mean(0)) < 2:
        raise DistanceError("landmarks are collinear in the image")

    def cost(log_d):
        r, _, _ = _residuals(log_d, ref, obs, pose_deg, cam, lms.view_scale)
        return np.inf if r is None else float(np.sum(r ** 2))

    lo, hi = math.log(d_range[0]), math.log(d_range[1])
    grid = np.linspace(lo, hi, 97)
    costs = np.array([cost(g) for g in grid])
    if not np.any(np.isfinite(costs)):
        raise DistanceError("no distance in range keeps the landmarks in front of the camera")
    j = int(np.argmin(costs))
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = cost(c), cost(d)
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = cost(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = cost(d)
    if b - a > tol:
        raise DistanceError("golden-section search did not converge")
    log_d = 0.5 * (a + b)
    pose = tuple(float(v) for v in pose_deg)

    if fit_pose:
        def joint(x):
            r, _, _ = _residuals(x[0], ref, obs, x[1:], cam, lms.view_scale)
            return np.full(2 * len(ref), 1e6) if r is None else r.ravel()

        sol = least_squares(joint, np.r_[log_d, pose], method="lm", xtol=1e-12, ftol=1e-12,
                            max_nfev=max_iter * 10)
        if not sol.success:
            raise DistanceError(f"joint pose fit did not converge: {sol.message}")
        log_d, pose = float(sol.x[0]), tuple(float(v) for v in sol.x[1:])
        it += int(sol.nfev)

    r, scale, t = _residuals(log_d, ref, obs, pose, cam, lms.view_scale)
    return GeomFit(math.exp(log_d), _rms(r), pose, float(scale), t, it)


def synthesize_landmarks(reference: dict, distance_cm: float, cam: CameraConfig, pose_deg=(0.0, 0.0, 0.0),
                         view_scale: float = 1.0, offset=(0.0, 0.0)) -> dict:
    """Project reference landmarks with the framed focal length for ``distance_cm``."""
    names = sorted(reference)
    ref = np.array([reference[k] for k in names], dtype=np.float64)
    xy = _normalized_coords(ref, distance_cm, pose_deg)
    if not np.all(np.isfinite(xy)):
        raise CameraError("landmark behind camera")
    k = FRAMING_SCALE * distance_cm / SENSOR_WIDTH_MM * cam.width
    uv = view_scale * (np.asarray(cam.principal_point_px) + k * xy) + np.asarray(offset)
    return dict(zip(names, uv))
