"""Triangle meshes: a parametric head generator and a small OBJ reader.

Head-frame coordinates are centimeters with x towards the image right, y up
and z towards the camera. Generated heads are translated so the midpoint of
the two pupils is the origin; with the camera on the z axis this makes the
camera-to-subject distance the distance to the pupil plane, which is what
keeps the inter-pupillary distance fixed under the framing law.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields

import numpy as np

REQUIRED_LANDMARKS = (
    "right_eye_inner", "left_eye_inner", "right_eye_outer", "left_eye_outer",
    "nose_tip", "right_ear_tip", "left_ear_tip",
    "right_mouth_corner", "left_mouth_corner", "chin",
)
PUPIL_LANDMARKS = ("right_pupil", "left_pupil")

DEFAULT_ALBEDO = (0.7, 0.7, 0.7)


class MeshError(ValueError):
    pass


class ObjParseError(MeshError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    albedo: np.ndarray | None = None
    landmarks: dict[str, int] = field(default_factory=dict)
    groups: dict[str, np.ndarray] = field(default_factory=dict)
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        n = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise MeshError("triangle index out of range")
        if self.albedo is None:
            self.albedo = np.tile(np.asarray(DEFAULT_ALBEDO), (n, 1))
        self.albedo = np.asarray(self.albedo, dtype=np.float64).reshape(n, 3)
        for name, idx in self.landmarks.items():
            if not 0 <= idx < n:
                raise MeshError(f"landmark {name!r} index {idx} out of range")
        self.groups = {k: np.asarray(v, dtype=np.int64) for k, v in self.groups.items()}
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.triangles)

    def check_landmarks(self, names=REQUIRED_LANDMARKS) -> None:
        missing = [n for n in names if n not in self.landmarks]
        if missing:
            raise MeshError(f"missing landmarks: {', '.join(missing)}")
        if self.landmarks["right_eye_inner"] == self.landmarks["left_eye_inner"]:
            raise MeshError("right and left inner eye corners coincide")

    def landmark_points(self, names=None) -> dict[str, np.ndarray]:
        names = self.landmarks if names is None else names
        return {n: self.vertices[self.landmarks[n]] for n in names}

    @property
    def pupil_distance(self) -> float:
        r = self.vertices[self.landmarks["right_pupil"]]
        l = self.vertices[self.landmarks["left_pupil"]]
        return float(np.linalg.norm(r - l))


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals; vertices without faces get +z."""
    normals = np.zeros_like(vertices)
    if len(triangles):
        a, b, c = (vertices[triangles[:, i]] for i in range(3))
        face = np.cross(b - a, c - a)
        for i in range(3):
            np.add.at(normals, triangles[:, i], face)
    length = np.linalg.norm(normals, axis=1, keepdims=True)
    out = np.where(length > 0, normals / np.where(length > 0, length, 1), 0.0)
    out[length[:, 0] == 0] = (0.0, 0.0, 1.0)
    return out


# --------------------------------------------------------------------------
# parametric head


@dataclass(frozen=True)
class HeadParams:
    """Shape and texture controls for :func:`parametric_head`.

    ``RANGES`` documents the accepted interval for each numeric field.
    """

    half_width: float = 7.4
    half_height: float = 11.0
    half_depth: float = 9.8
    squareness: float = 3.0
    jaw_taper: float = 0.82
    nose: float = 2.0
    ear_offset: float = 0.0
    ear_size: float = 5.6
    ear_flare_deg: float = 32.0
    pupil_distance: float = 6.3
    skin: tuple[float, float, float] = (0.86, 0.64, 0.52)
    hair: tuple[float, float, float] = (0.22, 0.14, 0.09)
    n_lat: int = 72
    n_lon: int = 144

    RANGES = {
        "half_width": (5.5, 9.5),
        "half_height": (8.0, 14.0),
        "half_depth": (7.5, 12.5),
        "squareness": (2.0, 4.0),
        "jaw_taper": (0.6, 1.0),
        "nose": (0.0, 4.0),
        "ear_offset": (-0.5, 3.0),
        "ear_size": (3.0, 7.0),
        "ear_flare_deg": (0.0, 60.0),
        "pupil_distance": (5.0, 7.5),
        "n_lat": (8, 400),
        "n_lon": (8, 800),
    }

    def validate(self) -> None:
        for f in fields(self):
            if f.name not in self.RANGES:
                continue
            lo, hi = self.RANGES[f.name]
            value = getattr(self, f.name)
            if not lo <= value <= hi:
                raise MeshError(f"{f.name}={value} outside [{lo}, {hi}]")
        if self.n_lon % 2:
            raise MeshError("n_lon must be even for a symmetric mesh")
        for color in (self.skin, self.hair):
            if len(color) != 3 or not all(0.0 <= c <= 1.0 for c in color):
                raise MeshError(f"color {color} must be three values in [0, 1]")

    @classmethod
    def random(cls, rng: np.random.Generator, **overrides) -> "HeadParams":
        """Plausible random subject around the defaults."""
        base = cls()
        values = dict(
            half_width=rng.uniform(6.7, 8.0),
            half_height=rng.uniform(10.0, 12.0),
            half_depth=rng.uniform(9.0, 10.6),
            squareness=rng.uniform(2.7, 3.4),
            jaw_taper=rng.uniform(0.74, 0.9),
            nose=rng.uniform(1.2, 3.0),
            ear_offset=rng.uniform(-0.2, 0.8),
            ear_size=rng.uniform(5.0, 6.4),
            ear_flare_deg=rng.uniform(24.0, 40.0),
            pupil_distance=rng.uniform(5.8, 6.8),
            skin=tuple(np.clip(np.asarray(base.skin) * rng.uniform(0.75, 1.12) + rng.normal(0, 0.03, 3), 0.05, 1.0)),
            hair=tuple(np.clip(np.asarray(base.hair) * rng.uniform(0.5, 2.2), 0.02, 1.0)),
        )
        values.update(overrides)
        return cls(**values)


def _superellipse(phi: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    s, c = np.sin(phi), np.cos(phi)
    return np.sign(s) * np.abs(s) ** (2.0 / p), np.sign(c) * np.abs(c) ** (2.0 / p)


class _Shell:
    """Closed head surface as an analytic function of latitude and longitude."""

    def __init__(self, prm: HeadParams):
        self.prm = prm
        self.eye_y = 0.05 * prm.half_height
        self.nose_y = self.eye_y - 2.6
        self.mouth_y = self.eye_y - 5.6

    def width_scale(self, y):
        # narrower jaw below the eye line
        t = np.clip((self.eye_y - y) / self.prm.half_height, 0.0, 1.0)
        return 1.0 - (1.0 - self.prm.jaw_taper) * t ** 1.5

    def base(self, theta, phi):
        prm = self.prm
        y = prm.half_height * np.sin(theta)
        ring = np.cos(theta)
        sx, sz = _superellipse(phi, prm.squareness)
        x = prm.half_width * ring * sx * self.width_scale(y)
        z = prm.half_depth * ring * sz
        return x, y, z

    def nose_bump(self, x, y, z):
        prm = self.prm
        # bump only on the front half; elongated vertically, peaking low
        w = np.exp(-(x / 1.05) ** 2 - ((y - self.nose_y) / 1.9) ** 2)
        ridge = np.clip((y - (self.nose_y - 1.2)) / 4.0, 0.0, 1.0)
        profile = w * (0.35 + 0.65 * (1.0 - ridge))
        return prm.nose * profile * (z > 0)

    def surface(self, theta, phi):
        x, y, z = self.base(theta, phi)
        return x, y, z + self.nose_bump(x, y, z)

    def front_z(self, x, y):
        """Surface depth of the front half at (x, y), via a dense lookup."""
        theta = np.arcsin(np.clip(y / self.prm.half_height, -1, 1))
        phis = np.linspace(-np.pi / 2, np.pi / 2, 4001)
        xs, _, zs = self.surface(np.full_like(phis, theta), phis)
        return float(np.interp(x, xs, zs))


def parametric_head(params: HeadParams | None = None) -> TriMesh:
    """Bilaterally symmetric head with ears, nose and a procedural albedo."""
    prm = params or HeadParams()
    prm.validate()
    shell = _Shell(prm)

    n_lat, n_lon = prm.n_lat, prm.n_lon
    thetas = np.linspace(-np.pi / 2, np.pi / 2, n_lat + 1)[1:-1]
    phis = 2 * np.pi * np.arange(n_lon) / n_lon
    # exact mirror pairs: phi_k and phi_{n-k} give x and -x
    th, ph = np.meshgrid(thetas, phis, indexing="ij")
    x, y, z = shell.surface(th, ph)
    half = n_lon // 2
    x[:, half + 1:] = -x[:, 1:half][:, ::-1]
    y[:, half + 1:] = y[:, 1:half][:, ::-1]
    z[:, half + 1:] = z[:, 1:half][:, ::-1]
    x[:, 0] = 0.0
    x[:, half] = 0.0
    ring_verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    south = np.array([[0.0, -prm.half_height, 0.0]])
    north = np.array([[0.0, prm.half_height, 0.0]])
    verts = [ring_verts, south, north]
    i_south = len(ring_verts)
    i_north = i_south + 1

    tris = []
    idx = np.arange(n_lat - 1)[:, None] * n_lon + np.arange(n_lon)[None, :]
    nxt = np.roll(idx, -1, axis=1)
    a, b = idx[:-1], nxt[:-1]
    c, d = idx[1:], nxt[1:]
    tris.append(np.stack([a, b, c], -1).reshape(-1, 3))
    tris.append(np.stack([b, d, c], -1).reshape(-1, 3))
    tris.append(np.stack([np.full(n_lon, i_south), idx[0], nxt[0]], -1)[:, [0, 2, 1]])
    tris.append(np.stack([np.full(n_lon, i_north), idx[-1], nxt[-1]], -1))
    shell_tris = np.concatenate(tris)
    n_shell = len(shell_tris)

    ear_verts, ear_tris, ear_tip_local = _ear(shell, side=+1.0)
    base_l = sum(len(v) for v in verts)
    verts.append(ear_verts)
    left_ear = ear_tris + base_l
    mirrored = ear_verts * np.array([-1.0, 1.0, 1.0])
    base_r = base_l + len(ear_verts)
    verts.append(mirrored)
    right_ear = ear_tris[:, [0, 2, 1]] + base_r

    vertices = np.concatenate(verts)
    triangles = np.concatenate([shell_tris, left_ear, right_ear])
    groups = {
        "shell": np.arange(n_shell),
        "left_ear": np.arange(n_shell, n_shell + len(ear_tris)),
        "right_ear": np.arange(n_shell + len(ear_tris), n_shell + 2 * len(ear_tris)),
    }

    shell_ids = np.arange(len(ring_verts))
    landmarks = _place_landmarks(shell, vertices, shell_ids)
    landmarks["left_ear_tip"] = base_l + ear_tip_local
    landmarks["right_ear_tip"] = base_r + ear_tip_local

    albedo = _albedo(shell, vertices, prm)
    albedo[base_l:] = _ear_albedo(prm, len(vertices) - base_l)

    # pupil midpoint becomes the origin
    mid = 0.5 * (vertices[landmarks["right_pupil"]] + vertices[landmarks["left_pupil"]])
    vertices = vertices - mid
    vertices[:, 0] = np.where(np.abs(vertices[:, 0]) < 1e-12, 0.0, vertices[:, 0])

    normals = vertex_normals(vertices, triangles)
    return TriMesh(vertices, triangles, albedo, landmarks, groups, normals)


def _ear(shell: _Shell, side: float):
    """Left ear flap (+x side): a curved elliptical plate flaring backwards."""
    prm = shell.prm
    nu, nv = 12, 6
    height = prm.ear_size
    width = 0.55 * height
    yc = shell.eye_y - 1.6
    alpha = np.radians(prm.ear_flare_deg)
    root_z = -0.22 * prm.half_depth
    ts = np.linspace(-1.0, 1.0, nu)
    ss = np.linspace(0.0, 1.0, nv)
    pts = []
    for t in ts:
        y = yc + 0.5 * height * t
        theta = np.arcsin(np.clip(y / prm.half_height, -1, 1))
        # root sits on the shell where it reaches root_z on the +x side
        phis = np.linspace(np.pi / 2 - 0.9, np.pi / 2 + 0.9, 2001)
        xs, _, zs = shell.base(np.full_like(phis, theta), phis)
        k = int(np.argmin(np.abs(zs - root_z)))
        root_x = xs[k] - 0.15
        extent = width * np.sqrt(max(1.0 - t * t, 0.0)) + 0.15
        for s in ss:
            r = s * extent
            cup = 0.25 * np.sin(np.pi * s)
            x = root_x + r * np.sin(alpha) + cup * np.cos(alpha)
            z = root_z - r * np.cos(alpha) + cup * np.sin(alpha)
            pts.append((side * (x + prm.ear_offset), y, z))
    verts = np.asarray(pts)
    tris = []
    for i in range(nu - 1):
        for j in range(nv - 1):
            a = i * nv + j
            b, c, d = a + 1, a + nv, a + nv + 1
            tris.append((a, c, b))
            tris.append((b, c, d))
    tip = int(np.argmax(verts[:, 0] * side))
    return verts, np.asarray(tris, dtype=np.int64), tip


def _place_landmarks(shell: _Shell, vertices: np.ndarray, candidates: np.ndarray) -> dict[str, int]:
    prm = shell.prm
    pool = vertices[candidates]
    front = pool[:, 2] > 0

    def nearest(x, y):
        z = shell.front_z(x, y)
        d = np.linalg.norm(pool - np.array([x, y, z]), axis=1)
        d[~front] = np.inf
        return int(candidates[np.argmin(d)])

    half_pd = prm.pupil_distance / 2
    lm = {}
    for side, sign in (("right", -1.0), ("left", 1.0)):
        lm[f"{side}_pupil"] = nearest(sign * half_pd, shell.eye_y)
        lm[f"{side}_eye_inner"] = nearest(sign * (half_pd - 1.5), shell.eye_y)
        lm[f"{side}_eye_outer"] = nearest(sign * (half_pd + 1.4), shell.eye_y)
        lm[f"{side}_mouth_corner"] = nearest(sign * 2.4, shell.mouth_y)
    # the mesh is built mirror-exact, so mirror partners share |x|
    lm["chin"] = nearest(0.0, -0.86 * prm.half_height)
    region = front & (np.abs(pool[:, 0]) < 2.2) & (np.abs(pool[:, 1] - shell.nose_y) < 3.8)
    zs = np.where(region, pool[:, 2], -np.inf)
    # prefer the midline vertex among equal maxima
    top = np.flatnonzero(zs >= zs.max() - 1e-12)
    lm["nose_tip"] = int(candidates[top[np.argmin(np.abs(pool[top, 0]))]])
    return lm


def _blob(x, y, cx, cy, sx, sy):
    return np.exp(-(((x - cx) / sx) ** 2) - ((y - cy) / sy) ** 2)


def _smoothstep(v, lo, hi):
    t = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def _albedo(shell: _Shell, vertices: np.ndarray, prm: HeadParams) -> np.ndarray:
    x, y, z = vertices.T
    skin = np.asarray(prm.skin)
    hair = np.asarray(prm.hair)
    col = np.tile(skin, (len(vertices), 1))
    ey, my = shell.eye_y, shell.mouth_y
    half_pd = prm.pupil_distance / 2

    cheeks = _blob(np.abs(x), y, 3.6, ey - 3.2, 1.8, 1.6)
    col = col * (1 - 0.12 * cheeks[:, None]) + np.array([0.9, 0.45, 0.45]) * 0.12 * cheeks[:, None]
    brows = _blob(np.abs(x), y, half_pd + 0.1, ey + 1.55, 1.4, 0.45) * (z > 0)
    col = col * (1 - 0.6 * brows[:, None]) + hair * 0.6 * brows[:, None]
    sclera = _blob(np.abs(x), y, half_pd, ey, 1.15, 0.5) * (z > 0)
    col = col * (1 - 0.7 * sclera[:, None]) + np.array([0.93, 0.92, 0.9]) * 0.7 * sclera[:, None]
    iris = _blob(np.abs(x), y, half_pd, ey, 0.5, 0.5) * (z > 0)
    col = col * (1 - 0.8 * iris[:, None]) + np.array([0.25, 0.18, 0.12]) * 0.8 * iris[:, None]
    lips = _blob(x, y, 0.0, my, 2.1, 0.55) * (z > 0)
    col = col * (1 - 0.55 * lips[:, None]) + np.array([0.72, 0.28, 0.3]) * 0.55 * lips[:, None]

    # hairline: high on the face, lower around the sides and back
    face_dir = np.clip(z / prm.half_depth, -1, 1)
    hairline = ey + 4.8 * _smoothstep(face_dir, 0.1, 0.75) + 0.5
    h = _smoothstep(y - hairline, -0.6, 0.6)
    h = np.maximum(h, _smoothstep(-z, 0.55 * prm.half_depth, 0.85 * prm.half_depth) * (y > -0.55 * prm.half_height))
    col = col * (1 - h[:, None]) + hair * h[:, None]
    return np.clip(col, 0.0, 1.0)


def _ear_albedo(prm: HeadParams, n: int) -> np.ndarray:
    tone = np.clip(np.asarray(prm.skin) * np.array([1.02, 0.9, 0.9]), 0, 1)
    return np.tile(tone, (n, 1))


# --------------------------------------------------------------------------
# OBJ


_IGNORED = {"o", "g", "s", "usemtl", "mtllib", "l"}


def load_obj(stream, landmarks: dict[str, int] | None = None) -> TriMesh:
    """Parse a wavefront OBJ subset (v, vt, vn, f, comments).

    Polygons are fan-triangulated; 1-based and negative (relative) indices
    are resolved. ``landmarks`` maps names to 1-based vertex indices, as in
    the OBJ file itself. ``v`` lines may carry a trailing RGB albedo.
    """
    if isinstance(stream, (str, bytes)):
        stream = io.StringIO(stream.decode() if isinstance(stream, bytes) else stream)
    verts, colors, tris = [], [], []
    n_vt = n_vn = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key, args = tok[0], tok[1:]
        try:
            if key == "v":
                if len(args) not in (3, 4, 6, 7):
                    raise ObjParseError(lineno, f"vertex needs 3 coordinates, got {len(args)}")
                vals = [float(a) for a in args]
                verts.append(vals[:3])
                colors.append(vals[-3:] if len(vals) >= 6 else None)
            elif key == "vt":
                if not 1 <= len(args) <= 3:
                    raise ObjParseError(lineno, "malformed texture coordinate")
                [float(a) for a in args]
                n_vt += 1
            elif key == "vn":
                if len(args) != 3:
                    raise ObjParseError(lineno, "malformed normal")
                [float(a) for a in args]
                n_vn += 1
            elif key == "f":
                ids = [_resolve(a.split("/")[0], len(verts), lineno) for a in args]
                if len(ids) < 3:
                    raise ObjParseError(lineno, f"face needs at least 3 vertices, got {len(ids)}")
                if len(set(ids)) != len(ids):
                    raise ObjParseError(lineno, "face repeats a vertex index")
                for k in range(1, len(ids) - 1):
                    tris.append((ids[0], ids[k], ids[k + 1]))
            elif key in _IGNORED:
                continue
            else:
                raise ObjParseError(lineno, f"unknown directive {key!r}")
        except ValueError as exc:
            if isinstance(exc, ObjParseError):
                raise
            raise ObjParseError(lineno, str(exc)) from None

    n = len(verts)
    if any(c is not None for c in colors):
        albedo = np.array([c if c is not None else DEFAULT_ALBEDO for c in colors])
    else:
        albedo = None
    lm = {}
    for name, one_based in (landmarks or {}).items():
        if not 1 <= one_based <= n:
            raise MeshError(f"landmark {name!r} index {one_based} out of range")
        lm[name] = one_based - 1
    return TriMesh(np.asarray(verts).reshape(-1, 3), np.asarray(tris, dtype=np.int64).reshape(-1, 3),
                   albedo, lm)


def _resolve(token: str, n_verts: int, lineno: int) -> int:
    try:
        k = int(token)
    except ValueError:
        raise ObjParseError(lineno, f"bad vertex index {token!r}") from None
    if k > 0:
        idx = k - 1
    elif k < 0:
        idx = n_verts + k
    else:
        raise ObjParseError(lineno, "vertex index 0 is invalid")
    if not 0 <= idx < n_verts:
        raise ObjParseError(lineno, f"vertex index {k} out of range")
    return idx


def read_landmark_table(stream) -> dict[str, int]:
    """Sidecar ``name index`` lines (1-based indices, ``#`` comments)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    table = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ObjParseError(lineno, "expected 'name index'")
        try:
            table[parts[0]] = int(parts[1])
        except ValueError:
            raise ObjParseError(lineno, f"bad index {parts[1]!r}") from None
    return table
