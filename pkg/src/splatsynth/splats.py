"""Gaussian-splat scenes as continuous density fields.

A scene is a set of anisotropic 3D Gaussians (mean, covariance, opacity).
The opacity-weighted kernel sum rho(x) acts as a smooth occupancy proxy; a
uniform-grid spatial index keeps per-query work local.  Contributions are
truncated at a fixed cutoff of CUTOFF_SIGMA standard deviations (bounding
radius per blob), which keeps the truncation error below 1e-6 relative on
scenes whose blob spacing exceeds the cutoff radius.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

CUTOFF_SIGMA = 4.0
DEFAULT_OPACITY_FLOOR = 0.05
DEFAULT_GRADIENT_STEP = 1e-3
GRID_MIN_BLOBS = 256


class SceneFormatError(ValueError):
    """Raised when a scene file is malformed or misses required fields."""


@dataclass(frozen=True)
class GaussianBlob:
    mean: np.ndarray           # (3,)
    covariance: np.ndarray     # (3,3) symmetric positive definite
    opacity: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=float))


def _validate_covariance(cov: np.ndarray) -> bool:
    if cov.shape != (3, 3) or not np.all(np.isfinite(cov)):
        return False
    if np.max(np.abs(cov - cov.T)) > 1e-9:
        return False
    return bool(np.min(np.linalg.eigvalsh(cov)) > 1e-12)


class _FlatIndex:
    def __init__(self, means, radii):
        self.means = means
        self.radii = radii

    def query(self, x, radius):
        d = np.linalg.norm(self.means - x, axis=1)
        return np.nonzero(d <= radius + self.radii)[0]


class _GridIndex:
    """Uniform grid over blob means; cell size is the median bounding radius."""

    def __init__(self, means, radii):
        self.means = means
        self.radii = radii
        self.max_radius = float(np.max(radii)) if len(radii) else 0.0
        cell = float(np.median(radii))
        self.cell = cell if cell > 0 else 1.0
        self.cells = {}
        keys = np.floor(means / self.cell).astype(np.int64)
        for i, key in enumerate(map(tuple, keys)):
            self.cells.setdefault(key, []).append(i)
        self.cells = {k: np.array(v) for k, v in self.cells.items()}

    def query(self, x, radius):
        reach = radius + self.max_radius
        lo = np.floor((x - reach) / self.cell).astype(np.int64)
        hi = np.floor((x + reach) / self.cell).astype(np.int64)
        n_cells = int(np.prod(hi - lo + 1))
        if n_cells >= len(self.cells):
            cand = np.arange(len(self.means))
        else:
            chunks = []
            for i in range(lo[0], hi[0] + 1):
                for j in range(lo[1], hi[1] + 1):
                    for k in range(lo[2], hi[2] + 1):
                        hit = self.cells.get((i, j, k))
                        if hit is not None:
                            chunks.append(hit)
            if not chunks:
                return np.empty(0, dtype=np.int64)
            cand = np.concatenate(chunks)
        d = np.linalg.norm(self.means[cand] - x, axis=1)
        return cand[d <= radius + self.radii[cand]]


class GaussianScene:
    """Immutable splat scene with vectorized density queries."""

    def __init__(self, blobs, opacity_floor: float = DEFAULT_OPACITY_FLOOR,
                 rejected_count: int = 0):
        kept = [b for b in blobs if b.opacity >= opacity_floor]
        self.opacity_floor = float(opacity_floor)
        self.rejected_count = int(rejected_count)
        self.means = np.array([b.mean for b in kept], dtype=float).reshape(-1, 3)
        self.covariances = np.array([b.covariance for b in kept], dtype=float).reshape(-1, 3, 3)
        self.opacities = np.array([b.opacity for b in kept], dtype=float)
        n = len(kept)
        if n:
            self.inv_covariances = np.linalg.inv(self.covariances)
            lam_max = np.linalg.eigvalsh(self.covariances)[:, -1]
            self.radii = CUTOFF_SIGMA * np.sqrt(lam_max)
        else:
            self.inv_covariances = np.empty((0, 3, 3))
            self.radii = np.empty(0)
        if n < GRID_MIN_BLOBS:
            self.index = _FlatIndex(self.means, self.radii)
        else:
            self.index = _GridIndex(self.means, self.radii)

    def __len__(self) -> int:
        return len(self.means)

    @property
    def blobs(self):
        return [GaussianBlob(m, c, a) for m, c, a in
                zip(self.means, self.covariances, self.opacities)]


def query_neighbors(scene: GaussianScene, x, radius: float):
    """Indices of blobs whose bounding sphere intersects the ball (x, radius)."""
    if len(scene) == 0:
        return np.empty(0, dtype=np.int64)
    return scene.index.query(np.asarray(x, dtype=float), float(radius))


def _kernel_sum(scene: GaussianScene, x, idx) -> float:
    if len(idx) == 0:
        return 0.0
    d = x - scene.means[idx]
    m = np.einsum("ni,nij,nj->n", d, scene.inv_covariances[idx], d)
    return float(np.sum(scene.opacities[idx] * np.exp(-0.5 * m)))


def density(scene: GaussianScene, x) -> float:
    """rho(x): opacity-weighted Gaussian kernel sum over the local neighborhood."""
    x = np.asarray(x, dtype=float)
    return _kernel_sum(scene, x, query_neighbors(scene, x, 0.0))


def density_many(scene: GaussianScene, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return np.array([density(scene, x) for x in xs])


def density_bruteforce(scene: GaussianScene, x) -> float:
    """Full sum over all blobs with no cutoff; oracle for the truncated path."""
    x = np.asarray(x, dtype=float)
    if len(scene) == 0:
        return 0.0
    return _kernel_sum(scene, x, np.arange(len(scene)))


def density_gradient(scene: GaussianScene, x, h: float = DEFAULT_GRADIENT_STEP) -> np.ndarray:
    """Central-difference gradient of rho, step h per axis (6 evaluations)."""
    if h <= 0:
        raise ValueError("gradient step h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.zeros(3)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        g[a] = (density(scene, x + e) - density(scene, x - e)) / (2.0 * h)
    return g


def density_gradient_analytic(scene: GaussianScene, x) -> np.ndarray:
    """Closed-form mixture gradient; oracle for the finite-difference path."""
    x = np.asarray(x, dtype=float)
    if len(scene) == 0:
        return np.zeros(3)
    d = x - scene.means
    siv = np.einsum("nij,nj->ni", scene.inv_covariances, d)
    m = np.einsum("ni,ni->n", d, siv)
    w = scene.opacities * np.exp(-0.5 * m)
    return -np.einsum("n,ni->i", w, siv)


# ---- loading ---------------------------------------------------------------

def _blobs_from_json(data):
    if "blobs" not in data:
        raise SceneFormatError("scene JSON missing 'blobs' key")
    blobs = []
    rejected = 0
    for entry in data["blobs"]:
        for key in ("mu", "cov", "alpha"):
            if key not in entry:
                raise SceneFormatError(f"blob entry missing '{key}'")
        cov = np.asarray(entry["cov"], dtype=float)
        if not _validate_covariance(cov):
            rejected += 1
            continue
        blobs.append(GaussianBlob(np.asarray(entry["mu"], dtype=float), cov, float(entry["alpha"])))
    return blobs, rejected


_PLY_REQUIRED = ["x", "y", "z", "scale_0", "scale_1", "scale_2",
                 "rot_0", "rot_1", "rot_2", "rot_3", "opacity"]

_PLY_TYPES = {
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "char": ("b", 1), "int8": ("b", 1),
    "short": ("h", 2), "ushort": ("H", 2),
}


def _parse_ply(path):
    """Return (property_names, rows ndarray) for a single-element PLY."""
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise SceneFormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]
    fmt = None
    count = None
    props = []
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            if count is not None:
                raise SceneFormatError(f"{path}: multiple PLY elements unsupported")
            count = int(tok[2])
        elif tok[0] == "property":
            if tok[1] == "list":
                raise SceneFormatError(f"{path}: list properties unsupported")
            props.append((tok[2], tok[1]))
    if fmt is None or count is None:
        raise SceneFormatError(f"{path}: incomplete PLY header")
    names = [p[0] for p in props]
    missing = [k for k in _PLY_REQUIRED if k not in names]
    if missing:
        raise SceneFormatError(f"{path}: PLY missing fields {missing}")
    if fmt == "ascii":
        rows = np.array([[float(v) for v in line.split()] for line in
                         body.decode("ascii").split("\n") if line.strip()], dtype=float)
        if rows.shape != (count, len(props)):
            raise SceneFormatError(f"{path}: PLY body shape mismatch")
    elif fmt == "binary_little_endian":
        codes = []
        for _, t in props:
            if t not in _PLY_TYPES:
                raise SceneFormatError(f"{path}: unsupported PLY type {t}")
            codes.append(_PLY_TYPES[t][0])
        rec = struct.Struct("<" + "".join(codes))
        if len(body) < rec.size * count:
            raise SceneFormatError(f"{path}: truncated PLY body")
        rows = np.array([rec.unpack_from(body, i * rec.size) for i in range(count)], dtype=float)
    else:
        raise SceneFormatError(f"{path}: unsupported PLY format {fmt}")
    return names, rows


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _blobs_from_ply(path, scale_convention: str):
    from .geometry import quat_normalize, quat_to_matrix

    names, rows = _parse_ply(path)
    col = {n: i for i, n in enumerate(names)}
    blobs = []
    rejected = 0
    for row in rows:
        mu = row[[col["x"], col["y"], col["z"]]]
        scales = row[[col["scale_0"], col["scale_1"], col["scale_2"]]]
        quat = row[[col["rot_0"], col["rot_1"], col["rot_2"], col["rot_3"]]]
        opacity = row[col["opacity"]]
        if scale_convention == "preactivation":
            scales = np.exp(scales)
            opacity = float(_sigmoid(opacity))
        try:
            rot = quat_to_matrix(quat_normalize(quat))
        except ValueError:
            rejected += 1
            continue
        cov = rot @ np.diag(scales ** 2) @ rot.T
        cov = 0.5 * (cov + cov.T)
        if not _validate_covariance(cov):
            rejected += 1
            continue
        blobs.append(GaussianBlob(mu, cov, float(opacity)))
    return blobs, rejected


def load_scene(path, opacity_floor: float = DEFAULT_OPACITY_FLOOR,
               scale_convention: str = "preactivation") -> GaussianScene:
    """Load a scene from 3DGS PLY or the native JSON format.

    scale_convention selects how PLY stores scales/opacity: "preactivation"
    (log-scales, logit opacity; the common 3DGS export) or "raw".
    """
    if scale_convention not in ("preactivation", "raw"):
        raise ValueError(f"unknown scale_convention: {scale_convention}")
    if str(path).endswith(".ply"):
        blobs, rejected = _blobs_from_ply(path, scale_convention)
    else:
        with open(path) as f:
            data = json.load(f)
        blobs, rejected = _blobs_from_json(data)
    return GaussianScene(blobs, opacity_floor=opacity_floor, rejected_count=rejected)


def save_scene_json(scene: GaussianScene, path) -> None:
    data = {"blobs": [
        {"mu": [float(v) for v in m],
         "cov": [[float(v) for v in row] for row in c],
         "alpha": float(a)}
        for m, c, a in zip(scene.means, scene.covariances, scene.opacities)
    ]}
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
