"""Point-cloud data model and geometric utilities.

A point cloud is an ordered (n, 3) float64 array plus an optional class
label. All distances are Euclidean; clouds are expected to be normalized
into the unit ball before they enter the classification pipeline.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# A single 3D point is a plain length-3 float64 array.
Point3 = np.ndarray


@dataclass
class PointCloud:
    """Ordered set of 3D points with an optional class label."""

    points: np.ndarray  # (n, 3) float64
    label: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


@dataclass
class AugmentConfig:
    """Benign augmentation: rotation, global shift, random point dropping.

    Rotation defaults to the gravity (z) axis; ``full_so3`` opts into
    uniform rotations over all of SO(3).
    """

    rotate: bool = False
    full_so3: bool = False
    shift_sigma: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")
        if self.shift_sigma < 0.0:
            raise ValueError("shift_sigma must be >= 0")


def normalize_unit_ball(pc: PointCloud) -> PointCloud:
    """Center the cloud on its centroid and scale so the farthest point has norm 1."""
    pts = pc.points
    centered = pts - pts.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius < 1e-15:
        raise ValueError("degenerate cloud: all points coincide")
    return PointCloud(centered / radius, label=pc.label)


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator, full_so3: bool = False) -> np.ndarray:
    """Uniform rotation about z, or a uniform SO(3) rotation when requested."""
    if not full_so3:
        return rotation_about_z(rng.uniform(0.0, 2.0 * np.pi))
    # QR of a Gaussian matrix with sign-fixed diagonal gives a Haar rotation.
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def augment(pc: PointCloud, cfg: AugmentConfig, seed: int) -> PointCloud:
    """Apply rotation / shift / drop augmentation, deterministically from the seed.

    Dropping never empties the cloud: if every point would be dropped, the
    lowest-index point is kept.
    """
    rng = np.random.default_rng(seed)
    pts = pc.points
    if cfg.rotate:
        pts = pts @ random_rotation(rng, cfg.full_so3).T
    if cfg.shift_sigma > 0.0:
        pts = pts + rng.normal(0.0, cfg.shift_sigma, size=3)
    if cfg.drop_prob > 0.0:
        keep = rng.random(len(pts)) >= cfg.drop_prob
        if not keep.any():
            keep[0] = True
        pts = pts[keep]
    return PointCloud(np.array(pts), label=pc.label)


def pairwise_sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(len(a), len(b)) matrix of squared Euclidean distances."""
    a2 = np.einsum("ij,ij->i", a, a)
    b2 = np.einsum("ij,ij->i", b, b)
    d2 = a2[:, None] + b2[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def knn_mean_distance(pc: PointCloud, k: int) -> np.ndarray:
    """Mean distance from each point to its k nearest other points.

    Brute force O(n^2); the k smallest distances are selected by value
    (ties at the boundary share the same value, so neighbor-set ties
    resolved by index give the identical mean).
    """
    n = len(pc)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise ValueError(f"k={k} requires more than k points, got {n}")
    d2 = pairwise_sq_distances(pc.points, pc.points)
    np.fill_diagonal(d2, np.inf)
    nearest = np.partition(d2, k - 1, axis=1)[:, :k]
    return np.sqrt(nearest).mean(axis=1)


def chamfer_distance(a: PointCloud, b: PointCloud, squared: bool = True) -> float:
    """Symmetric Chamfer distance between two clouds.

    Mean over a of the (squared) distance to the nearest point of b, plus
    the same in the other direction. The squared-mean form is the default;
    ``squared=False`` selects plain distances.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer_distance requires nonempty clouds")
    d2 = pairwise_sq_distances(a.points, b.points)
    fwd = d2.min(axis=1)
    bwd = d2.min(axis=0)
    if not squared:
        fwd, bwd = np.sqrt(fwd), np.sqrt(bwd)
    return float(fwd.mean() + bwd.mean())


def save_xyz(pc: PointCloud, path) -> None:
    """Write the native plain-text cloud format: optional label header, one point per line."""
    lines = []
    if pc.label is not None:
        lines.append(f"# label {pc.label}")
    for x, y, z in pc.points:
        lines.append(f"{x!r} {y!r} {z!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_xyz(path) -> PointCloud:
    label = None
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            tokens = line[1:].split()
            if len(tokens) == 2 and tokens[0] == "label":
                label = int(tokens[1])
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'x y z', got {line!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric coordinate") from exc
    if not rows:
        raise ValueError(f"{path}: no points found")
    return PointCloud(np.array(rows), label=label)
