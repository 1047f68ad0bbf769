"""Synthetic analytic shapes used as the desk-scale dataset."""

import numpy as np

from .pointcloud import PointCloud, normalize_unit_ball

SHAPE_KINDS = ("sphere", "cube", "cylinder", "torus", "cone")

# Fixed shape parameters; intra-class variation comes from jitter and the
# per-cloud rotations applied at dataset-generation time.
CYLINDER_RADIUS = 0.4
CYLINDER_HEIGHT = 1.2
TORUS_MAJOR = 1.0
TORUS_MINOR = 0.3
CONE_RADIUS = 0.5
CONE_HEIGHT = 1.0


def _sample_disk(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _sphere(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(rng, n, half=0.5):
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-half, half, (n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, half, -half)
    for i in range(n):
        others = [d for d in range(3) if d != axis[i]]
        pts[i, axis[i]] = sign[i]
        pts[i, others[0]] = uv[i, 0]
        pts[i, others[1]] = uv[i, 1]
    return pts


def _cylinder(rng, n, radius=CYLINDER_RADIUS, height=CYLINDER_HEIGHT):
    lateral = 2.0 * np.pi * radius * height
    cap = np.pi * radius**2
    u = rng.random(n)
    on_lateral = u < lateral / (lateral + 2.0 * cap)
    on_top = (~on_lateral) & (u < (lateral + cap) / (lateral + 2.0 * cap))
    pts = np.empty((n, 3))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.uniform(-height / 2.0, height / 2.0, n)
    pts[:, 0] = radius * np.cos(theta)
    pts[:, 1] = radius * np.sin(theta)
    pts[:, 2] = z
    n_caps = int((~on_lateral).sum())
    if n_caps:
        disk = _sample_disk(rng, n_caps, radius)
        caps = ~on_lateral
        pts[caps, 0] = disk[:, 0]
        pts[caps, 1] = disk[:, 1]
        pts[caps, 2] = np.where(on_top[caps], height / 2.0, -height / 2.0)
    return pts


def _torus(rng, n, major=TORUS_MAJOR, minor=TORUS_MINOR):
    # Area-uniform: tube angle density is proportional to (R + r*cos(phi)),
    # sampled by rejection against the maximum R + r.
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    phi = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0.0, 2.0 * np.pi, 2 * (n - filled))
        accept = rng.random(len(cand)) < (major + minor * np.cos(cand)) / (major + minor)
        good = cand[accept][: n - filled]
        phi[filled : filled + len(good)] = good
        filled += len(good)
    ring = major + minor * np.cos(phi)
    return np.column_stack([ring * np.cos(theta), ring * np.sin(theta), minor * np.sin(phi)])


def _cone(rng, n, radius=CONE_RADIUS, height=CONE_HEIGHT):
    slant = np.hypot(radius, height)
    lateral = np.pi * radius * slant
    base = np.pi * radius**2
    u = rng.random(n)
    on_lateral = u < lateral / (lateral + base)
    pts = np.empty((n, 3))
    apex = np.array([0.0, 0.0, height / 2.0])
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    s = np.sqrt(rng.random(n))  # fraction of the way from apex to rim
    pts[:, 0] = s * radius * np.cos(theta)
    pts[:, 1] = s * radius * np.sin(theta)
    pts[:, 2] = apex[2] - s * height
    n_base = int((~on_lateral).sum())
    if n_base:
        disk = _sample_disk(rng, n_base, radius)
        sel = ~on_lateral
        pts[sel, 0] = disk[:, 0]
        pts[sel, 1] = disk[:, 1]
        pts[sel, 2] = -height / 2.0
    return pts


_SAMPLERS = {
    "sphere": _sphere,
    "cube": _cube,
    "cylinder": _cylinder,
    "torus": _torus,
    "cone": _cone,
}


def surface_points(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Raw area-uniform surface samples of the analytic shape, pre-normalization."""
    if kind not in _SAMPLERS:
        raise ValueError(f"unknown shape kind {kind!r}, expected one of {SHAPE_KINDS}")
    return _SAMPLERS[kind](rng, n)


def synth_shape(kind: str, n: int, seed: int, jitter_sigma: float = 0.0) -> PointCloud:
    """Sample a labeled unit-ball cloud of the given shape kind.

    Surface samples get isotropic Gaussian jitter of the given sigma and the
    cloud is then normalized into the unit ball.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = surface_points(kind, n, rng)
    if jitter_sigma > 0.0:
        pts = pts + rng.normal(0.0, jitter_sigma, pts.shape)
    pc = PointCloud(pts, label=SHAPE_KINDS.index(kind))
    return normalize_unit_ball(pc)
