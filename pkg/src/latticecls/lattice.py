"""Triangular-lattice splat encoder.

Points are projected onto the plane x+y+z=0 with a fixed matrix, located
inside the enclosing triangle of the A2 lattice tiling that plane, and
expressed as barycentric weights of the triangle's vertices. Rasterizing
those weights onto a pixel grid (one pixel per lattice vertex) turns a
point cloud into a small 2D image.

Plane coordinates: y = (PROJECTION @ x) / cell_scale. PROJECTION equals 3x
the orthogonal projector onto the plane, so an in-plane 3D displacement of
norm d moves the projected point by 3*d/cell_scale. Every lattice triangle
is equilateral with side sqrt(6) in plane coordinates.
"""

import json
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .pointcloud import PointCloud

PROJECTION = np.array([
    [2.0, -1.0, -1.0],
    [-1.0, 2.0, -1.0],
    [-1.0, -1.0, 2.0],
])

# Lattice basis in plane coordinates; key (a, b) <-> a*BASIS_A + b*BASIS_B.
BASIS_A = np.array([1.0, 1.0, -2.0])
BASIS_B = np.array([1.0, -2.0, 1.0])

CELL_SIDE = np.sqrt(6.0)  # triangle side length in plane coordinates
PLANE_NORMAL = np.ones(3) / np.sqrt(3.0)

# Differentials this close to zero are treated as exact cell-boundary hits.
BOUNDARY_TOL = 1e-12


class CoverageError(ValueError):
    """A lattice vertex fell outside the pixel grid."""


@dataclass
class LatticeConfig:
    cell_scale: float = 0.18
    image_h: int = 32
    image_w: int = 32
    binarize: bool = True
    projection: np.ndarray = field(default_factory=lambda: PROJECTION.copy())

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if self.cell_scale <= 0.0:
            raise ValueError("cell_scale must be positive")
        if self.image_h < 8 or self.image_w < 8:
            raise ValueError("image dimensions must be at least 8")
        if self.projection.shape != (3, 3):
            raise ValueError("projection must be a 3x3 matrix")
        if np.abs(self.projection.sum(axis=1)).max() > 1e-9:
            raise ValueError("projection rows must sum to 0 (map into x+y+z=0)")


@dataclass(frozen=True)
class Simplex:
    """One lattice triangle: vertex keys plus their plane positions."""

    keys: tuple  # ((a, b), (a, b), (a, b))
    positions: np.ndarray  # (3, 3) plane coordinates

    def side_lengths(self) -> np.ndarray:
        a, b, c = self.positions
        return np.array([
            np.linalg.norm(b - c),  # opposite vertex 0
            np.linalg.norm(c - a),  # opposite vertex 1
            np.linalg.norm(a - b),  # opposite vertex 2
        ])

    def area(self) -> float:
        a, b, c = self.positions
        return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))


@dataclass(frozen=True)
class BarycentricCode:
    """Sparse simplex-supported code of one point: 3 weights on 3 vertices."""

    simplex: Simplex
    weights: np.ndarray  # (3,), sums to 1, entries >= -1e-12


def key_position(key) -> np.ndarray:
    """Plane position of a lattice vertex key (a, b)."""
    a, b = key
    return a * BASIS_A + b * BASIS_B


def _keys_from_points(p: np.ndarray) -> np.ndarray:
    """Integer (a, b) keys of lattice points given in plane coordinates."""
    a = (2.0 * p[..., 0] + p[..., 1]) / 3.0
    b = (p[..., 0] - p[..., 1]) / 3.0
    return np.rint(np.stack([a, b], axis=-1)).astype(np.int64)


def project_to_plane(x, cfg: LatticeConfig) -> np.ndarray:
    """Map a 3D point (or (n, 3) batch) to plane coordinates."""
    x = np.asarray(x, dtype=np.float64)
    return x @ (cfg.projection.T / cfg.cell_scale)


def projection_loss(x, cfg: LatticeConfig | None = None) -> float:
    """Euclidean distance from x to the plane x+y+z=0.

    This is the irreducible reconstruction error of any code supported on
    the lattice (the atoms all lie in the plane).
    """
    x = np.asarray(x, dtype=np.float64)
    return float(abs(x.sum()) / np.sqrt(3.0))


def splat(y: np.ndarray):
    """Locate enclosing lattice triangles for a batch of plane points.

    Returns (keys, weights, grads):
      keys    (n, 3, 2) int64   vertex keys, ordered by vertex remainder 0,1,2
      weights (n, 3)    float64 barycentric weights in the same order
      grads   (n, 3, 3) float64 d(weight_j)/dy, rows indexed like weights

    Rank-based splat: round to the nearest remainder-0 lattice point, fix
    the rounded sum back onto the plane, then read weights off the sorted
    differential. Rounding uses floor(x + 0.5) and sorting breaks ties by
    coordinate index, so boundary points resolve deterministically.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = y.shape[0]
    r = np.floor(y / 3.0 + 0.5)
    h = np.rint(r.sum(axis=1)).astype(np.int64)  # integer; in {-1, 0, +1}
    rem0 = 3.0 * r
    delta = y - rem0

    rows = np.nonzero(h > 0)[0]
    if rows.size:
        j = np.argmin(delta[rows], axis=1)
        rem0[rows, j] -= 3.0
        delta[rows, j] += 3.0
    rows = np.nonzero(h < 0)[0]
    if rows.size:
        j = np.argmax(delta[rows], axis=1)
        rem0[rows, j] += 3.0
        delta[rows, j] -= 3.0

    # Permutation sorting the differential in decreasing order, ties by index.
    order = np.argsort(-delta, axis=1, kind="stable")
    s = np.take_along_axis(delta, order, axis=1)  # s0 >= s1 >= s2

    weights = np.empty((n, 3))
    weights[:, 0] = 1.0 - (s[:, 0] - s[:, 2]) / 3.0
    weights[:, 1] = (s[:, 1] - s[:, 2]) / 3.0
    weights[:, 2] = (s[:, 0] - s[:, 1]) / 3.0

    verts = np.empty((n, 3, 3))
    verts[:, 0] = rem0
    offs1 = np.full((n, 3), 1.0)
    np.put_along_axis(offs1, order[:, 2:3], -2.0, axis=1)
    verts[:, 1] = rem0 + offs1
    offs2 = np.full((n, 3), -1.0)
    np.put_along_axis(offs2, order[:, 0:1], 2.0, axis=1)
    verts[:, 2] = rem0 + offs2

    grads = np.zeros((n, 3, 3))
    idx = np.arange(n)
    grads[idx, 0, order[:, 0]] = -1.0 / 3.0
    grads[idx, 0, order[:, 2]] = 1.0 / 3.0
    grads[idx, 1, order[:, 1]] = 1.0 / 3.0
    grads[idx, 1, order[:, 2]] = -1.0 / 3.0
    grads[idx, 2, order[:, 0]] = 1.0 / 3.0
    grads[idx, 2, order[:, 1]] = -1.0 / 3.0

    return _keys_from_points(verts), weights, grads


def _affine_weights(y: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Exact affine (possibly negative) weights of y in an arbitrary triangle."""
    a, b, c = positions
    denom = np.dot(np.cross(b - a, c - a), PLANE_NORMAL)
    if abs(denom) < 1e-12:
        raise ValueError("degenerate simplex")
    wa = np.dot(np.cross(b - y, c - y), PLANE_NORMAL) / denom
    wb = np.dot(np.cross(c - y, a - y), PLANE_NORMAL) / denom
    return np.array([wa, wb, 1.0 - wa - wb])


def locate_simplex(y) -> Simplex:
    """Enclosing lattice triangle of a plane point.

    Interior points get their unique cell. A point on an edge or vertex is
    contained in several cells; the one whose sorted key tuple is
    lexicographically smallest is returned.
    """
    y = np.asarray(y, dtype=np.float64)
    keys, weights, _ = splat(y[None, :])
    keys, weights = keys[0], weights[0]
    if weights.min() > BOUNDARY_TOL:
        return _simplex_from_keys(keys)

    # Boundary: probe tiny displacements in a ring of directions to collect
    # every adjacent cell, then take the lexicographically smallest key set.
    u1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
    u2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
    eps = 1e-6
    best = None
    for k in range(12):
        ang = np.pi * k / 6.0
        probe = y + eps * (np.cos(ang) * u1 + np.sin(ang) * u2)
        cand_keys, _, _ = splat(probe[None, :])
        cand = _simplex_from_keys(cand_keys[0])
        if _affine_weights(y, cand.positions).min() < -1e-9:
            continue
        ordered = tuple(sorted(cand.keys))
        if best is None or ordered < best[0]:
            best = (ordered, cand)
    assert best is not None
    return best[1]


def _simplex_from_keys(keys) -> Simplex:
    keys = tuple(tuple(int(v) for v in k) for k in keys)
    positions = np.stack([key_position(k) for k in keys])
    return Simplex(keys=keys, positions=positions)


def barycentric_weights(y, simplex: Simplex) -> np.ndarray:
    """Weights of y in the given lattice triangle via the rank-based formula.

    The simplex must contain y (on or inside). Weights come back in the
    simplex's own vertex order.
    """
    y = np.asarray(y, dtype=np.float64)
    residues = [int(round(simplex.positions[i][0])) % 3 for i in range(3)]
    if sorted(residues) != [0, 1, 2]:
        raise ValueError("not a valid lattice cell: vertex remainders must be 0, 1, 2")
    rem0_pos = simplex.positions[residues.index(0)]
    delta = y - rem0_pos
    order = np.argsort(-delta, kind="stable")
    s = delta[order]
    by_rem = {
        0: 1.0 - (s[0] - s[2]) / 3.0,
        1: (s[1] - s[2]) / 3.0,
        2: (s[0] - s[1]) / 3.0,
    }
    weights = np.array([by_rem[r] for r in residues])
    if weights.min() < -1e-9:
        raise ValueError("point lies outside the given simplex")
    recon = weights @ simplex.positions
    if np.linalg.norm(recon - y) > 1e-9 * max(1.0, np.linalg.norm(y)):
        raise ValueError("point lies outside the given simplex")
    return weights


def area_ratio_weights(y, simplex: Simplex) -> np.ndarray:
    """Barycentric weights as normalized cross-product areas.

    Independent of the rank-based path: weight on a vertex is the area of
    the triangle formed by y and the two other vertices over the full area.
    """
    y = np.asarray(y, dtype=np.float64)
    a, b, c = simplex.positions
    full = np.linalg.norm(np.cross(b - a, c - a))
    wa = np.linalg.norm(np.cross(b - y, c - y)) / full
    wb = np.linalg.norm(np.cross(c - y, a - y)) / full
    wc = np.linalg.norm(np.cross(a - y, b - y)) / full
    return np.array([wa, wb, wc])


def reconstruct(code: BarycentricCode) -> np.ndarray:
    """Weighted vertex sum; equals the splatted point exactly."""
    return code.weights @ code.simplex.positions


def solve_point(y) -> BarycentricCode:
    """Locate y and return its barycentric code (canonical on boundaries)."""
    simplex = locate_simplex(y)
    return BarycentricCode(simplex=simplex, weights=barycentric_weights(y, simplex))


def cell_margin(code: BarycentricCode) -> float:
    """Plane distance from the reconstructed point to the nearest triangle edge.

    Equals 2 * area * min(weight_i / opposite_side_i); for an equilateral
    triangle of side l this is (sqrt(3)/2) * l * min(weights).
    """
    w = np.maximum(code.weights, 0.0)
    sides = code.simplex.side_lengths()
    return float(2.0 * code.simplex.area() * np.min(w / sides))


def margins_batch(weights: np.ndarray) -> np.ndarray:
    """Plane-coordinate margins for splat weights (all cells are equilateral)."""
    w = np.maximum(weights, 0.0)
    return (np.sqrt(3.0) / 2.0) * CELL_SIDE * w.min(axis=-1)


def margin_to_3d(plane_margin, cfg: LatticeConfig):
    """Convert a plane-coordinate margin into a 3D perturbation radius.

    An in-plane 3D displacement d moves the projection by 3*d/cell_scale;
    out-of-plane components do not move it at all. Any 3D perturbation of
    norm below plane_margin * cell_scale / 3 therefore keeps the point
    inside its cell.
    """
    return plane_margin * cfg.cell_scale / 3.0


@dataclass
class EncodeDetails:
    """Per-point splat record: pixels, weights, and weight gradients."""

    pixels: np.ndarray  # (n, 3) flat pixel index of each vertex
    weights: np.ndarray  # (n, 3)
    grad_y: np.ndarray  # (n, 3, 3): d weight_j / d plane coords
    keys: np.ndarray  # (n, 3, 2)


@dataclass
class LatticeImage:
    grid: np.ndarray  # (image_h, image_w), entries in [0, 1]
    config: LatticeConfig

    def to_json(self) -> str:
        return json.dumps({
            "image_h": self.config.image_h,
            "image_w": self.config.image_w,
            "cell_scale": self.config.cell_scale,
            "binarize": self.config.binarize,
            "grid": self.grid.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "LatticeImage":
        obj = json.loads(text)
        cfg = LatticeConfig(
            cell_scale=obj["cell_scale"],
            image_h=obj["image_h"],
            image_w=obj["image_w"],
            binarize=obj["binarize"],
        )
        return cls(grid=np.array(obj["grid"], dtype=np.float64), config=cfg)


def lattice_to_pixel(key, cfg: LatticeConfig):
    """Affine key -> (row, col), origin vertex at the image center."""
    a, b = int(key[0]), int(key[1])
    row = cfg.image_h // 2 + a
    col = cfg.image_w // 2 + b
    if not (0 <= row < cfg.image_h and 0 <= col < cfg.image_w):
        raise CoverageError(
            f"lattice key ({a}, {b}) maps to pixel ({row}, {col}) outside the "
            f"{cfg.image_h}x{cfg.image_w} grid"
        )
    return row, col


def pixel_to_lattice(row: int, col: int, cfg: LatticeConfig):
    return row - cfg.image_h // 2, col - cfg.image_w // 2


def required_half_span(cell_scale: float, radius: float = 1.0) -> int:
    """Largest |key coordinate| reachable from points of the given 3D radius.

    sqrt(2)*radius/cell_scale bounds the key coordinates of the projection
    itself; +3 covers rounding drift and simplex vertex offsets.
    """
    return int(np.ceil(np.sqrt(2.0) * radius / cell_scale)) + 3


def validate_coverage(cfg: LatticeConfig, radius: float = 1.0) -> None:
    """Fail fast when clouds of the given radius cannot be rasterized."""
    need = required_half_span(cfg.cell_scale, radius)
    have = min(cfg.image_h, cfg.image_w) // 2 - 1
    if need > have:
        raise CoverageError(
            f"cell_scale={cfg.cell_scale} needs key half-span {need} for radius "
            f"{radius} but a {cfg.image_h}x{cfg.image_w} grid only covers {have}; "
            f"increase the image to at least {2 * (need + 1)} pixels or the "
            f"cell_scale to at least {np.sqrt(2.0) * radius / (have - 3):.4f}"
        )


def encode_details(pc: PointCloud, cfg: LatticeConfig) -> EncodeDetails:
    """Splat every point of the cloud and map its vertices to pixels."""
    y = project_to_plane(pc.points, cfg)
    keys, weights, grads = splat(y)
    rows = cfg.image_h // 2 + keys[..., 0]
    cols = cfg.image_w // 2 + keys[..., 1]
    bad_r = (rows < 0) | (rows >= cfg.image_h)
    bad_c = (cols < 0) | (cols >= cfg.image_w)
    bad = bad_r | bad_c
    if bad.any():
        i, j = np.argwhere(bad)[0]
        need = int(np.abs(keys).max()) + 1
        raise CoverageError(
            f"point {i} at {pc.points[i].tolist()} maps to lattice key "
            f"{tuple(keys[i, j])} outside the {cfg.image_h}x{cfg.image_w} grid; "
            f"an image of at least {2 * need}x{2 * need} pixels is required "
            f"at cell_scale={cfg.cell_scale}"
        )
    pixels = rows * cfg.image_w + cols
    return EncodeDetails(pixels=pixels, weights=weights, grad_y=grads, keys=keys)


def image_from_details(det: EncodeDetails, n_points: int, cfg: LatticeConfig) -> np.ndarray:
    """Accumulate splat records into the pixel grid.

    Contributions are sorted by (pixel, value) before summation, so the
    output is bit-identical under any permutation of the input points.
    """
    pix = det.pixels.ravel()
    vals = det.weights.ravel()
    if cfg.binarize:
        vals = (vals > 0.0).astype(np.float64)
    else:
        vals = np.maximum(vals, 0.0)
    order = np.lexsort((vals, pix))
    pix_s, vals_s = pix[order], vals[order]
    acc = np.zeros(cfg.image_h * cfg.image_w)
    if pix_s.size:
        starts = np.concatenate([[0], np.nonzero(np.diff(pix_s))[0] + 1])
        acc[pix_s[starts]] = np.add.reduceat(vals_s, starts)
    return (acc / n_points).reshape(cfg.image_h, cfg.image_w)


def encode_image(pc: PointCloud, cfg: LatticeConfig) -> LatticeImage:
    """Rasterize a cloud: average (optionally binarized) weights per vertex pixel."""
    det = encode_details(pc, cfg)
    return LatticeImage(grid=image_from_details(det, len(pc), cfg), config=cfg)


def write_pgm(image: LatticeImage, path) -> None:
    """Binary PGM (P5), maxval 65535, big-endian samples, row-major."""
    grid = np.clip(image.grid, 0.0, 1.0)
    samples = np.rint(grid * 65535.0).astype(">u2")
    header = f"P5\n{image.config.image_w} {image.config.image_h}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(samples.tobytes())
