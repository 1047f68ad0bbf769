"""Sparse-coding view of the lattice encoder.

Each point's barycentric code is the solution of a constrained
reconstruction problem over a dictionary of lattice vertices:

    minimize  0.5*||x - B z||^2 + lambda * sum_n ||B z - B_n|| * 1{z_n > 0}
    over      z >= 0,  sum(z) = 1

The data term is minimized exactly by the splat code (the atoms span the
plane x+y+z=0, so the best reachable reconstruction is the orthogonal
projection of x). This module provides the objective, the solver, the
implicit Jacobian of the reconstruction through first-order optimality,
and the surrogate input gradients attackers substitute for the
non-differentiable parts of the encoder.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .lattice import (
    BarycentricCode,
    CoverageError,
    LatticeConfig,
    CELL_SIDE,
    EncodeDetails,
    encode_details,
    key_position,
    required_half_span,
    solve_point,
)
from .pointcloud import PointCloud

SURROGATE_MODES = ("zero", "straight-through", "plane-projection")

# Orthonormal basis of the plane x+y+z=0 (columns).
PLANE_BASIS = np.column_stack([
    np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0),
    np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0),
])

ORTHOGONAL_PROJECTOR = np.eye(3) - np.ones((3, 3)) / 3.0


@dataclass
class Dictionary:
    """Lattice vertices embedded in 3D as the coding atoms.

    Atom positions live on the plane x+y+z=0; a vertex with plane
    coordinates p sits at p * cell_scale / 3 in 3D.
    """

    cell_scale: float
    atoms: dict  # (a, b) -> np.ndarray(3)

    def __post_init__(self):
        for key, pos in self.atoms.items():
            if abs(float(np.sum(pos))) > 1e-9:
                raise ValueError(f"atom {key} does not lie on the plane x+y+z=0")

    @classmethod
    def from_config(cls, cfg: LatticeConfig, radius: float = 1.0) -> "Dictionary":
        """Dictionary covering every projection of points within the radius."""
        span = required_half_span(cfg.cell_scale, radius)
        return cls.from_span(cfg.cell_scale, span)

    @classmethod
    def from_span(cls, cell_scale: float, half_span: int) -> "Dictionary":
        atoms = {}
        for a in range(-half_span, half_span + 1):
            for b in range(-half_span, half_span + 1):
                atoms[(a, b)] = key_position((a, b)) * cell_scale / 3.0
        return cls(cell_scale=cell_scale, atoms=atoms)

    def __len__(self):
        return len(self.atoms)


@dataclass
class SparseObjectiveParams:
    lam: float = 0.01

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("lambda must be >= 0")


def lambda_cap(cell_scale: float) -> float:
    """Largest regularizer strength at which the data term still dominates.

    Requires lambda * (max vertex spacing) * 3 < 0.5 * inradius^2, with both
    lengths measured in 3D units.
    """
    side_3d = CELL_SIDE * cell_scale / 3.0
    inradius = side_3d / (2.0 * np.sqrt(3.0))
    return 0.5 * inradius**2 / (3.0 * side_3d)


def code_support(code: BarycentricCode) -> dict:
    """The code as a sparse mapping key -> weight over its active simplex."""
    return {key: float(w) for key, w in zip(code.simplex.keys, code.weights)}


def objective(x, z: dict, dictionary: Dictionary, params: SparseObjectiveParams) -> float:
    """Evaluate the coding objective; returns inf for infeasible codes."""
    x = np.asarray(x, dtype=np.float64)
    for key in z:
        if key not in dictionary.atoms:
            raise ValueError(f"code key {key} is not a dictionary atom")
    values = np.array(list(z.values()), dtype=np.float64)
    if not np.isfinite(values).all():
        raise ValueError("code contains non-finite weights")
    if abs(values.sum() - 1.0) > 1e-9 or values.min() < -1e-12:
        return math.inf
    recon = np.zeros(3)
    for key, w in z.items():
        recon += w * dictionary.atoms[key]
    data = 0.5 * float(np.dot(x - recon, x - recon))
    phi = 0.0
    for key, w in z.items():
        if w > 0.0:
            phi += float(np.linalg.norm(recon - dictionary.atoms[key]))
    return data + params.lam * phi


def solve_code(x, dictionary: Dictionary, params: SparseObjectiveParams | None = None) -> BarycentricCode:
    """Splat solution: the enclosing simplex and its barycentric weights.

    Optimal for the data term at any lambda (the reconstruction is the
    orthogonal plane projection of x, the best any feasible code achieves).
    """
    x = np.asarray(x, dtype=np.float64)
    y = x @ (3.0 * ORTHOGONAL_PROJECTOR / dictionary.cell_scale)
    code = solve_point(y)
    for key in code.simplex.keys:
        if key not in dictionary.atoms:
            raise CoverageError(
                f"dictionary does not cover lattice vertex {key} needed for point {x.tolist()}"
            )
    return code


def reconstruct_3d(code: BarycentricCode, dictionary: Dictionary) -> np.ndarray:
    """Reconstructed 3D point: the weighted atom sum (lies on the plane)."""
    recon = np.zeros(3)
    for key, w in zip(code.simplex.keys, code.weights):
        recon += w * dictionary.atoms[key]
    return recon


@dataclass
class ImplicitJacobianReport:
    """Differentiability diagnosis of the coding map at one point."""

    status: str  # interior-differentiable | boundary-nondifferentiable | rank-deficient
    jacobian: np.ndarray | None  # (3, 3) d reconstruction / d input, if interior
    active_set: tuple  # simplex keys

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "jacobian": None if self.jacobian is None else self.jacobian.tolist(),
            "active_set": [list(k) for k in self.active_set],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def implicit_jacobian(
    x,
    code: BarycentricCode,
    dictionary: Dictionary,
    params: SparseObjectiveParams,
    epsilon_boundary: float = 1e-7,
) -> ImplicitJacobianReport:
    """Jacobian of the reconstruction via first-order optimality.

    The ambient optimality system is rank-deficient by construction, so the
    solve is restricted to the 2D affine span of the active simplex. Interior
    codes give a rank-2 Jacobian; at lambda=0 it is exactly the orthogonal
    projector onto the plane. A weight at (or numerically near) zero, or a
    reconstruction sitting on an active vertex, has no two-sided derivative
    and is flagged instead.
    """
    for key in code.simplex.keys:
        if key not in dictionary.atoms:
            raise ValueError(f"code vertex {key} is not a dictionary atom")
    if float(code.weights.min()) <= epsilon_boundary:
        return ImplicitJacobianReport("boundary-nondifferentiable", None, code.simplex.keys)

    recon = reconstruct_3d(code, dictionary)
    curvature = np.zeros((2, 2))
    for key in code.simplex.keys:
        v = recon - dictionary.atoms[key]
        norm = float(np.linalg.norm(v))
        if norm < 1e-9:
            return ImplicitJacobianReport("boundary-nondifferentiable", None, code.simplex.keys)
        vhat = v / norm
        curvature += PLANE_BASIS.T @ (np.eye(3) - np.outer(vhat, vhat)) @ PLANE_BASIS / norm
    system = np.eye(2) + params.lam * curvature
    if np.linalg.cond(system) > 1e12:
        return ImplicitJacobianReport("rank-deficient", None, code.simplex.keys)
    jac = PLANE_BASIS @ np.linalg.solve(system, PLANE_BASIS.T)
    return ImplicitJacobianReport("interior-differentiable", jac, code.simplex.keys)


def surrogate_input_gradient(
    mode: str,
    downstream_grad: np.ndarray,
    pc: PointCloud,
    cfg: LatticeConfig,
    details: EncodeDetails | None = None,
) -> np.ndarray:
    """Per-point 3D gradients implied by a given per-pixel gradient.

    zero:             all-zero gradients (the exact a.e. value when the
                      forward pass binarizes the weights).
    straight-through: backpropagate through the raw barycentric weights as
                      if binarization were identity, chaining with the
                      actual projection map.
    plane-projection: same pixel-to-weight linearity, but the final 3D
                      chain uses the orthogonal plane projector instead of
                      the scaled projection matrix.
    """
    if mode not in SURROGATE_MODES:
        raise ValueError(f"unknown surrogate mode {mode!r}, expected one of {SURROGATE_MODES}")
    downstream_grad = np.asarray(downstream_grad, dtype=np.float64)
    if downstream_grad.shape != (cfg.image_h, cfg.image_w):
        raise ValueError(
            f"downstream gradient shape {downstream_grad.shape} does not match "
            f"image shape {(cfg.image_h, cfg.image_w)}"
        )
    n = len(pc)
    if mode == "zero":
        return np.zeros((n, 3))
    if details is None:
        details = encode_details(pc, cfg)
    g_pix = downstream_grad.ravel()[details.pixels]  # (n, 3)
    gy = np.einsum("nj,njk->nk", g_pix, details.grad_y) / n
    if mode == "straight-through":
        chain = 3.0 * ORTHOGONAL_PROJECTOR / cfg.cell_scale
    else:  # plane-projection
        chain = ORTHOGONAL_PROJECTOR
    return gy @ chain
