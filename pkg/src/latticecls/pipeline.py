"""Classifier pipelines over raw point arrays.

A pipeline maps an (n, 3) point array to class logits and exposes the
gradient of the classification loss with respect to the input points,
under a choice of gradient mode:

  exact:            the true derivative of the pipeline. For the point
                    baseline this is plain reverse-mode autodiff; for the
                    lattice classifier with binarized weights the encoder
                    is piecewise constant, so the exact gradient is zero
                    almost everywhere (computed as such), and without
                    binarization it is the chain through the piecewise-
                    affine barycentric weights.
  zero / straight-through / plane-projection:
                    the encoder surrogates used by BPDA-style attackers.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .declarative import SURROGATE_MODES, surrogate_input_gradient
from .lattice import LatticeConfig, encode_details, image_from_details
from .pointcloud import PointCloud

GRADIENT_MODES = ("exact",) + SURROGATE_MODES


class LpcPipeline:
    """Lattice-image encoder followed by the 2D CNN backbone."""

    def __init__(self, lattice_cfg: LatticeConfig, params, forward, n_classes: int,
                 name: str = "lpc"):
        self.lattice_cfg = lattice_cfg
        self.params = params
        self.forward = forward
        self.n_classes = n_classes
        self.name = name

    def _encode(self, points: np.ndarray):
        pc = PointCloud(points)
        details = encode_details(pc, self.lattice_cfg)
        grid = image_from_details(details, len(pc), self.lattice_cfg)
        return details, grid

    def logits(self, points: np.ndarray) -> np.ndarray:
        _, grid = self._encode(points)
        out = self.forward(self.params, Tensor(grid[None, None]), train=False)
        return out.data[0]

    def logits_many(self, clouds) -> np.ndarray:
        grids = np.stack([self._encode(pc)[1] for pc in clouds])[:, None]
        return self.forward(self.params, Tensor(grids), train=False).data

    def predict(self, points: np.ndarray) -> int:
        return int(self.logits(points).argmax())

    def loss_and_gradient(self, points: np.ndarray, label: int, mode: str = "exact"):
        """(logits, d CE(label)/d points) from one forward/backward pass."""
        if mode not in GRADIENT_MODES:
            raise ValueError(f"unknown gradient mode {mode!r}, expected one of {GRADIENT_MODES}")
        if mode == "exact":
            mode = "zero" if self.lattice_cfg.binarize else "straight-through"
        details, grid = self._encode(points)
        image = Tensor(grid[None, None], requires_grad=(mode != "zero"))
        logits = self.forward(self.params, image, train=False)
        if mode == "zero":
            return logits.data[0], np.zeros_like(points)
        loss = ad.softmax_cross_entropy(logits, np.array([label]))
        ad.backward(loss)
        grad = surrogate_input_gradient(mode, image.grad[0, 0], PointCloud(points),
                                        self.lattice_cfg, details=details)
        return logits.data[0], grad

    def input_gradient(self, points: np.ndarray, label: int, mode: str = "exact") -> np.ndarray:
        return self.loss_and_gradient(points, label, mode)[1]


class PointPipeline:
    """Point baseline: logits and exact input gradients via the tape."""

    def __init__(self, params, forward, n_classes: int, name: str = "baseline"):
        self.params = params
        self.forward = forward
        self.n_classes = n_classes
        self.name = name

    def logits(self, points: np.ndarray) -> np.ndarray:
        return self.forward(self.params, Tensor(points[None]), train=False).data[0]

    def logits_many(self, clouds) -> np.ndarray:
        counts = {len(pc) for pc in clouds}
        if len(counts) == 1:
            batch = np.stack([np.asarray(pc) for pc in clouds])
            return self.forward(self.params, Tensor(batch), train=False).data
        return np.stack([self.logits(np.asarray(pc)) for pc in clouds])

    def predict(self, points: np.ndarray) -> int:
        return int(self.logits(points).argmax())

    def loss_and_gradient(self, points: np.ndarray, label: int, mode: str = "exact"):
        if mode != "exact":
            raise ValueError(f"gradient mode {mode!r} is invalid for a point pipeline")
        pts = Tensor(points[None], requires_grad=True)
        logits = self.forward(self.params, pts, train=False)
        loss = ad.softmax_cross_entropy(logits, np.array([label]))
        ad.backward(loss)
        return logits.data[0], pts.grad[0]

    def input_gradient(self, points: np.ndarray, label: int, mode: str = "exact") -> np.ndarray:
        return self.loss_and_gradient(points, label, mode)[1]


def input_gradient(pipeline, points: np.ndarray, label: int, mode: str = "exact") -> np.ndarray:
    """Gradient of the cross-entropy loss at ``label`` w.r.t. the input points."""
    return pipeline.input_gradient(np.asarray(points, dtype=np.float64), label, mode)
