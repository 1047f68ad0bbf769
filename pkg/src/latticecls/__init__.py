"""Robust point-cloud classification on a permutohedral lattice.

Core pieces: point-cloud utilities and synthetic data, the lattice splat
encoder, its sparse-coding/implicit-gradient analysis, a small reverse-mode
autodiff engine with two classifiers, a white-box attack suite with the SOR
defense, and a reproducible command-line harness.
"""

__version__ = "0.1.0"

from .lattice import LatticeConfig, encode_image
from .pointcloud import PointCloud, chamfer_distance, knn_mean_distance, normalize_unit_ball
from .synth import synth_shape

__all__ = [
    "__version__",
    "LatticeConfig",
    "PointCloud",
    "chamfer_distance",
    "encode_image",
    "knn_mean_distance",
    "normalize_unit_ball",
    "synth_shape",
]
