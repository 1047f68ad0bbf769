"""Model definitions, Adam, and the checkpoint format.

Two classifiers at desk scale: a tiny 2D CNN over lattice images and a
permutation-invariant point network (shared per-point MLP fused by max
pooling). Initialization is fan-in uniform, deterministic from the seed.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ModelParams:
    """Named parameter tensors; names unique, shapes fixed after construction."""

    def __init__(self, named: dict):
        self._params = dict(named)
        self._shapes = {name: t.data.shape for name, t in self._params.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict:
        return {name: t.grad for name, t in self._params.items()}

    def set_values(self, values: dict):
        for name, arr in values.items():
            if name not in self._params:
                raise KeyError(f"unknown parameter {name}")
            if arr.shape != self._shapes[name]:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {self._shapes[name]}")
            self._params[name].data = np.array(arr, dtype=np.float64)


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def build_lpc_backbone(image_size: int, classes: int, width: int = 1, seed: int = 0,
                       dropout: float = 0.3, input_gain: float = 32.0):
    """Tiny CNN: [conv3x3(8w) relu maxpool2] x3, GAP, dense(64w), relu, dropout, dense.

    Returns (params, forward) where forward(params, images, train, rng)
    maps a (B, 1, H, W) tensor to (B, classes) logits. Lattice-image pixels
    are per-point averages (magnitude ~1/points), so the input is scaled by
    a fixed gain before the first convolution.
    """
    if image_size < 8:
        raise ValueError("image size must be at least 8")
    if image_size % 8:
        raise ValueError("image size must be divisible by 8 (three 2x poolings)")
    rng = np.random.default_rng(seed)
    c = 8 * width
    hidden = 64 * width
    params = ModelParams({
        "conv1_w": _fan_in_uniform(rng, (c, 1, 3, 3), 9),
        "conv1_b": _zeros(c),
        "conv2_w": _fan_in_uniform(rng, (c, c, 3, 3), 9 * c),
        "conv2_b": _zeros(c),
        "conv3_w": _fan_in_uniform(rng, (c, c, 3, 3), 9 * c),
        "conv3_b": _zeros(c),
        "fc1_w": _fan_in_uniform(rng, (c, hidden), c),
        "fc1_b": _zeros(hidden),
        "fc2_w": _fan_in_uniform(rng, (hidden, classes), hidden),
        "fc2_b": _zeros(classes),
    })

    def forward(p: ModelParams, images: Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        h = ad.mul(images, Tensor(np.float64(input_gain)))
        h = ad.relu(ad.conv2d(h, p["conv1_w"], p["conv1_b"], padding="same"))
        h = ad.maxpool2d(h)
        h = ad.relu(ad.conv2d(h, p["conv2_w"], p["conv2_b"], padding="same"))
        h = ad.maxpool2d(h)
        h = ad.relu(ad.conv2d(h, p["conv3_w"], p["conv3_b"], padding="same"))
        h = ad.maxpool2d(h)
        h = ad.global_avg_pool(h)
        h = ad.relu(ad.dense(h, p["fc1_w"], p["fc1_b"]))
        h = ad.dropout(h, dropout, train, rng)
        return ad.dense(h, p["fc2_w"], p["fc2_b"])

    return params, forward


def build_point_baseline(points_per_cloud: int, classes: int, seed: int = 0):
    """Shared per-point MLP (3->64->128), max over points, dense(64), dense(classes).

    Permutation-invariant by construction: the only cross-point operation
    is the elementwise max.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams({
        "mlp1_w": _fan_in_uniform(rng, (3, 64), 3),
        "mlp1_b": _zeros(64),
        "mlp2_w": _fan_in_uniform(rng, (64, 128), 64),
        "mlp2_b": _zeros(128),
        "fc1_w": _fan_in_uniform(rng, (128, 64), 128),
        "fc1_b": _zeros(64),
        "fc2_w": _fan_in_uniform(rng, (64, classes), 64),
        "fc2_b": _zeros(classes),
    })

    def forward(p: ModelParams, points: Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        h = ad.relu(ad.dense(points, p["mlp1_w"], p["mlp1_b"]))
        h = ad.relu(ad.dense(h, p["mlp2_w"], p["mlp2_b"]))
        pooled = ad.reduce_max(h, axis=1)
        h = ad.relu(ad.dense(pooled, p["fc1_w"], p["fc1_b"]))
        return ad.dense(h, p["fc2_w"], p["fc2_b"])

    return params, forward


@dataclass
class AdamState:
    """Adam with bias correction, decoupled weight decay, and stepped lr decay."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 0.7
    decay_every: int = 20
    step: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def effective_lr(self) -> float:
        return self.lr * self.decay_factor ** (self.epoch // self.decay_every)


def adam_step(params: ModelParams, grads: dict, state: AdamState) -> ModelParams:
    """One Adam update in place; parameters with missing/None grads are skipped."""
    state.step += 1
    lr = state.effective_lr()
    b1, b2 = state.beta1, state.beta2
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != tensor.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {tensor.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        mhat = state.m[name] / (1.0 - b1**state.step)
        vhat = state.v[name] / (1.0 - b2**state.step)
        tensor.data -= lr * mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay:
            tensor.data -= lr * state.weight_decay * tensor.data
    return params


def save_checkpoint(prefix, params: ModelParams, meta: dict) -> None:
    """JSON manifest + one little-endian f64 blob, parameters in manifest order."""
    prefix = Path(prefix)
    manifest = {
        "format": "latticecls-checkpoint-v1",
        "meta": meta,
        "parameters": [
            {"name": name, "shape": list(t.data.shape)} for name, t in params.items()
        ],
    }
    blob = b"".join(t.data.astype("<f8").tobytes() for _, t in params.items())
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")
    prefix.with_suffix(".bin").write_bytes(blob)


def load_checkpoint(prefix):
    """Returns (values dict, meta dict) from a saved checkpoint pair."""
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    if manifest.get("format") != "latticecls-checkpoint-v1":
        raise ValueError(f"{prefix}: not a recognized checkpoint manifest")
    blob = prefix.with_suffix(".bin").read_bytes()
    values = {}
    offset = 0
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        values[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise ValueError(f"{prefix}: checkpoint blob size does not match manifest")
    return values, manifest["meta"]
