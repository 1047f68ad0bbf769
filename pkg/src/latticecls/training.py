"""Training loops for the lattice-image CNN and the point baseline."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import Dataset
from .lattice import LatticeConfig, encode_image
from .models import AdamState, ModelParams, adam_step, build_lpc_backbone, build_point_baseline
from .pointcloud import AugmentConfig, augment
from .seeds import derive


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 25
    lr: float = 1e-3
    dropout: float = 0.3
    seed: int = 0
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.7
    lr_decay_every: int = 20
    width: int = 1
    augment: AugmentConfig | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def encode_dataset(clouds, cfg: LatticeConfig) -> np.ndarray:
    """Stack lattice images of the clouds into a (N, 1, H, W) array."""
    return np.stack([encode_image(pc, cfg).grid[None, :, :] for pc in clouds])


def stack_points(clouds) -> np.ndarray:
    counts = {len(pc) for pc in clouds}
    if len(counts) != 1:
        raise ValueError(f"clouds must share one point count for batching, got {sorted(counts)}")
    return np.stack([pc.points for pc in clouds])


def labels_of(clouds) -> np.ndarray:
    return np.array([pc.label for pc in clouds], dtype=np.int64)


def _batched_logits(params, forward, inputs: np.ndarray, batch: int = 64) -> np.ndarray:
    chunks = []
    for lo in range(0, len(inputs), batch):
        out = forward(params, Tensor(inputs[lo : lo + batch]), train=False)
        chunks.append(out.data)
    return np.concatenate(chunks, axis=0)


def accuracy(params, forward, inputs: np.ndarray, labels: np.ndarray) -> float:
    logits = _batched_logits(params, forward, inputs)
    return float((logits.argmax(axis=1) == labels).mean())


def mean_loss(params, forward, inputs: np.ndarray, labels: np.ndarray, batch: int = 64) -> float:
    total = 0.0
    for lo in range(0, len(inputs), batch):
        out = forward(params, Tensor(inputs[lo : lo + batch]), train=False)
        loss = ad.softmax_cross_entropy(out, labels[lo : lo + batch])
        total += float(loss.data) * len(out.data)
    return total / len(inputs)


def write_loss_csv(history, path) -> None:
    lines = ["epoch,train_loss,test_accuracy"]
    for epoch, loss, acc in history:
        lines.append(f"{epoch},{loss!r},{acc!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _train_loop(params: ModelParams, forward, train_provider, test_x, test_y,
                cfg: TrainConfig, log_path=None):
    """Shared epoch loop; ``train_provider(epoch)`` supplies (inputs, labels).

    The returned history has exactly epochs+1 rows, the first describing the
    untrained model. Aborts on a non-finite loss, naming the epoch.
    """
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay,
                      decay_factor=cfg.lr_decay_factor, decay_every=cfg.lr_decay_every)
    train_x, train_y = train_provider(0)
    history = [(0, mean_loss(params, forward, train_x, train_y),
                accuracy(params, forward, test_x, test_y))]
    for epoch in range(1, cfg.epochs + 1):
        state.epoch = epoch - 1
        train_x, train_y = train_provider(epoch)
        order = np.random.default_rng(derive(cfg.seed, f"shuffle.{epoch}")).permutation(len(train_x))
        drop_rng = np.random.default_rng(derive(cfg.seed, f"dropout.{epoch}"))
        batch_losses = []
        for lo in range(0, len(train_x), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            logits = forward(params, Tensor(train_x[idx]), train=True, rng=drop_rng)
            loss = ad.softmax_cross_entropy(logits, train_y[idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            params.zero_grad()
            ad.backward(loss)
            adam_step(params, params.grads(), state)
            batch_losses.append(float(loss.data))
        history.append((epoch, float(np.mean(batch_losses)),
                        accuracy(params, forward, test_x, test_y)))
    if log_path is not None:
        write_loss_csv(history, log_path)
    return params, history


def _augmented(clouds, cfg: AugmentConfig, seed: int, epoch: int):
    return [augment(pc, cfg, derive(seed, f"augment.{epoch}.{i}"))
            for i, pc in enumerate(clouds)]


def train_lpc(ds: Dataset, lattice_cfg: LatticeConfig, cfg: TrainConfig, log_path=None):
    """Train the lattice-image CNN; returns (params, forward, history)."""
    params, forward = build_lpc_backbone(
        lattice_cfg.image_h, ds.n_classes, width=cfg.width,
        seed=derive(cfg.seed, "init.lpc"), dropout=cfg.dropout)
    train_y = labels_of(ds.train)
    test_x = encode_dataset(ds.test, lattice_cfg)

    if cfg.augment is None:
        cached = encode_dataset(ds.train, lattice_cfg)

        def provider(epoch):
            return cached, train_y
    else:
        # Augmentation moves points, so train images are re-encoded per epoch.
        def provider(epoch):
            clouds = _augmented(ds.train, cfg.augment, cfg.seed, epoch)
            return encode_dataset(clouds, lattice_cfg), train_y

    params, history = _train_loop(params, forward, provider, test_x,
                                  labels_of(ds.test), cfg, log_path)
    return params, forward, history


def train_baseline(ds: Dataset, cfg: TrainConfig, log_path=None):
    """Train the point baseline; returns (params, forward, history)."""
    base_x = stack_points(ds.train)
    train_y = labels_of(ds.train)
    params, forward = build_point_baseline(
        base_x.shape[1], ds.n_classes, seed=derive(cfg.seed, "init.baseline"))

    if cfg.augment is None:
        def provider(epoch):
            return base_x, train_y
    else:
        def provider(epoch):
            if cfg.augment.drop_prob > 0.0:
                raise ValueError("point dropping breaks fixed-size batching for the baseline")
            return stack_points(_augmented(ds.train, cfg.augment, cfg.seed, epoch)), train_y

    params, history = _train_loop(params, forward, provider, stack_points(ds.test),
                                  labels_of(ds.test), cfg, log_path)
    return params, forward, history
