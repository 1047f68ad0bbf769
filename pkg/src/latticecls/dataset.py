"""Dataset container, synthetic generation, and on-disk layout."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import load_off, sample_surface
from .pointcloud import AugmentConfig, PointCloud, augment, load_xyz, normalize_unit_ball, save_xyz
from .seeds import derive
from .synth import SHAPE_KINDS, synth_shape


@dataclass
class Dataset:
    train: list
    test: list
    class_names: list

    def __post_init__(self):
        n = len(self.class_names)
        for split in (self.train, self.test):
            for pc in split:
                if pc.label is None or not 0 <= pc.label < n:
                    raise ValueError(f"cloud label {pc.label} outside [0, {n})")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def generate_synthetic(
    seed: int,
    classes=SHAPE_KINDS,
    train_per_class: int = 100,
    test_per_class: int = 20,
    points: int = 1024,
    jitter_sigma: float = 0.02,
    rotate: bool = True,
) -> Dataset:
    """Desk-scale synthetic dataset of analytic shapes.

    Each cloud gets its own derived seed, so generation is reproducible and
    may be parallelized per cloud. Per-cloud z-axis rotations (on by
    default) provide the intra-class variation that makes the class
    boundaries non-trivial.
    """
    rot_cfg = AugmentConfig(rotate=True)

    def make(split, kind, index):
        pc = synth_shape(kind, points,
                         seed=derive(seed, f"data.{split}.{kind}.{index}"),
                         jitter_sigma=jitter_sigma)
        pc = PointCloud(pc.points, label=classes.index(kind))
        if rotate:
            pc = augment(pc, rot_cfg, seed=derive(seed, f"data.{split}.{kind}.{index}.rot"))
        return pc

    train, test = [], []
    for kind in classes:
        for i in range(train_per_class):
            train.append(make("train", kind, i))
        for i in range(test_per_class):
            test.append(make("test", kind, i))
    return Dataset(train=train, test=test, class_names=list(classes))


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Write clouds as plain-text XYZ files plus a JSON manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    files = []
    for split, clouds in (("train", ds.train), ("test", ds.test)):
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for i, pc in enumerate(clouds):
            name = f"{i:04d}_{ds.class_names[pc.label]}.xyz"
            save_xyz(pc, split_dir / name)
            files.append({"path": f"{split}/{name}", "label": pc.label, "split": split})
    manifest = {"class_names": ds.class_names, "files": files}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_dataset(path) -> Dataset:
    """Load a dataset from its manifest path or containing directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    root = path.parent
    train, test = [], []
    for entry in manifest["files"]:
        pc = load_xyz(root / entry["path"])
        pc = PointCloud(pc.points, label=entry["label"])
        (train if entry["split"] == "train" else test).append(pc)
    return Dataset(train=train, test=test, class_names=manifest["class_names"])


def load_modelnet_dir(root, points: int = 1024, seed: int = 0, classes=None) -> Dataset:
    """Ingest a ModelNet-style directory: <class>/<split>/<name>.off.

    Meshes are surface-sampled (area-weighted) and unit-ball normalized;
    per-file sampling seeds derive from the file's relative path.
    """
    root = Path(root)
    found = sorted(d.name for d in root.iterdir() if d.is_dir())
    if classes is not None:
        found = [c for c in found if c in classes]
    if not found:
        raise ValueError(f"no class directories under {root}")
    train, test = [], []
    for label, cls in enumerate(found):
        for split, bucket in (("train", train), ("test", test)):
            split_dir = root / cls / split
            if not split_dir.is_dir():
                continue
            for off_path in sorted(split_dir.glob("*.off")):
                rel = off_path.relative_to(root).as_posix()
                mesh = load_off(off_path)
                pc = sample_surface(mesh, points, seed=derive(seed, f"modelnet.{rel}"))
                pc = normalize_unit_ball(pc)
                bucket.append(PointCloud(pc.points, label=label))
    return Dataset(train=train, test=test, class_names=found)
