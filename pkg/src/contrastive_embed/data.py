"""Datasets: CIFAR-10/100 binary distributions, a seeded synthetic shape dataset, batching."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import numpy.typing as npt
from matplotlib.colors import hsv_to_rgb

from .exceptions import (
    DatasetError,
    DatasetFileMissingError,
    DatasetSizeError,
    LabelRangeError,
    ValidationError,
)
from .models import Cifar10Source, Cifar100Source, DatasetSource, SynthConfig
from .numeric import RandomStream

logger = logging.getLogger(__name__)

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE
CIFAR10_RECORD = 1 + CIFAR_PIXELS
CIFAR100_RECORD = 2 + CIFAR_PIXELS
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILE = "test_batch.bin"

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)  # fmt: skip

# epoch permutations live in their own stream family, away from augmentation streams
_BATCH_STREAM = 0xBA7C


@dataclass(frozen=True)
class LabeledDataset:
    images: npt.NDArray[np.uint8]
    fine_labels: npt.NDArray[np.int64]
    class_names: list[str]
    is_train: npt.NDArray[np.bool_]
    coarse_labels: Optional[npt.NDArray[np.int64]] = None
    coarse_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.images)
        if self.images.ndim != 4 or self.images.shape[1] != 3 or self.images.dtype != np.uint8:
            raise ValidationError(f"images must be uint8 (n, 3, H, W), got {self.images.shape}")
        lengths = [len(self.fine_labels), len(self.is_train)]
        if self.coarse_labels is not None:
            lengths.append(len(self.coarse_labels))
        if any(length != n for length in lengths):
            raise ValidationError("labels, split flags and images must have the same length")
        if n and int(self.fine_labels.max()) >= len(self.class_names):
            raise ValidationError("fine label exceeds the number of class names")

    @property
    def n(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def labels(self, level: Literal["fine", "coarse"] = "fine") -> npt.NDArray[np.int64]:
        if level == "coarse":
            if self.coarse_labels is None:
                raise ValidationError("dataset has no coarse labels")
            return self.coarse_labels
        return self.fine_labels

    def names(self, level: Literal["fine", "coarse"] = "fine") -> list[str]:
        return self.coarse_names if level == "coarse" else self.class_names

    def subset(self, mask: npt.ArrayLike) -> LabeledDataset:
        sel = np.asarray(mask)
        return LabeledDataset(
            images=self.images[sel],
            fine_labels=self.fine_labels[sel],
            class_names=self.class_names,
            is_train=self.is_train[sel],
            coarse_labels=None if self.coarse_labels is None else self.coarse_labels[sel],
            coarse_names=self.coarse_names,
        )

    def train(self) -> LabeledDataset:
        return self.subset(self.is_train)

    def test(self) -> LabeledDataset:
        return self.subset(~self.is_train)


# --- CIFAR binaries ------------------------------------------------------------------------


def parse_cifar10_records(raw: bytes) -> tuple[npt.NDArray[np.uint8], npt.NDArray[np.int64]]:
    """Split ``1 label byte + 3072 pixel bytes`` records into images and labels."""
    if len(raw) % CIFAR10_RECORD:
        raise DatasetError(f"buffer of {len(raw)} bytes is not a whole number of records")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR10_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise LabelRangeError("fine", int(labels[bad[0]]), 10, int(bad[0]))
    images = rec[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).copy()
    return images, labels


def parse_cifar100_records(
    raw: bytes,
) -> tuple[npt.NDArray[np.uint8], npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    """Split ``coarse byte + fine byte + 3072 pixel bytes`` records."""
    if len(raw) % CIFAR100_RECORD:
        raise DatasetError(f"buffer of {len(raw)} bytes is not a whole number of records")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR100_RECORD)
    coarse = rec[:, 0].astype(np.int64)
    fine = rec[:, 1].astype(np.int64)
    for name, values, limit in (("coarse", coarse, 20), ("fine", fine, 100)):
        bad = np.flatnonzero(values >= limit)
        if bad.size:
            raise LabelRangeError(name, int(values[bad[0]]), limit, int(bad[0]))
    images = rec[:, 2:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).copy()
    return images, fine, coarse


def encode_cifar10_records(images: npt.NDArray[np.uint8], labels: Sequence[int]) -> bytes:
    rec = np.empty((len(images), CIFAR10_RECORD), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = np.asarray(images, dtype=np.uint8).reshape(len(images), -1)
    return rec.tobytes()


def encode_cifar100_records(
    images: npt.NDArray[np.uint8], fine: Sequence[int], coarse: Sequence[int]
) -> bytes:
    rec = np.empty((len(images), CIFAR100_RECORD), dtype=np.uint8)
    rec[:, 0] = coarse
    rec[:, 1] = fine
    rec[:, 2:] = np.asarray(images, dtype=np.uint8).reshape(len(images), -1)
    return rec.tobytes()


def _read_exact(path: Path, expected: int) -> bytes:
    if not path.is_file():
        raise DatasetFileMissingError(path)
    size = path.stat().st_size
    if size != expected:
        raise DatasetSizeError(path, expected, size)
    return path.read_bytes()


def _resolve_dir(directory: Path, probe: str, nested: str) -> Path:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetFileMissingError(directory)
    if not (directory / probe).exists() and (directory / nested / probe).exists():
        return directory / nested
    return directory


def _read_names(path: Path, fallback: Sequence[str]) -> list[str]:
    if path.is_file():
        names = [line.strip() for line in path.read_text().splitlines() if line.strip()]
        if len(names) == len(fallback):
            return names
    return list(fallback)


def load_cifar10(directory: Path, *, records_per_file: int = 10_000) -> LabeledDataset:
    directory = _resolve_dir(directory, CIFAR10_TEST_FILE, "cifar-10-batches-bin")
    images, labels, train = [], [], []
    for name in (*CIFAR10_TRAIN_FILES, CIFAR10_TEST_FILE):
        raw = _read_exact(directory / name, records_per_file * CIFAR10_RECORD)
        imgs, labs = parse_cifar10_records(raw)
        images.append(imgs)
        labels.append(labs)
        train.append(np.full(len(labs), name != CIFAR10_TEST_FILE))
    dataset = LabeledDataset(
        images=np.concatenate(images),
        fine_labels=np.concatenate(labels),
        class_names=_read_names(directory / "batches.meta.txt", CIFAR10_CLASSES),
        is_train=np.concatenate(train),
    )
    logger.info("loaded CIFAR-10 from %s: %d images", directory, dataset.n)
    return dataset


def load_cifar100(
    directory: Path, *, train_records: int = 50_000, test_records: int = 10_000
) -> LabeledDataset:
    directory = _resolve_dir(directory, "test.bin", "cifar-100-binary")
    parts = []
    for name, count in (("train.bin", train_records), ("test.bin", test_records)):
        raw = _read_exact(directory / name, count * CIFAR100_RECORD)
        parts.append((*parse_cifar100_records(raw), name == "train.bin"))
    dataset = LabeledDataset(
        images=np.concatenate([p[0] for p in parts]),
        fine_labels=np.concatenate([p[1] for p in parts]),
        coarse_labels=np.concatenate([p[2] for p in parts]),
        is_train=np.concatenate([np.full(len(p[1]), p[3]) for p in parts]),
        class_names=_read_names(
            directory / "fine_label_names.txt", [f"class_{i}" for i in range(100)]
        ),
        coarse_names=_read_names(
            directory / "coarse_label_names.txt", [f"superclass_{i}" for i in range(20)]
        ),
    )
    logger.info("loaded CIFAR-100 from %s: %d images", directory, dataset.n)
    return dataset


# --- synthetic shapes ----------------------------------------------------------------------

SHAPE_TABLE: tuple[tuple[str, float], ...] = (
    ("disk", 0.0),
    ("square", 0.33),
    ("cross", 0.66),
    ("ring", 0.16),
    ("stripes", 0.83),
)
_BACKGROUND = 0.15


def _shape_mask(
    shape: str, side: int, cy: float, cx: float, r: float, phase: float
) -> npt.NDArray[np.bool_]:
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    dy, dx = yy - cy, xx - cx
    dist = np.hypot(dy, dx)
    if shape == "disk":
        return dist <= r
    if shape == "square":
        return np.maximum(np.abs(dy), np.abs(dx)) <= 0.85 * r
    if shape == "cross":
        arm = 0.3 * r
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    if shape == "ring":
        return (dist >= 0.55 * r) & (dist <= r)
    period = max(2, side // 4)
    return ((yy + phase) // (period / 2)) % 2 == 0


def generate_synthetic(cfg: SynthConfig, seed: int) -> LabeledDataset:
    """Coloured shape images whose class fixes a (shape, hue) pair.

    Position, size and stripe phase are jittered per image and pixel noise is added, all
    drawn from streams derived from ``seed``.
    """
    side = cfg.side
    n = cfg.classes * cfg.per_class
    images = np.empty((n, 3, side, side), dtype=np.uint8)
    labels = np.repeat(np.arange(cfg.classes, dtype=np.int64), cfg.per_class)
    is_train = np.zeros(n, dtype=bool)
    n_train = int(round(cfg.per_class * (1.0 - cfg.test_fraction)))
    names = []
    root = RandomStream(seed)

    for c in range(cfg.classes):
        shape, base_hue = SHAPE_TABLE[c % len(SHAPE_TABLE)]
        hue = (base_hue + 0.1 * (c // len(SHAPE_TABLE))) % 1.0
        names.append(shape if c < len(SHAPE_TABLE) else f"{shape}_{c // len(SHAPE_TABLE)}")
        colour = hsv_to_rgb(np.array([hue, 0.8, 0.9]))[:, None, None]
        gen = root.child(c).generator()
        for j in range(cfg.per_class):
            u = gen.uniform(-1.0, 1.0, size=4) * cfg.jitter
            cy = side / 2 + u[0] * side / 8
            cx = side / 2 + u[1] * side / 8
            r = side * 0.3 * (1.0 + 0.2 * u[2])
            mask = _shape_mask(shape, side, cy, cx, r, phase=u[3] * side / 8)
            img = np.where(mask[None], colour, _BACKGROUND)
            if cfg.noise > 0:
                img = img + gen.normal(0.0, cfg.noise, size=img.shape)
            i = c * cfg.per_class + j
            images[i] = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
            is_train[i] = j < n_train

    logger.debug("generated synthetic dataset: %d classes x %d images", cfg.classes, cfg.per_class)
    return LabeledDataset(images=images, fine_labels=labels, class_names=names, is_train=is_train)


# --- batching ------------------------------------------------------------------------------


def epoch_batches(n: int, b: int, seed: int, epoch: int) -> list[npt.NDArray[np.int64]]:
    """Drop-last mini-batches of a permutation of ``range(n)`` fixed by ``(seed, epoch)``."""
    if b < 2:
        raise ValidationError(f"batch size must be >= 2, got {b}")
    if b > n:
        raise ValidationError(f"batch size {b} exceeds dataset size {n}")
    perm = RandomStream(seed).child(_BATCH_STREAM, epoch).generator().permutation(n)
    full = n // b
    return [perm[i * b : (i + 1) * b] for i in range(full)]


def load_dataset(source: DatasetSource) -> LabeledDataset:
    if isinstance(source, Cifar10Source):
        return load_cifar10(source.path)
    if isinstance(source, Cifar100Source):
        return load_cifar100(source.path)
    return generate_synthetic(source.config, source.seed)
