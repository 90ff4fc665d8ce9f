from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from contrastive_embed.data import (
    CIFAR10_RECORD,
    CIFAR10_TEST_FILE,
    CIFAR10_TRAIN_FILES,
    CIFAR100_RECORD,
    encode_cifar10_records,
    encode_cifar100_records,
    epoch_batches,
    generate_synthetic,
    load_cifar10,
    load_cifar100,
    parse_cifar10_records,
    parse_cifar100_records,
)
from contrastive_embed.exceptions import (
    DatasetFileMissingError,
    DatasetSizeError,
    LabelRangeError,
    ValidationError,
)
from contrastive_embed.models import SynthConfig


def _cifar10_record(label: int, last_pixel: int = 255) -> bytes:
    pixels = bytearray(3072)
    pixels[-1] = last_pixel
    return bytes([label]) + bytes(pixels)


def _write_cifar10(directory: Path, labels: list[int]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, label in zip((*CIFAR10_TRAIN_FILES, CIFAR10_TEST_FILE), labels):
        (directory / name).write_bytes(_cifar10_record(label))


def test_cifar10_record_layout() -> None:
    images, labels = parse_cifar10_records(_cifar10_record(3))
    assert labels.tolist() == [3]
    assert images.shape == (1, 3, 32, 32)
    assert images[0, 2, 31, 31] == 255
    assert int(images.sum()) == 255


def test_cifar_records_round_trip() -> None:
    gen = np.random.default_rng(0)
    raw10 = b"".join(_cifar10_record(int(c), int(p)) for c, p in gen.integers(0, 10, (4, 2)))
    assert encode_cifar10_records(*parse_cifar10_records(raw10)) == raw10

    rec = gen.integers(0, 256, size=(3, CIFAR100_RECORD), dtype=np.uint8)
    rec[:, 0] = [0, 7, 19]
    rec[:, 1] = [0, 42, 99]
    raw100 = rec.tobytes()
    images, fine, coarse = parse_cifar100_records(raw100)
    assert encode_cifar100_records(images, fine, coarse) == raw100


def test_cifar10_label_out_of_range() -> None:
    with pytest.raises(LabelRangeError, match="label 10 out of range"):
        parse_cifar10_records(_cifar10_record(1) + _cifar10_record(10))


def test_cifar100_record_fields_and_ranges() -> None:
    raw = bytes([7, 42]) + bytes(3072)
    images, fine, coarse = parse_cifar100_records(raw)
    assert (coarse[0], fine[0]) == (7, 42)
    with pytest.raises(LabelRangeError, match="coarse"):
        parse_cifar100_records(bytes([20, 0]) + bytes(3072))
    with pytest.raises(LabelRangeError, match="fine"):
        parse_cifar100_records(bytes([0, 100]) + bytes(3072))


def test_load_cifar10_from_crafted_files(tmp_path: Path) -> None:
    _write_cifar10(tmp_path, [0, 1, 2, 3, 4, 9])
    ds = load_cifar10(tmp_path, records_per_file=1)
    assert ds.n == 6
    assert ds.fine_labels.tolist() == [0, 1, 2, 3, 4, 9]
    assert ds.is_train.tolist() == [True] * 5 + [False]
    assert ds.class_names[3] == "cat"
    assert ds.test().n == 1


def test_load_cifar10_accepts_the_extracted_subdirectory(tmp_path: Path) -> None:
    _write_cifar10(tmp_path / "cifar-10-batches-bin", [1] * 6)
    assert load_cifar10(tmp_path, records_per_file=1).n == 6


def test_load_cifar10_size_and_missing_errors(tmp_path: Path) -> None:
    _write_cifar10(tmp_path, [0] * 6)
    with pytest.raises(DatasetSizeError, match="expected 30730000 bytes, got 3073") as info:
        load_cifar10(tmp_path)
    assert info.value.expected == 10_000 * CIFAR10_RECORD
    (tmp_path / CIFAR10_TEST_FILE).unlink()
    with pytest.raises(DatasetFileMissingError, match="test_batch.bin"):
        load_cifar10(tmp_path, records_per_file=1)
    with pytest.raises(DatasetFileMissingError):
        load_cifar10(tmp_path / "nope")


def test_load_cifar100_from_crafted_files(tmp_path: Path) -> None:
    (tmp_path / "train.bin").write_bytes((bytes([7, 42]) + bytes(3072)) * 2)
    (tmp_path / "test.bin").write_bytes(bytes([19, 99]) + bytes(3072))
    ds = load_cifar100(tmp_path, train_records=2, test_records=1)
    assert ds.n == 3
    assert ds.coarse_labels is not None
    assert ds.coarse_labels.tolist() == [7, 7, 19]
    assert ds.fine_labels.tolist() == [42, 42, 99]
    assert ds.labels("coarse").tolist() == [7, 7, 19]
    assert len(ds.names("coarse")) == 20


def test_synthetic_dataset_is_deterministic() -> None:
    cfg = SynthConfig(classes=4, per_class=10, side=8)
    a = generate_synthetic(cfg, seed=3)
    b = generate_synthetic(cfg, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.fine_labels, b.fine_labels)
    c = generate_synthetic(cfg, seed=4)
    assert not np.array_equal(a.images, c.images)


def test_synthetic_split_and_shapes() -> None:
    ds = generate_synthetic(SynthConfig(classes=5, per_class=10, side=16), seed=0)
    assert ds.images.shape == (50, 3, 16, 16)
    assert ds.train().n == 40
    assert ds.test().n == 10
    assert sorted(set(ds.test().fine_labels.tolist())) == [0, 1, 2, 3, 4]
    assert ds.class_names == ["disk", "square", "cross", "ring", "stripes"]


def test_synthetic_without_noise_or_jitter_is_constant_per_class() -> None:
    ds = generate_synthetic(SynthConfig(classes=5, per_class=4, noise=0.0, jitter=0.0), seed=1)
    for c in range(5):
        imgs = ds.images[ds.fine_labels == c]
        assert all(np.array_equal(imgs[0], img) for img in imgs)
    assert not np.array_equal(ds.images[0], ds.images[4])


def test_synthetic_classes_are_separated() -> None:
    ds = generate_synthetic(SynthConfig(per_class=60), seed=0)
    x = ds.images.reshape(ds.n, -1).astype(np.float64)
    means = np.stack([x[ds.fine_labels == c].mean(axis=0) for c in range(5)])
    between = np.mean(
        [np.linalg.norm(means[i] - means[j]) for i in range(5) for j in range(i + 1, 5)]
    )
    within = np.mean(
        [np.linalg.norm(x[i] - means[ds.fine_labels[i]]) for i in range(ds.n)]
    )
    assert between > within


def test_epoch_batches_partition() -> None:
    batches = epoch_batches(10, 5, seed=0, epoch=0)
    assert len(batches) == 2
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))


def test_epoch_batches_change_with_epoch() -> None:
    a = np.concatenate(epoch_batches(50, 10, seed=0, epoch=0))
    b = np.concatenate(epoch_batches(50, 10, seed=0, epoch=1))
    assert not np.array_equal(a, b)
    assert sorted(a.tolist()) == sorted(b.tolist())
    np.testing.assert_array_equal(a, np.concatenate(epoch_batches(50, 10, seed=0, epoch=0)))


def test_epoch_batches_drop_last() -> None:
    batches = epoch_batches(10, 4, seed=1, epoch=0)
    assert [len(b) for b in batches] == [4, 4]
    used = np.concatenate(batches)
    assert len(set(used.tolist())) == 8


def test_epoch_batches_validation() -> None:
    with pytest.raises(ValidationError, match="exceeds"):
        epoch_batches(3, 4, seed=0, epoch=0)
    with pytest.raises(ValidationError):
        epoch_batches(10, 1, seed=0, epoch=0)
