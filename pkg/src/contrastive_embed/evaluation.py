"""Embedding quality metrics: kNN in Z, linear probe in H, spectra, norm statistics, ARI."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import cdist
from scipy.special import softmax
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from .augment import augment_batch
from .data import LabeledDataset
from .encoder import EncoderParams, embed, forward
from .exceptions import ShapeError, ValidationError
from .kernels import PairedEmbedding, infonce_loss
from .models import AugmentPolicy, EvalOptions, EvalReport, KernelSpec
from .numeric import Matrix, RandomStream, sym_eig

logger = logging.getLogger(__name__)

Labels = npt.NDArray[np.int64]

KNN_SWEEP = range(1, 31)
COARSE_K = 15


def _check_split(z: Matrix, y: npt.ArrayLike, name: str) -> tuple[Matrix, Labels]:
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(y, dtype=np.int64)
    if z.ndim != 2:
        raise ShapeError(f"{name} embedding must be 2-D, got shape {z.shape}")
    if len(z) == 0:
        raise ValidationError(f"{name} set is empty")
    if len(labels) != len(z):
        raise ShapeError(f"{name}: {len(labels)} labels for {len(z)} rows")
    return z, labels


def _neighbour_order(
    z_train: Matrix, z_test: Matrix, k: int, chunk: int = 512
) -> npt.NDArray[Any]:
    """Indices of the ``k`` nearest train rows per test row; distance ties go to the lower index."""
    out = np.empty((len(z_test), k), dtype=np.int64)
    for start in range(0, len(z_test), chunk):
        block = z_test[start : start + chunk]
        dist = cdist(block, z_train, "sqeuclidean")
        out[start : start + chunk] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return out


def _vote(neighbour_labels: npt.NDArray[Any], n_classes: int) -> Labels:
    counts = np.zeros((len(neighbour_labels), n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(len(neighbour_labels)), neighbour_labels.shape[1])
    np.add.at(counts, (rows, neighbour_labels.ravel()), 1)
    # argmax returns the first maximum: smallest class index wins a tied vote
    return counts.argmax(axis=1)


def knn_accuracies(
    z_train: Matrix,
    y_train: npt.ArrayLike,
    z_test: Matrix,
    y_test: npt.ArrayLike,
    ks: Iterable[int],
) -> dict[int, float]:
    """Majority-vote kNN accuracy for every ``k`` in ``ks``, sharing one neighbour search."""
    z_train, y_train = _check_split(z_train, y_train, "train")
    z_test, y_test = _check_split(z_test, y_test, "test")
    if z_train.shape[1] != z_test.shape[1]:
        raise ShapeError(f"train dimension {z_train.shape[1]} != test dimension {z_test.shape[1]}")
    ks = sorted(set(ks))
    if not ks or ks[0] < 1:
        raise ValidationError("k must be >= 1")
    if ks[-1] > len(z_train):
        raise ValidationError(f"k={ks[-1]} exceeds the {len(z_train)} training rows")
    order = _neighbour_order(z_train, z_test, ks[-1])
    n_classes = int(max(y_train.max(), y_test.max())) + 1
    neighbour_labels = y_train[order]
    return {
        k: float(np.mean(_vote(neighbour_labels[:, :k], n_classes) == y_test)) for k in ks
    }


def knn_accuracy(
    z_train: Matrix, y_train: npt.ArrayLike, z_test: Matrix, y_test: npt.ArrayLike, k: int = 15
) -> float:
    return knn_accuracies(z_train, y_train, z_test, y_test, [k])[k]


def linear_probe(
    h_train: Matrix,
    y_train: npt.ArrayLike,
    h_test: Matrix,
    y_test: npt.ArrayLike,
    *,
    iterations: int = 500,
    step: float = 0.1,
    tol: float = 1e-6,
) -> float:
    """Test accuracy of unpenalised multinomial logistic regression fitted by gradient descent.

    Features are standardised with the training mean and standard deviation.
    """
    h_train, y_train = _check_split(h_train, y_train, "train")
    h_test, y_test = _check_split(h_test, y_test, "test")
    if h_train.shape[1] != h_test.shape[1]:
        raise ShapeError(f"train dimension {h_train.shape[1]} != test dimension {h_test.shape[1]}")
    classes, target = np.unique(y_train, return_inverse=True)
    if len(classes) < 2:
        raise ValidationError("linear probe needs at least two classes in the training labels")

    mean = h_train.mean(axis=0)
    std = h_train.std(axis=0)
    std[std == 0] = 1.0
    x = (h_train - mean) / std
    onehot = np.eye(len(classes))[target]
    w = np.zeros((x.shape[1], len(classes)))
    b = np.zeros(len(classes))
    n = len(x)
    for it in range(iterations):
        residual = (softmax(x @ w + b, axis=1) - onehot) / n
        gw, gb = x.T @ residual, residual.sum(axis=0)
        if max(float(np.abs(gw).max(initial=0.0)), float(np.abs(gb).max())) < tol:
            logger.debug("linear probe converged after %d iterations", it)
            break
        w -= step * gw
        b -= step * gb
    pred = classes[np.argmax(((h_test - mean) / std) @ w + b, axis=1)]
    return float(np.mean(pred == y_test))


def covariance_spectrum(z: Matrix) -> npt.NDArray[np.float64]:
    """Descending eigenvalues of the sample covariance (divisor ``n - 1``)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or len(z) < 2:
        raise ValidationError(f"covariance spectrum needs at least two rows, got shape {z.shape}")
    cov = np.atleast_2d(np.cov(z, rowvar=False, ddof=1))
    eigenvalues, _ = sym_eig(cov)
    return np.clip(eigenvalues, 0.0, None)


def class_norm_stats(z: Matrix, labels: npt.ArrayLike) -> dict[int, tuple[float, float, float]]:
    """25th/50th/75th percentiles of row norms, per class present in ``labels``."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) != len(z):
        raise ShapeError(f"{len(labels)} labels for {len(z)} rows")
    norms = np.linalg.norm(z, axis=1)
    stats = {}
    for c in np.unique(labels):
        q1, q2, q3 = np.percentile(norms[labels == c], [25, 50, 75])
        stats[int(c)] = (float(q1), float(q2), float(q3))
    return stats


def kmeans(z: Matrix, k: int, seed: int) -> Labels:
    """Lloyd's algorithm with k-means++ seeding; one initialisation, at most 100 iterations."""
    z = np.asarray(z, dtype=np.float64)
    if not 1 <= k <= len(z):
        raise ValidationError(f"k={k} must be between 1 and the number of rows ({len(z)})")
    state = RandomStream(seed).child(k).next_u64() % (1 << 32)
    model = KMeans(
        n_clusters=k, init="k-means++", n_init=1, max_iter=100, tol=1e-8, random_state=state
    )
    return model.fit_predict(z).astype(np.int64)


def adjusted_rand_index(a: npt.ArrayLike, b: npt.ArrayLike) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"partitions must be equal-length vectors, got {a.shape} and {b.shape}")
    return float(adjusted_rand_score(a, b))


def evaluation_loss(
    p: EncoderParams,
    dataset: LabeledDataset,
    kernel: KernelSpec,
    batch_size: int,
    seed: int,
    policy: Optional[AugmentPolicy] = None,
) -> float:
    """Mean InfoNCE over augmented drop-last batches of ``dataset`` in index order."""
    b = min(batch_size, dataset.n)
    if b < 2:
        raise ValidationError(f"need at least two images to compute a loss, got {dataset.n}")
    policy = policy or AugmentPolicy()
    rng = RandomStream(seed).child(0xE7A1)
    losses = []
    for start in range(0, dataset.n - b + 1, b):
        idx = np.arange(start, start + b)
        view_a, view_b = augment_batch(dataset.images, idx, policy, rng, 0, dtype=p.dtype)
        x = np.empty((2 * b, *view_a.shape[1:]), dtype=view_a.dtype)
        x[0::2], x[1::2] = view_a, view_b
        losses.append(infonce_loss(PairedEmbedding(forward(x, p).z), kernel))
    return float(np.mean(losses))


def evaluate(
    p: EncoderParams,
    dataset: LabeledDataset,
    options: Optional[EvalOptions] = None,
    policy: Optional[AugmentPolicy] = None,
) -> EvalReport:
    """Full metric suite: train split as reference, test split as queries."""
    options = options or EvalOptions()
    train, test = dataset.train(), dataset.test()
    if test.n < 2 or train.n == 0:
        logger.warning(
            "split has %d train / %d test images; evaluating on all %d images",
            train.n, test.n, dataset.n,
        )  # fmt: skip
        train = test = dataset
    level = options.label_level
    y_train, y_test = train.labels(level), test.labels(level)
    names = dataset.names(level)

    h_train, z_train = embed(p, train.images)
    h_test, z_test = embed(p, test.images)
    logger.info("evaluating on %d train / %d test images", train.n, test.n)

    ks = [k for k in KNN_SWEEP if k <= train.n] if options.knn_sweep else [options.k]
    knn = knn_accuracies(z_train, y_train, z_test, y_test, ks)
    coarse = None
    if dataset.coarse_labels is not None:
        coarse = knn_accuracy(
            z_train, train.labels("coarse"), z_test, test.labels("coarse"), min(COARSE_K, train.n)
        )

    norms = class_norm_stats(z_test, y_test)
    n_clusters = len(np.unique(y_test))
    report = EvalReport(
        knn_accuracy=knn,
        linear_accuracy=linear_probe(
            h_train,
            y_train,
            h_test,
            y_test,
            iterations=options.probe_iterations,
            step=options.probe_step,
        ),
        final_loss=evaluation_loss(
            p, test, options.kernel, options.batch_size, options.seed, policy
        ),
        spectrum=covariance_spectrum(z_test).tolist(),
        norm_quartiles={names[c] if c < len(names) else str(c): q for c, q in norms.items()},
        ari=adjusted_rand_index(y_test, kmeans(z_test, n_clusters, options.seed)),
        knn_accuracy_coarse=coarse,
        label_level=level,
        n_train=train.n,
        n_test=test.n,
    )
    logger.info(
        "kNN(k=%d) %.4f, linear %.4f, loss %.4f, ARI %.4f",
        ks[0], knn[ks[0]], report.linear_accuracy, report.final_loss, report.ari,
    )  # fmt: skip
    return report
