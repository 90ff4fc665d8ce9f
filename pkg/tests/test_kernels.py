from __future__ import annotations

import math

import numpy as np
import pytest

from contrastive_embed.exceptions import ValidationError
from contrastive_embed.kernels import (
    PairedEmbedding,
    cosine_sim_matrix,
    infonce_grad,
    infonce_loss,
    infonce_loss_and_grad,
    loss_lower_bound,
    pairwise_sq_dists,
)
from contrastive_embed.models import KernelSpec

KERNELS = [KernelSpec.cauchy(), KernelSpec.gaussian(0.5), KernelSpec.cosine(0.5)]


def _random_rotation(gen: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(gen.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def _finite_difference(pe: PairedEmbedding, k: KernelSpec, h: float = 1e-5) -> np.ndarray:
    def loss(z: np.ndarray) -> float:
        return infonce_loss(PairedEmbedding(z), k)

    grad = np.zeros_like(pe.z)
    for idx in np.ndindex(*pe.z.shape):
        plus, minus = pe.z.copy(), pe.z.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (loss(plus) - loss(minus)) / (2 * h)
    return grad


def test_paired_embedding_validation() -> None:
    with pytest.raises(ValidationError, match="even row count"):
        PairedEmbedding(np.zeros((3, 2)))
    with pytest.raises(ValidationError, match="NaN"):
        PairedEmbedding(np.array([[np.nan, 0.0], [1.0, 1.0]]))
    pe = PairedEmbedding.from_views(np.zeros((2, 2)), np.ones((2, 2)))
    np.testing.assert_array_equal(pe.z[:, 0], [0, 1, 0, 1])
    np.testing.assert_array_equal(pe.partners, [1, 0, 3, 2])
    assert pe.batch_size == 2


def test_distances_and_cosine_matrix_are_symmetric() -> None:
    z = np.random.default_rng(0).normal(size=(6, 3))
    d = pairwise_sq_dists(z)
    np.testing.assert_array_equal(d, d.T)
    np.testing.assert_array_equal(np.diag(d), 0.0)
    c = cosine_sim_matrix(z)
    assert np.all(np.abs(c) <= 1.0)
    np.testing.assert_array_equal(np.diag(c), 1.0)


def test_cosine_rejects_zero_rows() -> None:
    z = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValidationError, match="row 1"):
        infonce_loss(PairedEmbedding(z), KernelSpec.cosine())


def test_single_pair_has_zero_loss() -> None:
    z = np.array([[0.0, 0.0], [3.0, 4.0]])
    for k in KERNELS:
        assert infonce_loss(PairedEmbedding(z), k) == pytest.approx(0.0, abs=1e-12)


def test_hand_evaluated_losses() -> None:
    cauchy = PairedEmbedding(np.array([[0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [10.0, 0.0]]))
    # positive at distance 0, two negatives at distance 10
    assert infonce_loss(cauchy, KernelSpec.cauchy()) == pytest.approx(
        math.log(1 + 2 / 101), abs=1e-12
    )
    assert infonce_loss(cauchy, KernelSpec.cauchy()) == pytest.approx(0.0196, abs=1e-4)

    cosine = PairedEmbedding(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]))
    assert infonce_loss(cosine, KernelSpec.cosine(0.5)) == pytest.approx(
        -2 + math.log(math.e**2 + 2), abs=1e-12
    )
    assert infonce_loss(cosine, KernelSpec.cosine(0.5)) == pytest.approx(0.2395448, abs=1e-6)


def test_pairwise_distances_on_a_large_batch() -> None:
    z = np.random.default_rng(8).normal(size=(2048, 128))
    d = pairwise_sq_dists(z)
    assert d.shape == (2048, 2048)
    np.testing.assert_array_equal(d, d.T)
    np.testing.assert_array_equal(np.diag(d), 0.0)
    rows = [0, 17, 2047]
    explicit = ((z[rows, None, :] - z[None, :, :]) ** 2).sum(axis=-1)
    np.testing.assert_allclose(d[rows], explicit, rtol=1e-12)
    np.testing.assert_array_equal(
        pairwise_sq_dists(np.array([[0.0, 0.0], [3.0, 4.0]])), [[0.0, 25.0], [25.0, 0.0]]
    )


def test_cosine_loss_equals_gaussian_loss_on_normalised_rows() -> None:
    gen = np.random.default_rng(1)
    for _ in range(100):
        b = int(gen.choice([2, 4, 8]))
        d = int(gen.choice([2, 16, 128]))
        tau = float(gen.choice([0.1, 0.5, 1.0]))
        z = gen.normal(size=(2 * b, d))
        unit = z / np.linalg.norm(z, axis=1, keepdims=True)
        cos = infonce_loss(PairedEmbedding(z), KernelSpec.cosine(tau))
        gauss = infonce_loss(PairedEmbedding(unit), KernelSpec.gaussian(tau))
        assert cos == pytest.approx(gauss, abs=1e-10)


def test_lower_bound_value_and_validity() -> None:
    assert 3.64 <= loss_lower_bound(1024, 0.5) <= 3.66
    assert loss_lower_bound(1, 0.5) == 0.0
    with pytest.raises(ValidationError):
        loss_lower_bound(0, 0.5)
    gen = np.random.default_rng(2)
    for _ in range(1000):
        b = int(gen.integers(1, 9))
        tau = float(gen.uniform(0.1, 1.0))
        z = gen.normal(size=(2 * b, int(gen.integers(2, 5))))
        loss = infonce_loss(PairedEmbedding(z), KernelSpec.cosine(tau))
        assert loss >= loss_lower_bound(b, tau) - 1e-12


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
def test_gradient_matches_finite_differences(kernel: KernelSpec) -> None:
    gen = np.random.default_rng(3)
    for _ in range(100):
        b = int(gen.choice([2, 4, 8]))
        d = int(gen.choice([2, 3, 16]))
        pe = PairedEmbedding(gen.normal(size=(2 * b, d)))
        analytic = infonce_grad(pe, kernel)
        numeric = _finite_difference(pe, kernel)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-8)
        assert np.linalg.norm(analytic - numeric) / scale < 1e-6


def test_cauchy_loss_is_invariant_under_rigid_motions() -> None:
    gen = np.random.default_rng(4)
    for _ in range(20):
        z = gen.normal(size=(8, 2))
        moved = z @ _random_rotation(gen, 2).T + gen.normal(size=2)
        k = KernelSpec.cauchy()
        assert infonce_loss(PairedEmbedding(moved), k) == pytest.approx(
            infonce_loss(PairedEmbedding(z), k), abs=1e-10
        )


def test_cosine_loss_is_invariant_under_positive_row_scaling() -> None:
    gen = np.random.default_rng(5)
    z = gen.normal(size=(8, 5))
    scaled = z * gen.uniform(0.1, 10.0, size=(8, 1))
    k = KernelSpec.cosine(0.5)
    assert infonce_loss(PairedEmbedding(scaled), k) == pytest.approx(
        infonce_loss(PairedEmbedding(z), k), abs=1e-10
    )


@pytest.mark.parametrize("kernel", KERNELS[:2], ids=lambda k: k.kind)
def test_distance_kernel_gradients_sum_to_zero(kernel: KernelSpec) -> None:
    z = np.random.default_rng(6).normal(size=(10, 3))
    _, grad = infonce_loss_and_grad(PairedEmbedding(z), kernel)
    np.testing.assert_allclose(grad.sum(axis=0), 0.0, atol=1e-10)


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
def test_swapping_views_leaves_loss_unchanged(kernel: KernelSpec) -> None:
    z = np.random.default_rng(7).normal(size=(8, 3))
    swapped = z[np.arange(8) ^ 1]
    assert infonce_loss(PairedEmbedding(swapped), kernel) == pytest.approx(
        infonce_loss(PairedEmbedding(z), kernel), abs=1e-12
    )


def test_kernel_spec_validation() -> None:
    with pytest.raises(ValueError):
        KernelSpec(kind="cauchy", tau=0.5)
    with pytest.raises(ValueError):
        KernelSpec(kind="cosine")
    with pytest.raises(ValueError):
        KernelSpec(kind="gaussian", tau=0.0)
