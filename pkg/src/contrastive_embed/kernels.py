"""Similarity kernels and the paired InfoNCE losses with their analytic gradients.

Rows ``2m`` and ``2m + 1`` of a :class:`PairedEmbedding` are the two views of source
image ``m``. For anchor ``i`` with partner ``p(i)`` the loss term is

    -log s(i, p(i)) + log sum_{k != i} s(i, k)

where ``s`` is ``exp(cos/tau)`` (cosine), ``exp(-d^2 / (2 tau))`` (gaussian) or
``1 / (1 + d^2)`` (cauchy). The batch loss is the mean over all ``2b`` anchors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax

from .exceptions import ValidationError
from .models import KernelSpec
from .numeric import Matrix


@dataclass(frozen=True)
class PairedEmbedding:
    z: Matrix

    def __post_init__(self) -> None:
        z = np.asarray(self.z)
        if z.ndim != 2:
            raise ValidationError(f"embedding must be 2-D, got shape {z.shape}")
        if z.shape[0] < 2 or z.shape[0] % 2:
            raise ValidationError(f"embedding needs an even row count >= 2, got {z.shape[0]}")
        if not np.all(np.isfinite(z)):
            raise ValidationError("embedding contains NaN or infinite entries")
        object.__setattr__(self, "z", z)

    @classmethod
    def from_views(cls, view_a: Matrix, view_b: Matrix) -> PairedEmbedding:
        """Interleave two aligned view matrices into the paired row layout."""
        a, b = np.asarray(view_a), np.asarray(view_b)
        if a.shape != b.shape:
            raise ValidationError(f"view shapes differ: {a.shape} vs {b.shape}")
        z = np.empty((2 * a.shape[0], *a.shape[1:]), dtype=np.result_type(a, b))
        z[0::2] = a
        z[1::2] = b
        return cls(z)

    @property
    def batch_size(self) -> int:
        return self.z.shape[0] // 2

    @property
    def partners(self) -> np.ndarray:
        return np.arange(self.z.shape[0]) ^ 1


def pairwise_sq_dists(z: Matrix) -> Matrix:
    z = np.asarray(z)
    # per-pair sums of squared differences: exact zero diagonal, exact symmetry
    return cdist(z, z, "sqeuclidean").astype(z.dtype, copy=False)


def _row_norms(z: Matrix) -> np.ndarray:
    norms = np.linalg.norm(z, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"row {int(zero[0])} has zero norm; cosine similarity undefined")
    return norms


def cosine_sim_matrix(z: Matrix) -> Matrix:
    z = np.asarray(z)
    unit = z / _row_norms(z)[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def _logits(z: Matrix, k: KernelSpec) -> tuple[Matrix, Matrix]:
    """Log-similarities with the diagonal masked out, plus the matrix they came from."""
    if k.kind == "cosine":
        base = cosine_sim_matrix(z)
        logits = base / k.tau
    elif k.kind == "gaussian":
        base = pairwise_sq_dists(z)
        logits = -base / (2.0 * k.tau)  # type: ignore[operator]
    else:
        base = pairwise_sq_dists(z)
        logits = -np.log1p(base)
    np.fill_diagonal(logits, -np.inf)
    return logits, base


def _loss_from_logits(logits: Matrix, partners: np.ndarray) -> float:
    rows = np.arange(logits.shape[0])
    per_anchor = logsumexp(logits, axis=1) - logits[rows, partners]
    return float(np.mean(per_anchor))


def infonce_loss(pe: PairedEmbedding, k: KernelSpec) -> float:
    logits, _ = _logits(pe.z, k)
    return _loss_from_logits(logits, pe.partners)


def infonce_loss_and_grad(pe: PairedEmbedding, k: KernelSpec) -> tuple[float, Matrix]:
    z = pe.z
    n = z.shape[0]
    partners = pe.partners
    logits, base = _logits(z, k)
    loss = _loss_from_logits(logits, partners)

    # d loss / d logits: softmax over k != i minus the one-hot positive, averaged over anchors
    g = softmax(logits, axis=1)
    g[np.arange(n), partners] -= 1.0
    g /= n

    if k.kind == "cosine":
        norms = np.linalg.norm(z, axis=1)
        unit = z / norms[:, None]
        g_sim = g / k.tau  # type: ignore[operator]
        d_unit = (g_sim + g_sim.T) @ unit
        radial = np.sum(d_unit * unit, axis=1, keepdims=True)
        return loss, (d_unit - unit * radial) / norms[:, None]

    if k.kind == "gaussian":
        g_dist = -g / (2.0 * k.tau)  # type: ignore[operator]
    else:
        g_dist = -g / (1.0 + base)
    sym = g_dist + g_dist.T
    grad = 2.0 * (np.sum(sym, axis=1, keepdims=True) * z - sym @ z)
    return loss, grad


def infonce_grad(pe: PairedEmbedding, k: KernelSpec) -> Matrix:
    return infonce_loss_and_grad(pe, k)[1]


def loss_lower_bound(b: int, tau: float) -> float:
    """Smallest cosine InfoNCE value reachable with batch size ``b`` and temperature ``tau``."""
    if b < 1:
        raise ValidationError(f"batch size must be >= 1, got {b}")
    if not tau > 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    if b == 1:
        return 0.0
    inv = 1.0 / tau
    return float(-inv + np.logaddexp(inv, math.log(2 * b - 2) - inv))
