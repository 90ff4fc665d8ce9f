"""Dense linear algebra helpers and the splitmix64 random stream shared by every module."""

from __future__ import annotations

from typing import Literal

import numpy as np
import numpy.typing as npt
from typing_extensions import TypeAlias

from .exceptions import ShapeError, ValidationError

Matrix: TypeAlias = npt.NDArray[np.floating]

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply matrices of shape {a.shape} and {b.shape}")
    return a @ b


def sym_eig(
    m: Matrix,
    tol: float = 1e-10,
    *,
    method: Literal["eigh", "jacobi"] = "eigh",
    max_sweeps: int = 100,
) -> tuple[npt.NDArray[np.float64], Matrix]:
    """Eigen-decomposition of a symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal eigenvectors as
    columns. ``method="jacobi"`` runs cyclic Jacobi rotations until the off-diagonal
    Frobenius norm drops below ``tol``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > tol * scale:
        raise ValidationError(f"matrix is not symmetric (max |m - m.T| = {asym:.3e})")

    if method == "jacobi":
        w, v = _jacobi_eig(m, tol, max_sweeps)
    elif method == "eigh":
        w, v = np.linalg.eigh(m)
    else:
        raise ValidationError(f"unknown eigensolver method: {method!r}")
    order = np.argsort(w, kind="stable")[::-1]
    return w[order], v[:, order]


def _jacobi_eig(
    m: Matrix, tol: float, max_sweeps: int
) -> tuple[npt.NDArray[np.float64], Matrix]:
    a = m.copy()
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(max(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)), 0.0))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


# --- random streams ------------------------------------------------------------------------


def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _initial_state(seed: int, stream_id: int) -> int:
    if stream_id == 0:
        return seed & MASK64
    return splitmix64_mix(seed ^ splitmix64_mix(stream_id * GOLDEN_GAMMA))


class RandomStream:
    """splitmix64 generator addressed by ``(seed, stream_id)``.

    A stream is single-owner. Parallel work derives independent children with
    :meth:`child`; bulk draws go through :meth:`generator`.
    """

    __slots__ = ("seed", "stream_id", "state")

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        if seed < 0 or stream_id < 0:
            raise ValidationError("seed and stream_id must be non-negative")
        self.seed = seed & MASK64
        self.stream_id = stream_id & MASK64
        self.state = _initial_state(self.seed, self.stream_id)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return splitmix64_mix(self.state)

    def uniform(self) -> float:
        """A double in [0, 1) built from the top 53 bits of the next output."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def child(self, *keys: int) -> RandomStream:
        """Derive a stream that depends only on this stream's address and ``keys``."""
        sid = self.stream_id
        for key in keys:
            sid = splitmix64_mix(sid ^ splitmix64_mix((key + 1) * GOLDEN_GAMMA))
        # stream id 0 is reserved for the root stream of a seed
        return RandomStream(self.seed, sid or 1)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.next_u64()))


def rng_next(s: RandomStream) -> int:
    return s.next_u64()
