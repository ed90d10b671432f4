"""Binding and unbinding with orthonormal Hadamard role vectors.

A sequence of fillers ``x_0 .. x_{n-1}`` is stored as ``S = sum_i x_i r_i^T``
where ``r_i`` is column ``i`` of a normalized Hadamard matrix. Because the
roles are orthonormal, ``S r_j`` returns ``x_j`` exactly (up to rounding).
These functions work on plain numpy arrays; the differentiable versions
used inside the generator live in :mod:`tprcap.generator`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class CapacityError(ValueError):
    """More items than there are orthogonal roles."""


class BasisError(ValueError):
    """Matrix is not a valid (normalized) Hadamard matrix."""


def sylvester_hadamard(k: int) -> np.ndarray:
    """Sylvester construction of the ``2**k`` Hadamard matrix (int64 entries ±1)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    H = np.ones((1, 1), dtype=np.int64)
    for _ in range(k):
        H = np.block([[H, H], [H, -H]])
    return H


@dataclass(frozen=True)
class RoleBasis:
    U: np.ndarray

    @property
    def d(self) -> int:
        return self.U.shape[0]

    def role(self, j: int) -> np.ndarray:
        if not 0 <= j < self.d:
            raise IndexError(f"role index {j} outside 0..{self.d - 1}")
        return self.U[:, j]


def normalize_basis(H: np.ndarray) -> RoleBasis:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise BasisError(f"Hadamard matrix must be square, got {H.shape}")
    d = H.shape[0]
    if not np.all(np.abs(H) == 1):
        raise BasisError("Hadamard entries must be +1 or -1")
    if not np.array_equal(H @ H.T, d * np.eye(d, dtype=H.dtype)):
        raise BasisError("H H^T != d I")
    return RoleBasis(np.asarray(H, dtype=np.float64) / np.sqrt(d))


def hadamard_basis(d: int) -> RoleBasis:
    """Normalized Sylvester basis for a power-of-two ``d``."""
    k = int(d).bit_length() - 1
    if d < 1 or 2**k != d:
        raise BasisError(f"role dimension must be a power of two, got {d}")
    return normalize_basis(sylvester_hadamard(k))


def empty_tpr(e: int, basis: RoleBasis) -> np.ndarray:
    return np.zeros((e, basis.d))


def bind(fillers: Sequence[np.ndarray] | np.ndarray, basis: RoleBasis, e: int | None = None) -> np.ndarray:
    """``S = sum_i fillers[i] outer U[:, i]``; filler ``i`` takes role ``i``."""
    F = np.asarray(fillers, dtype=np.float64)
    n = len(F)
    if n == 0:
        if e is None:
            raise ValueError("filler dimension unknown for an empty sequence; pass e")
        return empty_tpr(e, basis)
    if n > basis.d:
        raise CapacityError(f"{n} fillers exceed role capacity {basis.d}")
    # columns of F.T are fillers; U[:, :n].T stacks the matching roles
    return F.T @ basis.U[:, :n].T


def unbind(S: np.ndarray, j: int, basis: RoleBasis) -> np.ndarray:
    return S @ basis.role(j)


def unbind_all(S: np.ndarray, basis: RoleBasis, n: int | None = None) -> np.ndarray:
    """Rows are the fillers recovered for roles ``0 .. n-1``."""
    n = basis.d if n is None else n
    return (S @ basis.U[:, :n]).T


def accumulate(prev: np.ndarray, x_t: np.ndarray, t: int, basis: RoleBasis) -> np.ndarray:
    if t >= basis.d:
        raise CapacityError(f"step {t} exceeds role capacity {basis.d}")
    return prev + np.outer(x_t, basis.role(t))


def retrieve_nearest(v: np.ndarray, embeddings: np.ndarray) -> int:
    """Column of ``embeddings`` (e x V) closest to ``v`` in Euclidean distance.

    ``np.argmin`` returns the first minimum, which gives the lowest-id tie break.
    """
    if embeddings.ndim != 2 or embeddings.shape[1] == 0:
        raise ValueError("empty vocabulary")
    dist = ((embeddings - np.asarray(v)[:, None]) ** 2).sum(axis=0)
    return int(np.argmin(dist))


def retrieve_all(recovered: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Vectorized :func:`retrieve_nearest` for rows of ``recovered``."""
    sq = (embeddings**2).sum(axis=0)
    dist = sq[None, :] - 2.0 * recovered @ embeddings + (recovered**2).sum(axis=1)[:, None]
    return np.argmin(dist, axis=1)


def retrieval_accuracy(embeddings: np.ndarray, d: int, trials: int, n: int | None = None,
                       rng: np.random.Generator | None = None) -> float:
    """Fraction of tokens recovered after bind -> unbind -> nearest neighbour."""
    rng = np.random.default_rng(0) if rng is None else rng
    basis = hadamard_basis(d)
    n = d if n is None else n
    V = embeddings.shape[1]
    hits = 0
    for _ in range(trials):
        ids = rng.integers(0, V, size=n)
        S = bind(embeddings[:, ids].T, basis)
        got = retrieve_all(unbind_all(S, basis, n), embeddings)
        hits += int((got == ids).sum())
    return hits / (trials * n)
