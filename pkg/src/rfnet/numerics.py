"""Dense linear algebra and random-number primitives.

Everything in the package is float64. Random draws go through a numpy
``Generator`` backed by PCG64, which produces the same stream for the same
seed on every platform numpy supports.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "NotPositiveDefinite",
    "NoConvergence",
    "DimensionMismatch",
    "make_rng",
    "derive_rng",
    "spd_solve",
    "spd_inverse",
    "spd_logdet",
    "sym_eig",
    "gaussian_sample",
]

RNG_ALGORITHM = "PCG64"


class NotPositiveDefinite(np.linalg.LinAlgError):
    """A Cholesky factorization failed."""


class NoConvergence(np.linalg.LinAlgError):
    """An iterative eigen-solver hit its iteration cap."""


class DimensionMismatch(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFF_FFFF_FFFF_FFFF))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream keyed by ``(seed, *keys)``.

    Used to split one seed into per-suite / per-instance streams so that
    results do not depend on evaluation order.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFF_FFFF_FFFF_FFFF, *[int(k) for k in keys]])
    return np.random.Generator(np.random.PCG64(ss))


def _cholesky(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return scipy.linalg.cholesky(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def spd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A``.

    Parameters
    ----------
    A : (k, k) array
        Symmetric positive definite. Only the lower triangle is read.
    B : (k,) or (k, r) array

    Raises
    ------
    NotPositiveDefinite
        If the Cholesky factorization breaks down.
    """
    L = _cholesky(A)
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"A is {L.shape}, B has {B.shape[0]} rows")
    return scipy.linalg.cho_solve((L, True), B, check_finite=False)


def spd_inverse(A: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix, symmetrized."""
    X = spd_solve(A, np.eye(np.shape(A)[0]))
    return 0.5 * (X + X.T)


def spd_logdet(A: np.ndarray) -> float:
    L = _cholesky(A)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def sym_eig(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(w, V)`` with ``A @ V[:, k] == w[k] * V[:, k]`` and
    orthonormal columns in ``V``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from None
    order = np.argsort(w, kind="stable")[::-1]
    return w[order], V[:, order]


def gaussian_sample(rng: np.random.Generator, mean: float, std: float, count: int) -> np.ndarray:
    if std < 0:
        raise ValueError("std must be non-negative")
    if std == 0:
        return np.full(int(count), float(mean))
    return rng.normal(mean, std, size=int(count))
