"""Sparseness, reconstruction and covariance-fit scores for a learned code."""

from __future__ import annotations

import numpy as np

from .model import covariance

SP_THRESHOLD = 0.01


def metric_sp(code: np.ndarray, exact_zero: bool = True) -> float:
    """Percentage of code entries that are zero.

    ``exact_zero=False`` counts entries with ``|x| < 0.01`` instead, the
    convention for methods whose codes are never exactly zero.
    """
    code = np.asarray(code)
    if code.size == 0:
        return 0.0
    hits = (code == 0.0) if exact_zero else (np.abs(code) < SP_THRESHOLD)
    return 100.0 * float(np.count_nonzero(hits)) / code.size


def reconstruction_residual(V: np.ndarray, W: np.ndarray, code: np.ndarray) -> np.ndarray:
    return np.asarray(V, dtype=np.float64) - np.asarray(code) @ np.asarray(W).T


def metric_er(V: np.ndarray, model, code: np.ndarray, normalization: str = "frobenius") -> float:
    """Reconstruction error of ``V`` from ``code @ W.T``.

    Parameters
    ----------
    V : (n, m) array
        Data, centered the same way as during fitting.
    model : RfnModel or (m, l) array
        Anything with a ``W`` attribute, or the loading matrix itself.
    code : (n, l) array
    normalization : {"frobenius", "mean", "sum"}
        ``"frobenius"`` (default) is ``sqrt(sum_i ||v_i - W mu_i||^2)``, the
        usual scale for benchmark tables. ``"mean"``
        divides the summed squared error by ``n``; ``"sum"`` returns it raw.
    """
    W = getattr(model, "W", model)
    R = reconstruction_residual(V, W, code)
    sse = float(np.einsum("ij,ij->", R, R))
    if normalization == "frobenius":
        return float(np.sqrt(sse))
    if normalization == "mean":
        return sse / R.shape[0]
    if normalization == "sum":
        return sse
    raise ValueError(f"unknown normalization {normalization!r}")


def metric_co(V: np.ndarray, model, S: np.ndarray) -> float:
    """``||C - (Psi + W S W^T)||_F`` with ``C`` the second moment of ``V``."""
    C = covariance(V)
    return float(np.linalg.norm(C - model.psi_matrix() - model.W @ S @ model.W.T))
