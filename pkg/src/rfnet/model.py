"""Factor analysis model: posterior moments, sufficient statistics, objectives.

Data matrices are ``(n, m)`` arrays, one sample per row. Loadings ``W`` are
``(m, l)``. The noise covariance ``psi`` is either a length-``m`` vector
(diagonal) or a full ``(m, m)`` SPD matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .numerics import (
    DimensionMismatch,
    NotPositiveDefinite,
    make_rng,
    spd_inverse,
    spd_logdet,
    spd_solve,
)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class StandardNormal:
    """``h ~ N(0, I)``."""


@dataclass(frozen=True)
class GeneralGaussian:
    """``h ~ N(xi, M)``."""

    xi: np.ndarray
    M: np.ndarray


Prior = Union[StandardNormal, GeneralGaussian]


@dataclass
class RfnModel:
    W: np.ndarray
    psi: np.ndarray
    prior: Prior = field(default_factory=StandardNormal)
    # training-time preprocessing, needed to code new samples consistently
    mean: Optional[np.ndarray] = None
    column_rms: Optional[np.ndarray] = None

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        self.psi = np.array(self.psi, dtype=np.float64)
        m = self.W.shape[0]
        if self.psi.shape not in ((m,), (m, m)):
            raise DimensionMismatch(f"psi has shape {self.psi.shape}, expected ({m},) or ({m}, {m})")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def l(self) -> int:
        return self.W.shape[1]

    @property
    def full_psi(self) -> bool:
        return self.psi.ndim == 2

    def psi_matrix(self) -> np.ndarray:
        return self.psi.copy() if self.full_psi else np.diag(self.psi)

    def psi_diag(self) -> np.ndarray:
        return np.diag(self.psi).copy() if self.full_psi else self.psi.copy()

    def copy(self) -> "RfnModel":
        return replace(
            self,
            W=self.W.copy(),
            psi=self.psi.copy(),
            mean=None if self.mean is None else self.mean.copy(),
            column_rms=None if self.column_rms is None else self.column_rms.copy(),
        )

    def covariance(self) -> np.ndarray:
        """Model covariance of ``v``: ``W M W^T + Psi``."""
        WM = self.W if isinstance(self.prior, StandardNormal) else self.W @ self.prior.M
        return WM @ self.W.T + self.psi_matrix()


def psi_solve(model: RfnModel, X: np.ndarray) -> np.ndarray:
    """``Psi^{-1} X``."""
    if model.full_psi:
        return spd_solve(model.psi, X)
    if np.any(model.psi <= 0):
        raise NotPositiveDefinite("diagonal noise covariance has non-positive entries")
    X = np.asarray(X, dtype=np.float64)
    return X / (model.psi[:, None] if X.ndim == 2 else model.psi)


def logdet_psi(model: RfnModel) -> float:
    if model.full_psi:
        return spd_logdet(model.psi)
    if np.any(model.psi <= 0):
        raise NotPositiveDefinite("diagonal noise covariance has non-positive entries")
    return float(np.sum(np.log(model.psi)))


def center(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subtract column means. Returns ``(centered copy, means)``."""
    V = np.asarray(V, dtype=np.float64)
    mean = V.mean(axis=0)
    return V - mean, mean


def covariance(V: np.ndarray) -> np.ndarray:
    """Second-moment matrix ``C = (1/n) sum_i v_i v_i^T`` of centered data."""
    V = np.asarray(V, dtype=np.float64)
    C = V.T @ V / V.shape[0]
    return 0.5 * (C + C.T)


def _check_data(model: RfnModel, V: np.ndarray) -> np.ndarray:
    V = np.array(V, dtype=np.float64, ndmin=2)
    if V.shape[1] != model.m:
        raise DimensionMismatch(f"data has {V.shape[1]} features, model expects {model.m}")
    return V


def posterior_precision(model: RfnModel) -> np.ndarray:
    """``Sigma_p^{-1}``: ``I + W^T Psi^{-1} W`` (or ``M^{-1} + ...``)."""
    A = model.W.T @ psi_solve(model, model.W)
    if isinstance(model.prior, GeneralGaussian):
        A = A + spd_inverse(model.prior.M)
    else:
        A = A + np.eye(model.l)
    return 0.5 * (A + A.T)


def posterior(model: RfnModel, V: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior means, covariance and precision for any prior.

    Returns ``(mu_p, Sigma_p, Sigma_p_inv)`` where row ``i`` of ``mu_p`` is the
    posterior mean for sample ``i``.
    """
    V = _check_data(model, V)
    prec = posterior_precision(model)
    Sigma_p = spd_inverse(prec)
    rhs = psi_solve(model, model.W).T @ V.T  # (l, n)
    if isinstance(model.prior, GeneralGaussian):
        rhs = rhs + spd_solve(model.prior.M, model.prior.xi)[:, None]
    mu_p = spd_solve(prec, rhs).T
    return mu_p, Sigma_p, prec


def posterior_moments(model: RfnModel, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior ``N(mu_p_i, Sigma_p)`` under the standard normal prior."""
    if not isinstance(model.prior, StandardNormal):
        raise ValueError("posterior_moments requires a StandardNormal prior; use posterior_moments_general")
    mu_p, Sigma_p, _ = posterior(model, V)
    return mu_p, Sigma_p


def posterior_moments_general(model: RfnModel, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior under ``h ~ N(xi, M)``.

    ``Sigma_p = (M^{-1} + W^T Psi^{-1} W)^{-1}`` and
    ``mu_p_i = Sigma_p (W^T Psi^{-1} v_i + M^{-1} xi)``. A negative ``xi``
    shifts every posterior mean down and so sparsifies the rectified code.
    """
    if not isinstance(model.prior, GeneralGaussian):
        raise ValueError("posterior_moments_general requires a GeneralGaussian prior")
    mu_p, Sigma_p, _ = posterior(model, V)
    return mu_p, Sigma_p


def estep_stats(V: np.ndarray, mu: np.ndarray, Sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``U = (1/n) sum v_i mu_i^T`` and ``S = (1/n) sum mu_i mu_i^T + Sigma``."""
    V = np.asarray(V, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if V.shape[0] != mu.shape[0]:
        raise DimensionMismatch(f"data has {V.shape[0]} rows, code has {mu.shape[0]}")
    n = V.shape[0]
    U = V.T @ mu / n
    S = mu.T @ mu / n + Sigma
    return U, 0.5 * (S + S.T)


def expected_recon_error(model: RfnModel, C: np.ndarray, U: np.ndarray, S: np.ndarray) -> float:
    """Expected negative log-likelihood of the data under ``Q``, per sample."""
    m = model.m
    PiW = psi_solve(model, model.W)
    if model.full_psi:
        tr_C = np.trace(spd_solve(model.psi, C))
    else:
        tr_C = float(np.sum(np.diag(C) / model.psi))
    tr_WU = float(np.sum(PiW * U))
    tr_WSW = float(np.sum((model.W.T @ PiW) * S))
    return 0.5 * (m * LOG_2PI + logdet_psi(model) + tr_C - 2.0 * tr_WU + tr_WSW)


def kl_gaussian(mu_q, Sigma_q, mu_p, Sigma_p) -> float:
    """``KL(N(mu_q, Sigma_q) || N(mu_p, Sigma_p))``."""
    mu_q = np.atleast_1d(np.asarray(mu_q, dtype=np.float64))
    mu_p = np.atleast_1d(np.asarray(mu_p, dtype=np.float64))
    Sigma_q = np.atleast_2d(np.asarray(Sigma_q, dtype=np.float64))
    Sigma_p = np.atleast_2d(np.asarray(Sigma_p, dtype=np.float64))
    d = mu_p - mu_q
    k = mu_q.shape[0]
    tr = np.trace(spd_solve(Sigma_p, Sigma_q))
    quad = float(d @ spd_solve(Sigma_p, d))
    return 0.5 * (tr + quad - k - spd_logdet(Sigma_q) + spd_logdet(Sigma_p))


def mean_kl_to_prior(model: RfnModel, mu: np.ndarray, Sigma: np.ndarray) -> float:
    """``(1/n) sum_i KL(N(mu_i, Sigma) || prior)`` in closed form."""
    l = model.l
    if isinstance(model.prior, GeneralGaussian):
        M = model.prior.M
        D = mu - model.prior.xi
        tr = np.trace(spd_solve(M, Sigma))
        quad = float(np.sum(D * spd_solve(M, D.T).T)) / mu.shape[0]
        logdet_M = spd_logdet(M)
    else:
        tr = np.trace(Sigma)
        quad = float(np.sum(mu * mu)) / mu.shape[0]
        logdet_M = 0.0
    return 0.5 * (tr + quad - l + logdet_M - spd_logdet(Sigma))


def objective_F(model: RfnModel, V: np.ndarray, mu: np.ndarray, Sigma: np.ndarray,
                C: Optional[np.ndarray] = None) -> float:
    """Posterior-regularization objective for ``Q_i = N(mu_i, Sigma)``.

    Equals the mean log-likelihood minus the mean KL between ``Q_i`` and the
    exact posterior, so it is a lower bound that is tight at ``Q = posterior``.
    """
    V = _check_data(model, V)
    if C is None:
        C = covariance(V)
    U, S = estep_stats(V, mu, Sigma)
    return -expected_recon_error(model, C, U, S) - mean_kl_to_prior(model, mu, Sigma)


def log_likelihood(model: RfnModel, V: np.ndarray) -> float:
    """Mean of ``log N(v_i; W xi, W M W^T + Psi)``."""
    V = _check_data(model, V)
    if isinstance(model.prior, GeneralGaussian):
        V = V - model.W @ model.prior.xi
    K = model.covariance()
    quad = float(np.sum(V * spd_solve(K, V.T).T)) / V.shape[0]
    return -0.5 * (model.m * LOG_2PI + spd_logdet(K) + quad)


def init_loadings(m: int, l: int, rho: float, tau: float, rng: np.random.Generator) -> RfnModel:
    W = rng.uniform(-rho, rho, size=(m, l)) if rho > 0 else np.zeros((m, l))
    return RfnModel(W=W, psi=np.full(m, float(tau)))


def fa_em_fit(V: np.ndarray, l: int, iterations: int, *, rho: float = 0.1, seed: int = 0,
              init: Optional[RfnModel] = None, psi_floor: float = 1e-8,
              callback: Optional[Callable[[int, RfnModel], None]] = None) -> RfnModel:
    """Maximum-likelihood factor analysis by EM.

    Parameters
    ----------
    V : (n, m) array
        Centered data.
    l : int
        Number of factors.
    iterations : int
        EM sweeps. ``0`` returns the initialization.
    rho : float
        Half-width of the uniform initialization of ``W``. ``Psi`` starts at
        the mean of ``diag(C)``.
    init : RfnModel, optional
        Start from this model instead (copied).
    psi_floor : float
        Lower clip for ``Psi``; guards against Heywood cases.
    callback : callable, optional
        Called as ``callback(k, model)`` after every sweep.
    """
    V = np.asarray(V, dtype=np.float64)
    C = covariance(V)
    if init is None:
        tau = float(np.mean(np.diag(C))) or 1.0
        model = init_loadings(V.shape[1], l, rho, tau, make_rng(seed))
    else:
        model = init.copy()
    for k in range(iterations):
        mu, Sigma = posterior_moments(model, V)
        U, S = estep_stats(V, mu, Sigma)
        W = spd_solve(S, U.T).T
        # exact maximizer of the expected log-likelihood: uses the new W
        E = C - W @ U.T
        model = replace(model, W=W, psi=np.maximum(np.diag(E).copy(), psi_floor))
        if callback is not None:
            callback(k, model)
    return model
