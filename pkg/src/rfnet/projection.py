"""Constraint projections and the E-step improvement cascade.

The E-step has to move the posterior means ``mu_p`` onto the feasible set
(non-negative, and optionally unit mean square per code unit) while
decreasing

    O(mu) = (1/n) sum_i (mu_i - mu_p_i)^T Sigma_p^{-1} (mu_i - mu_p_i).

Solving this non-convex QP exactly is far too expensive inside a training
loop, so :func:`estep_project` tries progressively more careful projected
steps and keeps the first one that lowers ``O``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .numerics import DimensionMismatch, spd_solve

__all__ = [
    "ProjectionKind",
    "AnnealMode",
    "Stage",
    "CascadeConfig",
    "EStepOutcome",
    "rectify",
    "rectify_normalize",
    "project",
    "estep_objective",
    "scaled_newton_step",
    "reduced_hessian",
    "scaled_reduced_step",
    "estep_project",
]


class ProjectionKind(enum.Enum):
    RECTIFY = "rectify"
    RECTIFY_NORMALIZE = "rectify_normalize"


class AnnealMode(enum.Enum):
    GAMMA = "gamma"
    LAMBDA = "lambda"
    BOTH = "both"


class Stage(enum.Enum):
    NEWTON = "newton"
    ANNEALED_NEWTON = "annealed_newton"
    REDUCED_MATRIX = "reduced_matrix"
    DAMPED_GRADIENT = "damped_gradient"
    UNCHANGED = "unchanged"


@dataclass(frozen=True)
class CascadeConfig:
    """Step-size schedule for :func:`estep_project`.

    ``epsilon_active=None`` picks the active-set threshold per call as
    ``min(max|mu_old - P(mu_p)|, epsilon_cap)``.
    """

    gamma_min: float = 1e-6
    lambda_min: float = 1e-6
    rho_gamma: float = 0.5
    rho_lambda: float = 0.5
    epsilon_active: Optional[float] = None
    epsilon_cap: float = 1e-2
    anneal_mode: AnnealMode = AnnealMode.BOTH
    alpha: float = 1e-4
    max_backtracks: int = 30

    def __post_init__(self):
        for name in ("gamma_min", "lambda_min", "rho_gamma", "rho_lambda"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.epsilon_active is not None and self.epsilon_active < 0:
            raise ValueError("epsilon_active must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "anneal_mode", AnnealMode(self.anneal_mode))


@dataclass
class EStepOutcome:
    mu_new: np.ndarray
    objective_before: float
    objective_after: float
    stage: Stage
    trials: int = 0


def rectify(mu_p: np.ndarray) -> np.ndarray:
    """Closest point of the non-negative orthant: ``max(0, mu_p)``."""
    return np.maximum(np.asarray(mu_p, dtype=np.float64), 0.0)


def rectify_normalize(mu_p: np.ndarray) -> np.ndarray:
    """Project onto ``{mu >= 0, (1/n) sum_i mu_ij^2 = 1 for every j}``.

    Entries are rectified and each column is scaled to unit mean square.
    A sample whose entries are all non-positive gets a unit placeholder at
    its largest entry (lowest index on ties) before scaling. Columns that are
    still all zero after that cannot be normalized and stay zero.
    """
    mu_p = np.array(mu_p, dtype=np.float64, ndmin=2)
    return kernels.rectify_normalize(mu_p)


def project(x: np.ndarray, kind: ProjectionKind) -> np.ndarray:
    if kind is ProjectionKind.RECTIFY:
        return rectify(x)
    return rectify_normalize(x)


def estep_objective(mu: np.ndarray, mu_p: np.ndarray, Sigma_p_inv: np.ndarray) -> float:
    """``(1/n) sum_i (mu_i - mu_p_i)^T Sigma_p^{-1} (mu_i - mu_p_i)``."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != np.shape(mu_p):
        raise DimensionMismatch(f"mu is {mu.shape}, mu_p is {np.shape(mu_p)}")
    return kernels.estep_objective(mu, mu_p, Sigma_p_inv)


def _two_stage(mu_old, direction, lam, gamma, kind):
    d = project(mu_old + lam * direction, kind)
    return project(mu_old + gamma * (d - mu_old), kind)


def scaled_newton_step(mu_old, mu_p, lam: float, gamma: float, kind: ProjectionKind) -> np.ndarray:
    """Projected Newton step with step sizes ``lam`` (gradient) and ``gamma`` (blend).

    With the Newton scaling ``H^{-1} = Sigma_p`` the curvature cancels, so the
    step only needs the unconstrained optimum ``mu_p``.
    """
    mu_old = np.asarray(mu_old, dtype=np.float64)
    return _two_stage(mu_old, mu_p - mu_old, lam, gamma, kind)


def reduced_hessian(Sigma_p_inv: np.ndarray, mu_row: np.ndarray, epsilon: float) -> np.ndarray:
    """``Sigma_p^{-1}`` with rows/columns of eps-active coordinates set to unit vectors."""
    H = np.array(Sigma_p_inv, dtype=np.float64)
    active = np.asarray(mu_row) <= epsilon
    H[active, :] = 0.0
    H[:, active] = 0.0
    H[active, active] = 1.0
    return H


def scaled_reduced_step(mu_old, mu_p, Sigma_p_inv, H, lam: float, gamma: float,
                        kind: ProjectionKind) -> np.ndarray:
    """Scaled projection with per-sample scaling matrices ``H``.

    ``H`` is either one ``(l, l)`` matrix shared by all samples or an
    ``(n, l, l)`` stack. ``H = Sigma_p_inv`` reproduces
    :func:`scaled_newton_step`; ``H = I`` gives projected gradient.
    """
    mu_old = np.asarray(mu_old, dtype=np.float64)
    G = (np.asarray(mu_p) - mu_old) @ Sigma_p_inv
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 2:
        direction = spd_solve(H, G.T).T
    else:
        direction = np.stack([spd_solve(H[i], G[i]) for i in range(G.shape[0])])
    return _two_stage(mu_old, direction, lam, gamma, kind)


def _anneal(config: CascadeConfig):
    """Yield (lam, gamma) pairs of the annealing loop."""
    lam = gamma = 1.0
    mode = config.anneal_mode
    while lam > config.lambda_min and gamma > config.gamma_min:
        if mode is not AnnealMode.LAMBDA:
            gamma *= config.rho_gamma
        if mode is not AnnealMode.GAMMA:
            lam *= config.rho_lambda
        yield lam, gamma


def estep_project(mu_old: np.ndarray, mu_p: np.ndarray, Sigma_p_inv: np.ndarray,
                  config: Optional[CascadeConfig] = None,
                  kind: ProjectionKind = ProjectionKind.RECTIFY_NORMALIZE) -> EStepOutcome:
    """Find feasible means that strictly lower the E-step objective.

    Tries in order: the plain projection ``P(mu_p)``; annealed Newton steps;
    Newton steps with the eps-active reduced matrix; projected gradient with
    a sufficient-decrease line search. Returns ``mu_old`` unchanged (stage
    ``UNCHANGED``) when none of them improves.
    """
    config = config or CascadeConfig()
    mu_old = np.asarray(mu_old, dtype=np.float64)
    mu_p = np.asarray(mu_p, dtype=np.float64)
    if mu_old.shape != mu_p.shape:
        raise DimensionMismatch(f"mu_old is {mu_old.shape}, mu_p is {mu_p.shape}")
    before = estep_objective(mu_old, mu_p, Sigma_p_inv)
    trials = 0

    def done(cand, value, stage):
        return EStepOutcome(cand, before, value, stage, trials)

    newton = project(mu_p, kind)
    value = estep_objective(newton, mu_p, Sigma_p_inv)
    trials += 1
    if value < before:
        return done(newton, value, Stage.NEWTON)

    step = mu_p - mu_old
    for lam, gamma in _anneal(config):
        cand = _two_stage(mu_old, step, lam, gamma, kind)
        value = estep_objective(cand, mu_p, Sigma_p_inv)
        trials += 1
        if value < before:
            return done(cand, value, Stage.ANNEALED_NEWTON)

    if config.epsilon_active is None:
        eps = min(float(np.max(np.abs(mu_old - newton))), config.epsilon_cap)
    else:
        eps = config.epsilon_active
    step = kernels.reduced_direction(mu_old, mu_p, Sigma_p_inv, eps)
    for lam, gamma in [(1.0, 1.0), *_anneal(config)]:
        cand = _two_stage(mu_old, step, lam, gamma, kind)
        value = estep_objective(cand, mu_p, Sigma_p_inv)
        trials += 1
        if value < before:
            return done(cand, value, Stage.REDUCED_MATRIX)

    # Projected gradient on f = sum_i 1/2 (.)^T A (.), i.e. n/2 * O.
    # Steps up to 2(1 - alpha)/e_max(A) satisfy sufficient decrease on convex
    # sets; tr(A) bounds e_max(A) from above.
    n = mu_old.shape[0]
    grad_step = (mu_p - mu_old) @ Sigma_p_inv
    lam = 2.0 * (1.0 - config.alpha) / float(np.trace(Sigma_p_inv))
    for _ in range(config.max_backtracks):
        cand = project(mu_old + lam * grad_step, kind)
        value = estep_objective(cand, mu_p, Sigma_p_inv)
        trials += 1
        moved = float(np.sum((cand - mu_old) ** 2))
        if value < before and 0.5 * n * (value - before) <= -config.alpha / lam * moved:
            return done(cand, value, Stage.DAMPED_GRADIENT)
        lam *= 0.5
    return done(mu_old.copy(), before, Stage.UNCHANGED)
