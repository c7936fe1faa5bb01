"""RFN learning: projected E-steps alternating with Newton-direction M-steps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .metrics import metric_er, metric_sp
from .model import (
    Prior,
    RfnModel,
    StandardNormal,
    center,
    covariance,
    estep_stats,
    expected_recon_error,
    mean_kl_to_prior,
    posterior,
)
from .numerics import DimensionMismatch, make_rng, spd_solve
from .projection import (
    CascadeConfig,
    EStepOutcome,
    ProjectionKind,
    Stage,
    estep_objective,
    estep_project,
    project,
    rectify,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """A numeric failure inside the training loop."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


ESTEP_MODES = ("cascade", "projection")


@dataclass
class TrainConfig:
    """Hyperparameters for :func:`train`.

    ``tau=None`` initializes ``Psi`` at the mean of ``diag(C)``. ``eta`` is
    the single M-step learning rate; ``eta_psi`` overrides it for ``Psi``.

    ``estep`` selects the E-step. ``"cascade"`` runs :func:`estep_project`
    from the previous code, so every E-step lowers its objective and ``F``
    rises monotonically. ``"projection"`` takes the plain projection
    ``P(mu_p)`` every iteration: one ``O(nl)`` pass and markedly sparser
    codes, but without the monotonicity guarantee.
    """

    l: int = 50
    eta: float = 0.1
    iterations: int = 1000
    psi_min: float = 1e-4
    w_max: float = 100.0
    rho: float = 0.01
    tau: Optional[float] = None
    dropout_rate: float = 0.0
    gamma_G: float = 0.0
    gamma_L: float = 0.0
    psi_mode: str = "diagonal"
    projection: ProjectionKind = ProjectionKind.RECTIFY_NORMALIZE
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    seed: int = 0
    stop_tol: float = 0.0
    eta_psi: Optional[float] = None
    prior: Prior = field(default_factory=StandardNormal)
    estep: str = "cascade"

    def __post_init__(self):
        self.projection = ProjectionKind(self.projection)
        if self.l < 1:
            raise ValueError("l must be >= 1")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.eta_psi is not None and not 0.0 < self.eta_psi <= 1.0:
            raise ValueError("eta_psi must lie in (0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.psi_min <= 0 or self.w_max <= 0:
            raise ValueError("psi_min and w_max must be positive")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.gamma_G < 0 or self.gamma_L < 0:
            raise ValueError("weight decay factors must be >= 0")
        if self.psi_mode not in ("diagonal", "full"):
            raise ValueError("psi_mode must be 'diagonal' or 'full'")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be >= 0")
        if self.estep not in ESTEP_MODES:
            raise ValueError(f"estep must be one of {ESTEP_MODES}, got {self.estep!r}")

    def to_dict(self) -> dict:
        c = self.cascade
        return {
            "l": self.l, "eta": self.eta, "iterations": self.iterations,
            "psi_min": self.psi_min, "w_max": self.w_max, "rho": self.rho,
            "tau": self.tau, "dropout_rate": self.dropout_rate,
            "gamma_G": self.gamma_G, "gamma_L": self.gamma_L,
            "psi_mode": self.psi_mode, "projection": self.projection.value,
            "seed": self.seed, "stop_tol": self.stop_tol, "eta_psi": self.eta_psi,
            "estep": self.estep,
            "cascade": {
                "gamma_min": c.gamma_min, "lambda_min": c.lambda_min,
                "rho_gamma": c.rho_gamma, "rho_lambda": c.rho_lambda,
                "epsilon_active": c.epsilon_active, "epsilon_cap": c.epsilon_cap,
                "anneal_mode": c.anneal_mode.value, "alpha": c.alpha,
                "max_backtracks": c.max_backtracks,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        cascade = CascadeConfig(**d.pop("cascade", {}))
        return cls(cascade=cascade, **d)


@dataclass
class IterationRecord:
    iteration: int
    F: float
    estep_objective: float
    recon_error: float  # expected reconstruction error under Q
    er: float  # Frobenius residual of the code
    sp: float
    stage: Stage
    trials: int

    def line(self) -> str:
        return (f"{self.iteration}\t{self.F:.12g}\t{self.estep_objective:.12g}\t"
                f"{self.recon_error:.12g}\t{self.er:.12g}\t{self.sp:.4f}\t{self.stage.value}")


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    # F of the last iteration; SP and ER of transform() on the training data;
    # S of the last E-step; indices of code units that stayed all zero
    final: dict = field(default_factory=dict)

    HEADER = "iteration\tF\testep_objective\trecon_error\tER\tSP\tstage"

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def stages(self) -> list:
        return [r.stage for r in self.records]

    def to_text(self) -> str:
        return "\n".join([self.HEADER, *(r.line() for r in self.records)]) + "\n"


class TrainResult(NamedTuple):
    model: RfnModel
    code: np.ndarray
    trace: TrainTrace


def init_model(m: int, config: TrainConfig, rng: np.random.Generator,
               C: Optional[np.ndarray] = None) -> RfnModel:
    """``W ~ U[-rho, rho]`` elementwise, ``Psi = tau I``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if config.rho > 0:
        W = rng.uniform(-config.rho, config.rho, size=(m, config.l))
    else:
        W = np.zeros((m, config.l))
    if config.tau is not None:
        tau = config.tau
    elif C is not None and np.mean(np.diag(C)) > 0:
        tau = float(np.mean(np.diag(C)))
    else:
        tau = 1.0
    psi = tau * np.eye(m) if config.psi_mode == "full" else np.full(m, tau)
    return RfnModel(W=W, psi=psi, prior=config.prior)


def mstep(model: RfnModel, U: np.ndarray, S: np.ndarray, C: np.ndarray, eta: float,
          eta_psi: Optional[float] = None) -> tuple[RfnModel, np.ndarray]:
    """One Newton-direction step on ``W`` and ``Psi``.

    Returns the updated model and the expected approximation error
    ``E = C - U W^T - W U^T + W S W^T`` evaluated at the incoming ``W``.
    With ``eta = 1`` this is the closed-form EM update.
    """
    eta_psi = eta if eta_psi is None else eta_psi
    W = model.W
    UWt = U @ W.T
    E = C - UWt - UWt.T + W @ S @ W.T
    E = 0.5 * (E + E.T)
    W_new = W + eta * (spd_solve(S, U.T).T - W)
    if model.full_psi:
        psi_new = model.psi + eta_psi * (E - model.psi)
        psi_new = 0.5 * (psi_new + psi_new.T)
    else:
        psi_new = model.psi + eta_psi * (np.diag(E) - model.psi)
    return replace(model, W=W_new, psi=psi_new), E


def bound_params(model: RfnModel, C: np.ndarray, psi_min: float, w_max: float) -> RfnModel:
    """Clip ``W`` to ``[-w_max, w_max]`` and ``Psi`` to ``[psi_min, max(C)]``.

    For a full ``Psi`` only the diagonal is clipped.
    """
    upper = max(float(np.max(C)), psi_min)
    W = np.clip(model.W, -w_max, w_max)
    if model.full_psi:
        psi = model.psi.copy()
        np.fill_diagonal(psi, np.clip(np.diag(psi), psi_min, upper))
    else:
        psi = np.clip(model.psi, psi_min, upper)
    return replace(model, W=W, psi=psi)


def weight_decay(W: np.ndarray, gamma_G: float = 0.0, gamma_L: float = 0.0) -> np.ndarray:
    """Gaussian (shrink by ``gamma_G * W``) then Laplacian (soft-threshold by ``gamma_L``)."""
    W = np.asarray(W, dtype=np.float64)
    if gamma_G:
        W = W - gamma_G * W
    if gamma_L:
        W = W - np.clip(W, -gamma_L, gamma_L)
    return W


def dropout(mu: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Zero each entry independently with probability ``rate``; no rescaling."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    if rate == 0.0:
        return np.array(mu, dtype=np.float64)
    keep = rng.random(np.shape(mu)) >= rate
    return np.where(keep, mu, 0.0)


def _column_rms(mu_p: np.ndarray) -> np.ndarray:
    r = rectify(mu_p)
    return np.sqrt(np.mean(r * r, axis=0))


def transform(model: RfnModel, V: np.ndarray, train_column_rms: Optional[np.ndarray] = None,
              *, centered: bool = False) -> np.ndarray:
    """Code new samples with a trained model.

    The code is the rectified posterior mean, divided column-wise by the
    training RMS when one is given (or stored on the model). No statistic
    of the new batch is used, so single samples are coded the same way as
    in a batch.

    ``V`` is raw data; the model's stored training mean is subtracted unless
    ``centered`` is true.
    """
    V = np.array(V, dtype=np.float64, ndmin=2)
    if V.shape[1] != model.m:
        raise DimensionMismatch(f"data has {V.shape[1]} features, model expects {model.m}")
    if not centered and model.mean is not None:
        V = V - model.mean
    mu_p, _, _ = posterior(model, V)
    code = rectify(mu_p)
    rms = model.column_rms if train_column_rms is None else train_column_rms
    if rms is not None:
        rms = np.asarray(rms, dtype=np.float64)
        if rms.shape != (model.l,):
            raise DimensionMismatch(f"column RMS has shape {rms.shape}, expected ({model.l},)")
        scale = np.zeros_like(rms)
        np.divide(1.0, rms, out=scale, where=rms > 0)
        code = code * scale
    return code


def train(V: np.ndarray, config: TrainConfig, *, center_data: bool = True,
          on_estep: Optional[Callable[[int, EStepOutcome], None]] = None) -> TrainResult:
    """Fit an RFN.

    Parameters
    ----------
    V : (n, m) array
        Training data, one sample per row.
    config : TrainConfig
    center_data : bool
        Subtract column means first (stored on the returned model).
    on_estep : callable, optional
        Called as ``on_estep(iteration, outcome)`` after each projection.

    Returns
    -------
    TrainResult
        ``(model, code, trace)``. ``code`` is the constrained posterior mean
        from the last E-step.
    """
    V = np.array(V, dtype=np.float64, ndmin=2)
    n, m = V.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if center_data:
        V, mean = center(V)
    else:
        mean = np.zeros(m)
    rng = make_rng(config.seed)
    drop_rng = make_rng(config.seed + 1)
    C = covariance(V)
    if not np.all(np.isfinite(C)):
        raise ValueError("data covariance is not finite; rescale the input")
    model = init_model(m, config, rng, C)
    kind = config.projection
    trace = TrainTrace()
    mu = None
    S = None
    F_prev = None
    for t in range(config.iterations):
        try:
            mu_p, Sigma_p, prec = posterior(model, V)
            if mu is None or config.estep == "projection":
                # first iteration has nothing to improve on yet
                cand = project(mu_p, kind)
                value = estep_objective(cand, mu_p, prec)
                before = value if mu is None else estep_objective(mu, mu_p, prec)
                outcome = EStepOutcome(cand, before, value, Stage.NEWTON, 1)
            else:
                outcome = estep_project(mu, mu_p, prec, config.cascade, kind)
            if on_estep is not None:
                on_estep(t, outcome)
            mu = outcome.mu_new
            mu_used = dropout(mu, config.dropout_rate, drop_rng) if config.dropout_rate else mu
            U, S = estep_stats(V, mu_used, Sigma_p)
            model, _ = mstep(model, U, S, C, config.eta, config.eta_psi)
            if config.gamma_G or config.gamma_L:
                model = replace(model, W=weight_decay(model.W, config.gamma_G, config.gamma_L))
            model = bound_params(model, C, config.psi_min, config.w_max)
            if mu_used is not mu:
                U, S = estep_stats(V, mu, Sigma_p)
            recon = expected_recon_error(model, C, U, S)
            F = -recon - mean_kl_to_prior(model, mu, Sigma_p)
        except np.linalg.LinAlgError as exc:
            raise TrainingError(t, exc) from exc
        rec = IterationRecord(
            iteration=t, F=F, estep_objective=outcome.objective_after, recon_error=recon,
            er=metric_er(V, model, mu), sp=metric_sp(mu), stage=outcome.stage,
            trials=outcome.trials,
        )
        trace.records.append(rec)
        log.debug(rec.line())
        if config.stop_tol > 0 and F_prev is not None:
            if abs(F - F_prev) <= config.stop_tol * max(abs(F_prev), 1e-300):
                break
        F_prev = F

    if mu is None:
        mu_p, _, _ = posterior(model, V)
        mu = project(mu_p, kind)
    mu_p, Sigma_p, _ = posterior(model, V)
    model.mean = mean
    model.column_rms = _column_rms(mu_p) if kind is ProjectionKind.RECTIFY_NORMALIZE else None
    final_code = transform(model, V, centered=True)
    if S is None:
        _, S = estep_stats(V, mu, Sigma_p)
    dead = np.flatnonzero(~np.any(mu != 0.0, axis=0))
    if dead.size:
        log.warning("%d code units are zero for every sample: %s", dead.size, dead.tolist())
    trace.final = {
        "F": trace.records[-1].F if trace.records else float("nan"),
        "SP": metric_sp(final_code),
        "ER": metric_er(V, model, final_code),
        "S": S,
        "dead_units": dead,
    }
    return TrainResult(model, mu, trace)


def stack(V: np.ndarray, configs: Sequence[TrainConfig]) -> list:
    """Train layer ``k + 1`` on the (re-centered) code of layer ``k``."""
    if not configs:
        raise ValueError("need at least one layer config")
    models = []
    X = np.asarray(V, dtype=np.float64)
    for cfg in configs:
        result = train(X, cfg)
        models.append(result.model)
        X = transform(result.model, X)
    return models
