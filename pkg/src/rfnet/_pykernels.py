"""Pure numpy implementations of the E-step kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used
when the extension is not built or ``RFNET_PURE_PYTHON`` is set.
"""

import numpy as np
import scipy.linalg

from .numerics import NotPositiveDefinite


def rectify_normalize(mu_p):
    mu_p = np.ascontiguousarray(mu_p, dtype=np.float64)
    n = mu_p.shape[0]
    out = np.maximum(mu_p, 0.0)
    dead = ~np.any(mu_p > 0.0, axis=1)
    if np.any(dead) and mu_p.shape[1]:
        rows = np.flatnonzero(dead)
        out[rows, np.argmax(mu_p[rows], axis=1)] = 1.0
    # squares of max-scaled entries neither underflow nor overflow
    cmax = out.max(axis=0, initial=0.0)
    nz = cmax > 0.0
    scaled = out[:, nz] / cmax[nz]
    scale = np.zeros_like(cmax)
    scale[nz] = 1.0 / (cmax[nz] * np.sqrt(np.einsum("ij,ij->j", scaled, scaled) / n))
    out *= scale
    return out


def estep_objective(mu, mu_p, prec):
    D = np.asarray(mu, dtype=np.float64) - mu_p
    return float(np.einsum("ij,ij->", D @ prec, D)) / D.shape[0]


def reduced_direction(mu_old, mu_p, prec, eps):
    """Rows of ``H_i^{-1} prec (mu_p_i - mu_old_i)`` with the eps-active reduced ``H_i``."""
    mu_old = np.asarray(mu_old, dtype=np.float64)
    G = (np.asarray(mu_p, dtype=np.float64) - mu_old) @ prec
    out = G.copy()
    active = mu_old <= eps
    for i in range(G.shape[0]):
        free = np.flatnonzero(~active[i])
        if free.size == 0:
            continue
        block = prec[np.ix_(free, free)]
        try:
            c = scipy.linalg.cho_factor(block, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"row {i}: {exc}") from None
        out[i, free] = scipy.linalg.cho_solve(c, G[i, free], check_finite=False)
    return out
