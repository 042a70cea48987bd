"""Logistic regression by Newton-Raphson (IRLS) with step-halving."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = ["LogisticFit", "SeparationError", "fit_logistic", "predict_logistic"]

CLAMP = 1e-10
MAX_ITER = 100
COEF_TOL = 1e-10
SEPARATION_NORM = 30.0


class SeparationError(RuntimeError):
    """The response is (quasi-)perfectly separated by the design."""


@dataclass(frozen=True, eq=False)
class LogisticFit:
    coef: np.ndarray
    converged: bool
    iterations: int
    neg_loglik: float
    hessian: np.ndarray  # X' W X at coef (information, not negated)

    def predict(self, design) -> np.ndarray:
        return predict_logistic(self, design)

    def influence(self, response, design) -> np.ndarray:
        """Per-unit influence rows ``n (X'WX)^{-1} x_i (y_i - p_i)``."""
        design = np.atleast_2d(design)
        resid = np.asarray(response, dtype=float) - expit(design @ self.coef)
        return (design * resid[:, None]) @ np.linalg.inv(self.hessian / design.shape[0])


def _nll(eta, y):
    # sum log(1 + e^eta) - y eta, stable
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def fit_logistic(response, design) -> LogisticFit:
    """Maximum likelihood logistic regression.

    Raises ``np.linalg.LinAlgError`` on a rank-deficient design and
    :class:`SeparationError` when the coefficients run off to infinity.
    """
    y = np.asarray(response, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(design, dtype=float))
    if X.shape[0] != y.size:
        raise ValueError("response and design have different row counts")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("response must be binary")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise np.linalg.LinAlgError("design matrix is not of full column rank")
    if y.min() == y.max():
        raise SeparationError("response is constant")

    beta = np.zeros(X.shape[1])
    eta = X @ beta
    nll = _nll(eta, y)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        p = expit(eta)
        w = p * (1 - p)
        H = (X * w[:, None]).T @ X
        step = np.linalg.solve(H, X.T @ (y - p))
        t = 1.0
        while True:
            cand = beta + t * step
            cand_eta = X @ cand
            cand_nll = _nll(cand_eta, y)
            if cand_nll <= nll + 1e-12 * abs(nll) or t < 1e-10:
                break
            t *= 0.5
        change = np.max(np.abs(cand - beta))
        beta, eta, nll = cand, cand_eta, cand_nll
        if np.max(np.abs(beta)) > SEPARATION_NORM:
            raise SeparationError(
                f"coefficient norm {np.max(np.abs(beta)):.1f} exceeds {SEPARATION_NORM}; "
                "likely complete or quasi-complete separation")
        if change < COEF_TOL:
            converged = True
            break
    p = expit(eta)
    H = (X * (p * (1 - p))[:, None]).T @ X
    return LogisticFit(beta, converged, it, nll, H)


def predict_logistic(fit: LogisticFit, design_row) -> np.ndarray | float:
    x = np.asarray(design_row, dtype=float)
    if x.shape[-1] != fit.coef.size:
        raise ValueError("design row has the wrong length")
    p = np.clip(expit(x @ fit.coef), CLAMP, 1 - CLAMP)
    return float(p) if np.ndim(p) == 0 else p
