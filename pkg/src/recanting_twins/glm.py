"""Ridge-penalized generalized linear models.

All fits add an unpenalized intercept column and minimise the
per-observation objective

    mean negative log-likelihood + ridge / 2 * ||beta[1:]||^2

so that ``ridge`` and the convergence tolerances do not scale with ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit, logsumexp

MAX_ITER = 100
DEV_TOL = 1e-8
SCORE_TOL = 1e-6
RIDGE_MAX = 1e-2
_ETA_MAX = 40.0


class FitError(RuntimeError):
    """Weighted normal equations stayed singular after ridge escalation."""


@dataclass
class GlmFit:
    """Result of a GLM fit.

    ``coef`` has the intercept first.  For multinomial fits it is a
    ``(p + 1, k - 1)`` matrix of linear predictors against level 0.
    ``cov`` is the inverse penalized information (``None`` for
    least squares).
    """

    coef: np.ndarray
    converged: bool
    n_iter: int
    ridge: float
    objective: float
    score_norm: float
    cov: np.ndarray | None = None


def add_intercept(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _penalty(p1: int, ridge: float) -> np.ndarray:
    pen = np.full(p1, ridge)
    pen[0] = 0.0
    return pen


def _solve(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        c = linalg.cho_factor(h, check_finite=True)
        step = linalg.cho_solve(c, g)
    except (linalg.LinAlgError, ValueError):
        step = linalg.solve(h, g, assume_a="sym")
    if not np.all(np.isfinite(step)):
        raise linalg.LinAlgError("non-finite Newton step")
    return step


def _escalate(fit_once, ridge: float):
    r = max(ridge, 0.0)
    while True:
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                return fit_once(r)
        except (linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            if r >= RIDGE_MAX:
                raise FitError(f"singular system with ridge {r:g}: {exc}") from exc
            r = RIDGE_MAX if r == 0 else min(r * 10, RIDGE_MAX)


def _newton(objective, grad_hess, beta0, max_iter):
    """Damped Newton iteration shared by the logistic and softmax fits."""
    beta = beta0
    obj = objective(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, h = grad_hess(beta)
        step = _solve(h, g)
        t = 1.0
        while True:
            cand = beta - t * step
            new = objective(cand)
            if np.isfinite(new) and new <= obj + 1e-12:
                break
            t *= 0.5
            if t < 1e-10:
                cand, new = beta, obj
                break
        change = 2.0 * (obj - new)  # mean-deviance scale
        beta, obj = cand, new
        if abs(change) < DEV_TOL:
            gn = np.max(np.abs(grad_hess(beta)[0]))
            if gn < SCORE_TOL or t < 1e-10:
                converged = gn < SCORE_TOL
                break
    g, h = grad_hess(beta)
    return beta, obj, converged, it, float(np.max(np.abs(g))), h


def fit_binary_glm(features, targets, ridge: float = 1e-8,
                   max_iter: int = MAX_ITER) -> GlmFit:
    """Logistic regression by iteratively reweighted least squares.

    Returns the best iterate with ``converged=False`` if the mean deviance
    has not settled after ``max_iter`` Newton steps.  Targets may be
    fractional in [0, 1] (quasi-binomial).
    """
    xd = add_intercept(features)
    y = np.asarray(targets, dtype=float)
    n, p1 = xd.shape
    if n == 0:
        raise FitError("no observations")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("binary targets must lie in [0, 1]")

    def fit_once(r):
        pen = _penalty(p1, r)

        def objective(beta):
            eta = np.clip(xd @ beta, -_ETA_MAX, _ETA_MAX)
            return float(np.mean(np.logaddexp(0.0, eta) - y * eta)
                         + 0.5 * np.sum(pen * beta ** 2))

        def grad_hess(beta):
            eta = np.clip(xd @ beta, -_ETA_MAX, _ETA_MAX)
            mu = expit(eta)
            g = xd.T @ (mu - y) / n + pen * beta
            wts = mu * (1.0 - mu)
            h = (xd.T * wts) @ xd / n + np.diag(pen)
            return g, h

        ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        beta0 = np.zeros(p1)
        beta0[0] = np.log(ybar / (1 - ybar))
        beta, obj, conv, it, gn, h = _newton(objective, grad_hess, beta0, max_iter)
        cov = linalg.pinvh(h) / n
        return GlmFit(beta, conv, it, r, obj, gn, cov)

    return _escalate(fit_once, ridge)


def predict_binary(coef, features) -> np.ndarray:
    eta = np.clip(add_intercept(features) @ np.asarray(coef), -_ETA_MAX, _ETA_MAX)
    return expit(eta)


def _softmax_full(eta: np.ndarray) -> np.ndarray:
    full = np.hstack([np.zeros((eta.shape[0], 1)), eta])
    full -= full.max(axis=1, keepdims=True)
    np.exp(full, out=full)
    full /= full.sum(axis=1, keepdims=True)
    return full


def fit_multinomial(features, targets, k: int, ridge: float = 1e-8,
                    max_iter: int = MAX_ITER) -> GlmFit:
    """Softmax regression with level 0 as reference, fitted by Newton's method.

    ``coef`` is ``(p + 1, k - 1)``; the parameter vector is ordered
    level-major for the Hessian.
    """
    xd = add_intercept(features)
    t = np.asarray(targets).astype(np.int64)
    n, p1 = xd.shape
    if n == 0:
        raise FitError("no observations")
    if k < 2 or t.min() < 0 or t.max() >= k:
        raise ValueError(f"targets must lie in 0..{k - 1}")
    km1 = k - 1
    onehot = np.zeros((n, k))
    onehot[np.arange(n), t] = 1.0
    y1 = onehot[:, 1:]

    def fit_once(r):
        pen = np.tile(_penalty(p1, r), km1)

        def unpack(v):
            return v.reshape(km1, p1).T

        def objective(v):
            eta = np.clip(xd @ unpack(v), -_ETA_MAX, _ETA_MAX)
            full = np.hstack([np.zeros((n, 1)), eta])
            ll = logsumexp(full, axis=1) - np.sum(onehot * full, axis=1)
            return float(np.mean(ll) + 0.5 * np.sum(pen * v ** 2))

        def grad_hess(v):
            eta = np.clip(xd @ unpack(v), -_ETA_MAX, _ETA_MAX)
            prob = _softmax_full(eta)[:, 1:]
            g = (xd.T @ (prob - y1) / n).T.ravel() + pen * v
            h = np.empty((km1 * p1, km1 * p1))
            for j in range(km1):
                for l in range(j, km1):
                    wts = prob[:, j] * ((j == l) - prob[:, l])
                    blk = (xd.T * wts) @ xd / n
                    h[j * p1:(j + 1) * p1, l * p1:(l + 1) * p1] = blk
                    if l != j:
                        h[l * p1:(l + 1) * p1, j * p1:(j + 1) * p1] = blk.T
            h[np.diag_indices_from(h)] += pen
            return g, h

        freq = np.clip(onehot.mean(axis=0), 1e-6, None)
        v0 = np.zeros((km1, p1))
        v0[:, 0] = np.log(freq[1:] / freq[0])
        v, obj, conv, it, gn, h = _newton(objective, grad_hess, v0.ravel(), max_iter)
        cov = linalg.pinvh(h) / n
        return GlmFit(unpack(v).copy(), conv, it, r, obj, gn, cov)

    return _escalate(fit_once, ridge)


def predict_multinomial(coef, features) -> np.ndarray:
    eta = np.clip(add_intercept(features) @ np.asarray(coef), -_ETA_MAX, _ETA_MAX)
    return _softmax_full(eta)


def fit_least_squares(features, targets, ridge: float = 1e-8) -> GlmFit:
    """Ridge least squares with an unpenalized intercept."""
    xd = add_intercept(features)
    y = np.asarray(targets, dtype=float)
    n, p1 = xd.shape
    if n == 0:
        raise FitError("no observations")

    def fit_once(r):
        pen = _penalty(p1, r)
        h = xd.T @ xd / n + np.diag(pen)
        rhs = xd.T @ y / n
        beta = _solve(h, rhs)
        resid = y - xd @ beta
        obj = float(0.5 * np.mean(resid ** 2) + 0.5 * np.sum(pen * beta ** 2))
        gn = float(np.max(np.abs(h @ beta - rhs)))
        return GlmFit(beta, True, 1, r, obj, gn)

    return _escalate(fit_once, ridge)


def predict_linear(coef, features) -> np.ndarray:
    return add_intercept(features) @ np.asarray(coef)
