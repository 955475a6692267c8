"""Treatment-assignment models: multinomial logit GPS and pairwise logistic PS."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .errors import ContractError, ConvergenceError, NumericalError

DEFAULT_RIDGE = 1e-8
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class GpsModel:
    """Fitted multinomial logit.

    ``coefficients[j]`` holds intercept and slopes for ``arms[j]``; the last arm
    in ``arms`` is the baseline category and has an implicit all-zero row.
    """

    coefficients: np.ndarray
    arms: tuple[int, ...]
    ridge: float
    converged: bool
    iterations: int
    loglik: float
    grad_norm: float

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @property
    def p(self) -> int:
        return self.coefficients.shape[1] - 1

    def full_coefficients(self) -> np.ndarray:
        """Z x (P+1) matrix including the zero baseline row."""
        return np.vstack([self.coefficients, np.zeros((1, self.coefficients.shape[1]))])


@dataclass(frozen=True)
class GpsMatrix:
    """Row-stochastic N x Z probabilities and their component-wise logits."""

    probs: np.ndarray
    logits: np.ndarray
    arms: tuple[int, ...]

    @classmethod
    def from_probs(cls, probs, arms=None) -> GpsMatrix:
        probs = np.asarray(probs, dtype=float)
        arms = tuple(arms) if arms is not None else tuple(range(1, probs.shape[1] + 1))
        return cls(probs=probs, logits=logit(probs), arms=arms)

    def column(self, arm: int) -> int:
        return self.arms.index(arm)

    def take(self, rows) -> GpsMatrix:
        return GpsMatrix(self.probs[rows], self.logits[rows], self.arms)


def logit(p):
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.log(p) - np.log1p(-p)


def _design(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _linear_predictor(d: np.ndarray, beta: np.ndarray) -> np.ndarray:
    eta = d @ beta.T
    return np.hstack([eta, np.zeros((d.shape[0], 1))])


def penalized_loglik(beta, x, y, n_arms, ridge) -> float:
    """Multinomial log-likelihood minus ``ridge/2 * ||slopes||^2``.

    ``y`` holds 0-based category positions; category ``n_arms - 1`` is the baseline.
    """
    beta = np.asarray(beta, dtype=float).reshape(n_arms - 1, -1)
    d = _design(np.asarray(x, dtype=float))
    eta = _linear_predictor(d, beta)
    ll = np.sum(eta[np.arange(len(y)), y] - logsumexp(eta, axis=1))
    return float(ll - 0.5 * ridge * np.sum(beta[:, 1:] ** 2))


def penalized_score(beta, x, y, n_arms, ridge) -> np.ndarray:
    """Gradient of :func:`penalized_loglik`, same shape as ``beta``."""
    beta = np.asarray(beta, dtype=float).reshape(n_arms - 1, -1)
    y = np.asarray(y, dtype=np.int64)
    d = _design(np.asarray(x, dtype=float))
    eta = _linear_predictor(d, beta)
    prob = np.exp(eta - logsumexp(eta, axis=1, keepdims=True))
    onehot = np.eye(n_arms)[y]
    g = (onehot - prob)[:, : n_arms - 1].T @ d
    g[:, 1:] -= ridge * beta[:, 1:]
    return g


def _fit_softmax(x, y, n_arms, ridge, tol, max_iter):
    n, p = x.shape
    d = _design(x)
    m = n_arms - 1
    k = p + 1
    onehot = np.zeros((n, m))
    rows = np.flatnonzero(y < m)
    onehot[rows, y[rows]] = 1.0
    pen = np.full(k, ridge)
    pen[0] = 0.0

    beta = np.zeros((m, k))

    def evaluate(b):
        eta = _linear_predictor(d, b)
        lse = logsumexp(eta, axis=1, keepdims=True)
        logp = eta - lse
        ll = np.sum(logp[np.arange(n), y]) - 0.5 * ridge * np.sum(b[:, 1:] ** 2)
        return ll, np.exp(logp)

    ll, prob = evaluate(beta)
    converged = False
    grad_norm = np.inf
    it = 0
    while True:
        pm = prob[:, :m]
        g = (onehot - pm).T @ d - pen * beta
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        # negative Hessian: sum_i d_i d_i^T (p_j delta_jl - p_j p_l) + ridge on slopes
        w = -pm[:, :, None] * pm[:, None, :]
        w[:, np.arange(m), np.arange(m)] += pm
        hess = np.einsum("ijl,ia,ib->jalb", w, d, d, optimize=True).reshape(m * k, m * k)
        hess[np.diag_indices_from(hess)] += np.tile(pen, m)
        try:
            step = np.linalg.solve(hess, g.reshape(-1)).reshape(m, k)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular Hessian at iteration {it}; consider ridge > 0") from exc
        if not np.all(np.isfinite(step)):
            raise NumericalError(f"non-finite Newton step at iteration {it}")
        t = 1.0
        # near the optimum the gain of a Newton step is below the rounding of ll
        slack = 64 * np.finfo(float).eps * max(1.0, abs(ll))
        for _ in range(60):
            cand = beta + t * step
            ll_new, prob_new = evaluate(cand)
            if np.isfinite(ll_new) and ll_new >= ll - slack:
                break
            t *= 0.5
        else:
            # no ascent possible in floating point: we are at the numerical optimum
            break
        beta, ll, prob = cand, ll_new, prob_new

    return beta, converged, it, float(ll), grad_norm


def _finish(beta, arms, ridge, converged, it, ll, grad_norm, max_iter) -> GpsModel:
    if not converged:
        if ridge == 0:
            raise ConvergenceError(
                f"multinomial logit did not converge in {max_iter} iterations "
                f"(gradient max-norm {grad_norm:.3g}); possible quasi-separation, use ridge > 0"
            )
        warnings.warn(
            f"assignment model not converged after {it} iterations (gradient max-norm {grad_norm:.3g})",
            RuntimeWarning,
            stacklevel=3,
        )
    return GpsModel(
        coefficients=beta, arms=tuple(arms), ridge=float(ridge), converged=converged,
        iterations=it, loglik=ll, grad_norm=grad_norm,
    )


def _check_args(ridge, tol, max_iter):
    if ridge < 0:
        raise ContractError("ridge must be nonnegative")
    if tol <= 0 or max_iter < 1:
        raise ContractError("tol must be positive and max_iter >= 1")


def fit_arrays(x, y, n_arms, ridge=DEFAULT_RIDGE, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, arms=None):
    """Fit on raw arrays; ``y`` holds 0-based categories with ``n_arms - 1`` as baseline."""
    _check_args(ridge, tol, max_iter)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    arms = tuple(arms) if arms is not None else tuple(range(1, n_arms + 1))
    res = _fit_softmax(x, y, n_arms, ridge, tol, max_iter)
    return _finish(*res[:1], arms, ridge, *res[1:], max_iter)


def fit_multinomial_logit(ds: Dataset, ridge=DEFAULT_RIDGE, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> GpsModel:
    """Penalized maximum-likelihood multinomial logit of treatment on covariates.

    Newton-Raphson with step halving; the last arm is the baseline category.
    """
    z = ds.n_arms
    if ds.n <= z * (ds.p + 1):
        raise ContractError(f"need N > Z*(P+1) = {z * (ds.p + 1)} units, got {ds.n}")
    return fit_arrays(ds.covariates, ds.treatment - 1, z, ridge, tol, max_iter, arms=ds.arms)


def fit_binary_ps(ds: Dataset, arms, ridge=DEFAULT_RIDGE, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> GpsModel:
    """Logistic PS ``P(T = arms[0] | X)`` fitted on units of the two arms only."""
    a, b = (ds.arm_index(arm) for arm in arms)
    if a == b:
        raise ContractError("binary propensity score needs two distinct arms")
    mask = (ds.treatment == a) | (ds.treatment == b)
    y = (ds.treatment[mask] == b).astype(np.int64)
    if mask.sum() <= 2 * (ds.p + 1):
        raise ContractError("too few units in the two arms for a logistic fit")
    return fit_arrays(ds.covariates[mask], y, 2, ridge, tol, max_iter, arms=(a, b))


def predict_gps(model: GpsModel, ds_or_x) -> GpsMatrix:
    """Softmax of the linear predictors; columns follow ``model.arms``."""
    x = ds_or_x.covariates if isinstance(ds_or_x, Dataset) else np.asarray(ds_or_x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != model.p:
        raise ContractError(f"model has P={model.p} slopes, data has {x.shape[1]} covariates")
    if isinstance(ds_or_x, Dataset) and ds_or_x.n_arms != model.n_arms and model.n_arms != 2:
        raise ContractError(f"model has Z={model.n_arms} arms, dataset has {ds_or_x.n_arms}")
    eta = _linear_predictor(_design(x), model.coefficients)
    logp = eta - logsumexp(eta, axis=1, keepdims=True)
    # keep every entry strictly inside (0, 1) even under quasi-separation
    probs = np.clip(np.exp(logp), PROB_CLAMP, 1.0 - PROB_CLAMP)
    probs /= probs.sum(axis=1, keepdims=True)
    return GpsMatrix(probs=probs, logits=logit(probs), arms=model.arms)


def binary_scores(model: GpsModel, x) -> np.ndarray:
    """``P(T = model.arms[0] | X)`` for a two-arm model."""
    if model.n_arms != 2:
        raise ContractError("binary_scores requires a two-arm model")
    return predict_gps(model, x).probs[:, 0]
