"""Logistic and beta regression with analytic gradients.

Both models share the logit mean link, so a fitted BetaModel predicts
instance probabilities exactly like a LinearModel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from ..bagcore import BagwiseError

GRAD_TOL = 1e-6
MAX_ITER = 500


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.weights.shape[0]:
            raise BagwiseError(
                f"feature dim {X.shape[1]} != model dim {self.weights.shape[0]}")
        return X @ self.weights + self.bias


@dataclass(frozen=True)
class BetaModel:
    weights: np.ndarray
    bias: float
    precision: float

    def __post_init__(self):
        if self.precision <= 0:
            raise BagwiseError("beta precision must be positive")

    def decision(self, X: np.ndarray) -> np.ndarray:
        return LinearModel(self.weights, self.bias).decision(X)


def sigmoid(v):
    return special.expit(v)


def predict_proba_linear(model, X) -> np.ndarray:
    """Instance probability sigma(w.x + b) for a LinearModel or BetaModel."""
    return sigmoid(model.decision(X))


def logistic_loss_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray,
                       weights: np.ndarray):
    """Weighted negative Bernoulli log-likelihood and its gradient.

    params is (w_0..w_{d-1}, bias); targets y may be fractional (used by
    Platt-style smoothed targets as well).
    """
    w, b = params[:-1], params[-1]
    eta = X @ w + b
    # log(1+e^eta) - y*eta, computed stably
    loss = np.sum(weights * (np.logaddexp(0.0, eta) - y * eta))
    resid = weights * (sigmoid(eta) - y)
    grad = np.concatenate([X.T @ resid, [np.sum(resid)]])
    return loss, grad


def fit_logistic(X, y, sample_weights=None) -> LinearModel:
    """Maximum-likelihood logistic regression.

    Degenerate single-class inputs return a bias-only prior model instead of
    diverging.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(X)):
        raise BagwiseError("fit_logistic: non-finite features")
    if sample_weights is None:
        sample_weights = np.ones(len(y))
    sample_weights = np.asarray(sample_weights, dtype=float)
    d = X.shape[1]
    prior = float(np.average(y, weights=sample_weights))
    if prior <= 0.0 or prior >= 1.0:
        bias = np.clip(special.logit(np.clip(prior, 1e-12, 1 - 1e-12)), -30, 30)
        return LinearModel(np.zeros(d), float(bias))
    x0 = np.zeros(d + 1)
    x0[-1] = special.logit(prior)
    res = optimize.minimize(
        logistic_loss_grad, x0, args=(X, y, sample_weights), jac=True,
        method="L-BFGS-B", options={"gtol": GRAD_TOL, "maxiter": MAX_ITER})
    return LinearModel(res.x[:-1].copy(), float(res.x[-1]))


def squeeze_proportions(y, n: int) -> np.ndarray:
    """Shrink [0,1] proportions into the open interval: (y*(n-1)+0.5)/n."""
    if n < 1:
        raise BagwiseError("squeeze_proportions: n must be >= 1")
    return (np.asarray(y, dtype=float) * (n - 1) + 0.5) / n


def beta_nll_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray):
    """Negative beta log-likelihood with logit mean link, constant precision.

    params is (w, bias, log_precision). Shape and scale per observation are
    mu*phi and (1-mu)*phi.
    """
    w, b, logphi = params[:-2], params[-2], params[-1]
    phi = np.exp(logphi)
    eta = X @ w + b
    mu = sigmoid(eta)
    a = mu * phi
    bb = (1.0 - mu) * phi
    ll = (special.gammaln(phi) - special.gammaln(a) - special.gammaln(bb)
          + (a - 1.0) * np.log(y) + (bb - 1.0) * np.log1p(-y))
    ystar = np.log(y) - np.log1p(-y)
    mustar = special.digamma(a) - special.digamma(bb)
    dmu = phi * (ystar - mustar)          # dll/dmu
    deta = dmu * mu * (1.0 - mu)          # dll/deta
    dphi = (special.digamma(phi) - mu * special.digamma(a)
            - (1.0 - mu) * special.digamma(bb)
            + mu * np.log(y) + (1.0 - mu) * np.log1p(-y))
    grad = np.concatenate([X.T @ deta, [np.sum(deta)], [np.sum(dphi) * phi]])
    return -np.sum(ll), -grad


def fit_beta_regression(X, y) -> BetaModel:
    """Maximum-likelihood beta regression (logit link, constant precision)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0) or np.any(y >= 1.0):
        raise BagwiseError("fit_beta_regression: responses must lie strictly in (0, 1)")
    if not np.all(np.isfinite(X)):
        raise BagwiseError("fit_beta_regression: non-finite features")
    d = X.shape[1]
    # Method-of-moments start for the precision.
    m, v = float(np.mean(y)), float(np.var(y)) + 1e-12
    phi0 = max(m * (1.0 - m) / v - 1.0, 1e-2)
    x0 = np.zeros(d + 2)
    x0[-2] = special.logit(m)
    x0[-1] = np.log(phi0)
    res = optimize.minimize(
        beta_nll_grad, x0, args=(X, y), jac=True, method="L-BFGS-B",
        options={"gtol": GRAD_TOL, "maxiter": MAX_ITER})
    return BetaModel(res.x[:-2].copy(), float(res.x[-2]), float(np.exp(res.x[-1])))
