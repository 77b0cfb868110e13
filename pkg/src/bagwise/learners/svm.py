"""Soft-margin SVM (libsvm dual solver) with Platt probability calibration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn import svm as _sksvm
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import StratifiedKFold

from ..bagcore import BagwiseError
from .linear import sigmoid


@dataclass(frozen=True)
class PlattCalibration:
    A: float
    B: float

    def predict_proba(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=float)
        return sigmoid(-(self.A * s + self.B))


def platt_calibrate(scores, y, max_iter: int = 100) -> PlattCalibration:
    """Fit P(y=1|s) = 1/(1+exp(A*s+B)) by Newton with backtracking.

    Uses the smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2) from the
    standard numerically-stable formulation.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    pos = y == 1
    prior1 = float(np.sum(pos))
    prior0 = float(len(y) - prior1)
    if prior1 == 0 or prior0 == 0:
        raise BagwiseError("platt_calibrate: need both classes")
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    t = np.where(pos, hi, lo)

    def objective(A, B):
        fApB = scores * A + B
        return float(np.sum(np.where(
            fApB >= 0,
            t * fApB + np.log1p(np.exp(-fApB)),
            (t - 1.0) * fApB + np.log1p(np.exp(fApB)))))

    sigma = 1e-12
    A = 0.0
    B = np.log((prior0 + 1.0) / (prior1 + 1.0))
    fval = objective(A, B)
    for _ in range(max_iter):
        fApB = scores * A + B
        p = sigmoid(-fApB)          # P(y=1|s)
        q = 1.0 - p
        d1 = t - p
        d2 = p * q
        g1 = float(np.sum(scores * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        h11 = float(np.sum(scores * scores * d2)) + sigma
        h22 = float(np.sum(d2)) + sigma
        h21 = float(np.sum(scores * d2))
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            newA, newB = A + step * dA, B + step * dB
            newf = objective(newA, newB)
            if newf < fval + 1e-4 * step * gd:
                A, B, fval = newA, newB, newf
                break
            step /= 2.0
        else:
            break
    return PlattCalibration(float(A), float(B))


def kernel_matrix(kind: str, gamma, X1, X2) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if kind == "linear":
        return X1 @ X2.T
    if kind == "rbf":
        d2 = (np.sum(X1 ** 2, axis=1)[:, None]
              - 2.0 * X1 @ X2.T + np.sum(X2 ** 2, axis=1)[None, :])
        return np.exp(-gamma * np.maximum(d2, 0.0))
    raise BagwiseError(f"unknown kernel {kind!r}")


@dataclass(frozen=True)
class SvmModel:
    kernel: str
    C: float
    gamma: float | None
    support_vectors: np.ndarray
    dual_coef: np.ndarray           # alpha_i * y_i, support vectors only
    intercept: float
    calibration: PlattCalibration | None = None
    linear_weights: np.ndarray | None = None   # collapsed w for linear kernel

    @property
    def alphas(self) -> np.ndarray:
        return np.abs(self.dual_coef)

    @property
    def support_labels(self) -> np.ndarray:
        return np.sign(self.dual_coef).astype(int)

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kernel == "linear" and self.linear_weights is not None:
            return X @ self.linear_weights + self.intercept
        K = kernel_matrix(self.kernel, self.gamma, X, self.support_vectors)
        return K @ self.dual_coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        if self.calibration is None:
            raise BagwiseError("SVM has no Platt calibration fitted")
        return self.calibration.predict_proba(self.decision(X))

    def dual_objective(self) -> float:
        """Value of the solved dual: sum(alpha) - 1/2 a^T Q a."""
        K = kernel_matrix(self.kernel, self.gamma,
                          self.support_vectors, self.support_vectors)
        return float(np.sum(self.alphas)
                     - 0.5 * self.dual_coef @ K @ self.dual_coef)


def fit_svm(X, y, kernel: str = "linear", C: float = 1.0, gamma: float | None = None,
            seed: int = 0, calibrate: str = "cv3", tol: float = 1e-3,
            class_weight=None) -> SvmModel:
    """Solve the soft-margin dual and fit Platt calibration.

    y takes values in {-1, +1}. calibrate: 'cv3' fits the sigmoid on
    out-of-sample scores from an internal 3-fold split, 'insample' on
    training scores (used inside relabeling loops), 'none' skips it.
    tol is the dual KKT tolerance; heavily noisy labels can make very tight
    tolerances unreachable, so iterations are capped as a safety net.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if not set(np.unique(y)) <= {-1, 1}:
        raise BagwiseError("fit_svm: labels must be in {-1, +1}")
    if len(np.unique(y)) < 2:
        raise BagwiseError("fit_svm: both classes must be present")
    if C <= 0:
        raise BagwiseError("fit_svm: C must be positive")
    if kernel == "rbf" and (gamma is None or gamma <= 0):
        raise BagwiseError("fit_svm: rbf kernel needs gamma > 0")

    model = _fit_raw(X, y, kernel, C, gamma, tol, class_weight)
    if calibrate == "none":
        return model
    if calibrate == "cv3":
        scores, targets = _cv_scores(X, y, kernel, C, gamma, seed, tol,
                                     class_weight)
    elif calibrate == "insample":
        scores, targets = model.decision(X), y
    else:
        raise BagwiseError(f"unknown calibration mode {calibrate!r}")
    cal = platt_calibrate(scores, targets)
    return SvmModel(model.kernel, model.C, model.gamma, model.support_vectors,
                    model.dual_coef, model.intercept, cal, model.linear_weights)


def _fit_raw(X, y, kernel, C, gamma, tol, class_weight=None) -> SvmModel:
    clf = _sksvm.SVC(kernel=kernel, C=C, gamma=gamma if gamma is not None else "scale",
                     tol=tol, max_iter=1_000_000, cache_size=500,
                     class_weight=class_weight)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(X, y)
    dual_coef = clf.dual_coef_.ravel().copy()
    sv = clf.support_vectors_.copy()
    # libsvm orders classes ascending (-1 first), so its decision function is
    # already "+1 is positive"; keep the intercept convention as-is.
    intercept = float(clf.intercept_[0])
    lw = sv.T @ dual_coef if kernel == "linear" else None
    return SvmModel(kernel, C, gamma, sv, dual_coef, intercept, None, lw)


def _cv_scores(X, y, kernel, C, gamma, seed, tol, class_weight=None):
    counts = np.bincount((y == 1).astype(int), minlength=2)
    if counts.min() < 3:
        model = _fit_raw(X, y, kernel, C, gamma, tol, class_weight)
        return model.decision(X), y
    skf = StratifiedKFold(n_splits=3, shuffle=True, random_state=seed)
    scores = np.empty(len(y))
    for train_idx, test_idx in skf.split(X, y):
        fold = _fit_raw(X[train_idx], y[train_idx], kernel, C, gamma, tol,
                        class_weight)
        scores[test_idx] = fold.decision(X[test_idx])
    return scores, y
