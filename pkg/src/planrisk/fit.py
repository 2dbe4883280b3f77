"""Ridge and L2-penalised logistic regression on z-scored features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DataError


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows are samples, columns named features; NaN marks a missing cell."""

    sample_ids: tuple
    scene_ids: tuple
    columns: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(len(self.sample_ids), len(self.columns))
        if len(set(self.columns)) != len(self.columns):
            raise ArgumentError("feature column names must be unique")
        if np.any(np.isinf(values)):
            raise ArgumentError("feature values must be finite or NaN (missing)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def missing(self):
        return np.isnan(self.values)

    def column(self, name):
        return self.values[:, self.columns.index(name)]

    def select(self, names, rows=None):
        idx = [self.columns.index(n) for n in names]
        v = self.values[:, idx]
        return v if rows is None else v[rows]

    def complete_rows(self, names):
        return ~np.any(np.isnan(self.select(names)), axis=1)


@dataclass(frozen=True, eq=False)
class FitResult:
    kind: str
    intercept: float
    coef: np.ndarray  # on z-scored columns
    mean: np.ndarray
    std: np.ndarray
    lam: float
    columns: tuple = ()
    iterations: int = 0
    converged: bool = True

    def linear_predictor(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        return self.intercept + Z @ self.coef

    def predict(self, X) -> np.ndarray:
        eta = self.linear_predictor(X)
        if self.kind == "logistic":
            return 1.0 / (1.0 + np.exp(-eta))
        return eta

    def original_scale(self):
        """(intercept, coefficients) on the unstandardised columns."""
        beta = self.coef / self.std
        return float(self.intercept - beta @ self.mean), beta


def _standardize(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ArgumentError("design matrix must be 2-D")
    if X.shape[0] == 0:
        raise DataError("no complete rows to fit")
    if np.any(~np.isfinite(X)):
        raise DataError("design matrix has missing or non-finite cells")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    const = std == 0
    std = np.where(const, 1.0, std)
    return (X - mean) / std, mean, std, const


def ridge_fit(X, y, lam: float = 1.0, columns=()) -> FitResult:
    """Ridge on z-scored columns; the intercept (mean of y) is not penalised.

    Constant columns keep std 1 and coefficient 0.
    """
    if lam < 0:
        raise ArgumentError("ridge penalty must be >= 0")
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise DataError("ridge needs at least 2 rows")
    Z, mean, std, const = _standardize(X)
    coef = np.zeros(Z.shape[1])
    live = ~const
    if live.any():
        Zl = Z[:, live]
        yc = y - y.mean()
        A = Zl.T @ Zl + lam * np.eye(Zl.shape[1])
        b = Zl.T @ yc
        try:
            coef[live] = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            coef[live] = np.linalg.lstsq(A, b, rcond=None)[0]
    return FitResult("ridge", float(y.mean()), coef, mean, std, float(lam), tuple(columns))


def logistic_loss(params, Z, y, lam):
    """Penalised negative log-likelihood and its gradient.

    ``params`` is (intercept, coef...). The penalty (lam/2)||coef||^2 skips the
    intercept.
    """
    b0, beta = params[0], params[1:]
    eta = b0 + Z @ beta
    loss = float(np.sum(np.logaddexp(0.0, eta) - y * eta) + 0.5 * lam * beta @ beta)
    mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
    r = mu - y
    grad = np.concatenate([[r.sum()], Z.T @ r + lam * beta])
    return loss, grad


def logistic_fit(X, y, lam: float = 1.0, columns=(), tol=1e-8, max_iter=500) -> FitResult:
    """Newton/IRLS with step halving until the gradient max-norm drops below ``tol``."""
    if lam < 0:
        raise ArgumentError("logistic penalty must be >= 0")
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise DataError("logistic fit needs both classes in the training rows")
    Z, mean, std, const = _standardize(X)
    live = np.flatnonzero(~const)
    Zl = Z[:, live]
    A = np.hstack([np.ones((len(y), 1)), Zl])
    penalty = np.full(A.shape[1], lam)
    penalty[0] = 0.0
    params = np.zeros(A.shape[1])
    params[0] = np.log(y.mean() / (1 - y.mean()))
    loss, grad = logistic_loss(params, Zl, y, lam)
    converged, it = False, 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        eta = A @ params
        mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
        w = mu * (1 - mu)
        H = A.T @ (A * w[:, None]) + np.diag(penalty) + 1e-12 * np.eye(A.shape[1])
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = params - t * step
            cand_loss, cand_grad = logistic_loss(cand, Zl, y, lam)
            if cand_loss <= loss or t < 1e-10:
                break
            t *= 0.5
        params, loss, grad = cand, cand_loss, cand_grad
    else:
        converged = np.max(np.abs(grad)) < tol
    coef = np.zeros(Z.shape[1])
    coef[live] = params[1:]
    return FitResult(
        "logistic", float(params[0]), coef, mean, std, float(lam), tuple(columns), it, bool(converged)
    )
