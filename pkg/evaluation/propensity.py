# evaluation/propensity.py
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from utils.errors import DatasetSchemaError
from utils.log import get_logger

logger = get_logger("evaluation")

SEPARATION_NORM = 1e3
SEPARATION_RIDGE = 1e-6
PERFECT_FIT = 1e-6


@dataclass(frozen=True, eq=False)
class PropensityModel:
    """
    Logistic model pr(Y = 1 | x) = expit(b0 + x'b) over named columns.

    A model built with ``known`` ignores its inputs and returns a fixed
    probability.
    """

    coef: np.ndarray
    columns: tuple = ()
    probability: Optional[float] = None
    separated: bool = False

    @classmethod
    def known(cls, probability):
        if not 0 <= probability <= 1:
            raise ValueError(f"probability must lie in [0, 1], got {probability}")
        return cls(np.zeros(1), (), float(probability))

    def predict(self, frame):
        """Probabilities for the rows of a DataFrame holding ``columns``."""
        n = len(frame)
        if self.probability is not None:
            return np.full(n, self.probability)
        missing = [c for c in self.columns if c not in frame.columns]
        if missing:
            raise DatasetSchemaError(f"propensity covariates {missing} are not in the data")
        X = frame[list(self.columns)].to_numpy(dtype=float)
        return expit(self.coef[0] + X @ self.coef[1:])

    def to_dict(self):
        return {
            "coef": self.coef.tolist(),
            "columns": list(self.columns),
            "probability": self.probability,
            "separated": self.separated,
        }


def _penalized_loglik(X, y, beta, ridge):
    eta = X @ beta
    return float(y @ eta - np.logaddexp(0.0, eta).sum() - 0.5 * ridge * beta[1:] @ beta[1:])


def _newton(X, y, ridge, max_iter, tol):
    beta = np.zeros(X.shape[1])
    penalty = np.full(X.shape[1], ridge)
    penalty[0] = 0.0
    current = _penalized_loglik(X, y, beta, ridge)
    for _ in range(max_iter):
        mu = expit(X @ beta)
        grad = X.T @ (y - mu) - penalty * beta
        if np.max(np.abs(grad)) < tol:
            return beta, True
        hess = (X * (mu * (1 - mu))[:, None]).T @ X + np.diag(penalty)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while t > 1e-10:
            candidate = beta + t * step
            value = _penalized_loglik(X, y, candidate, ridge)
            if value >= current:
                break
            t *= 0.5
        beta, current = candidate, value
        if np.linalg.norm(beta) > SEPARATION_NORM and ridge == 0:
            return beta, False
    return beta, False


def fit_logistic(X, y, columns=None, max_iter=100, tol=1e-8):
    """
    Maximum-likelihood logistic regression by damped Newton iterations.

    An intercept is always added. Iterations stop when the gradient max-norm
    falls below ``tol`` or after ``max_iter`` steps. The data are treated as
    separated when the coefficients blow up (norm above 1e3), when the fit
    reproduces every response, or when the Hessian is singular; a warning is
    then logged and the fit is redone with a small ridge penalty on the slopes.

    Args:
        X (array-like): (n, k) design without intercept
        y (array-like): Binary responses
        columns (Sequence[str], optional): Names of the k columns
        max_iter (int): Newton iteration cap
        tol (float): Gradient tolerance

    Returns:
        PropensityModel: Fitted model (``separated`` flags the ridge path)
    """
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    y = np.asarray(y, dtype=float)
    columns = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(1, X.shape[1] + 1))
    design = np.column_stack([np.ones(X.shape[0]), X])
    separated = False
    try:
        beta, converged = _newton(design, y, 0.0, max_iter, tol)
        fitted = expit(design @ beta)
        separated = np.linalg.norm(beta) > SEPARATION_NORM or np.max(np.abs(y - fitted)) < PERFECT_FIT
    except np.linalg.LinAlgError:
        separated = True
    if separated:
        logger.warning(
            f"Logistic fit on {len(y)} rows looks separated or collinear; refitting with ridge {SEPARATION_RIDGE}"
        )
        beta, converged = _newton(design, y, SEPARATION_RIDGE, max_iter, tol)
    if not converged:
        logger.warning(f"Logistic fit did not reach gradient tolerance {tol} in {max_iter} iterations")
    return PropensityModel(beta, columns, None, bool(separated))
