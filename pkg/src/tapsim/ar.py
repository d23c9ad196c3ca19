"""Short-term predictor: per-dimension autoregression fit on a recent window.

Each dimension d gets its own order-p model

    x_d[t] = c_d + sum_j a_dj * x_d[t - j]

fit by ridge-regularized least squares over the window (the intercept is
not penalized). Cross-dimension coupling is deliberately left to the
long-term predictor; a diagonal model stays well-posed on the short
windows available between receipts.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

__all__ = ["ArPredictor", "SingularWindowError"]


class SingularWindowError(ValueError):
    """Normal equations are singular; retry with ridge > 0."""


class ArPredictor(BaseEstimator):
    """Order-p autoregressive one-to-few-step forecaster.

    Parameters
    ----------
    order : lag count p. The fit window must hold at least order + 2 rows.
    ridge : L2 penalty on the lag coefficients (never on the intercept).

    After :meth:`fit`, ``coef_`` has shape (D, order) with column j holding
    the lag-(j+1) coefficients, and ``intercept_`` has shape (D,).
    """

    def __init__(self, order: int = 3, ridge: float = 1e-6):
        self.order = order
        self.ridge = ridge

    def fit(self, window):
        """Fit all dimensions on a (n, D) window, n >= order + 2."""
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        X = np.asarray(window, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n, dim = X.shape
        p = self.order
        if n < p + 2:
            raise ValueError(f"window of {n} rows too short for order {p}; need {p + 2}")
        if not np.all(np.isfinite(X)):
            raise ValueError("window contains non-finite values")

        rows = n - p
        penalty = np.diag(np.append(np.full(p, self.ridge), 0.0))
        coef = np.empty((dim, p))
        intercept = np.empty(dim)
        design = np.empty((rows, p + 1))
        design[:, p] = 1.0
        for d in range(dim):
            series = X[:, d]
            for j in range(1, p + 1):
                design[:, j - 1] = series[p - j : n - j]
            target = series[p:]
            gram = design.T @ design + penalty
            rhs = design.T @ target
            try:
                beta = np.linalg.solve(gram, rhs)
            except np.linalg.LinAlgError:
                raise SingularWindowError(
                    f"singular normal equations for dimension {d} with "
                    f"ridge={self.ridge}; retry with ridge > 0"
                ) from None
            coef[d] = beta[:p]
            intercept[d] = beta[p]
        self.coef_ = coef
        self.intercept_ = intercept
        self.n_features_in_ = dim
        self.n_window_ = n
        return self

    def predict(self, recent, steps: int = 1):
        """Forecast ``steps`` slots ahead from the last ``order`` commands.

        ``recent`` is (order, D), oldest first. Steps beyond the first feed
        the previous prediction back in; every output is clamped to [0, 1]
        (the normalized working range), and the clamped value is what gets
        fed back.
        """
        if not hasattr(self, "coef_"):
            raise NotFittedError("ArPredictor is not fitted; call fit(window) first")
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        recent = np.asarray(recent, dtype=float)
        if recent.ndim == 1:
            recent = recent[:, None]
        if recent.shape != (self.order, self.n_features_in_):
            raise ValueError(
                f"recent has shape {recent.shape}, expected "
                f"({self.order}, {self.n_features_in_})"
            )
        lags = recent[::-1].copy()  # row j-1 holds lag j
        out = np.empty((steps, self.n_features_in_))
        for k in range(steps):
            nxt = self.intercept_ + np.einsum("dj,jd->d", self.coef_, lags)
            np.clip(nxt, 0.0, 1.0, out=nxt)
            out[k] = nxt
            lags = np.vstack([nxt[None, :], lags[:-1]])
        return out

    def predict_next(self, recent):
        """One-step forecast as a flat (D,) vector."""
        return self.predict(recent, steps=1)[0]
