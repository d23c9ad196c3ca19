"""Per-dimension min-max scaling into the predictors' [0, 1] working range."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

__all__ = ["MinMaxNormalizer"]


class MinMaxNormalizer(BaseEstimator, TransformerMixin):
    """Column-wise min-max scaler with clamped output.

    Bounds are taken from the data passed to :meth:`fit` (the training
    split); out-of-range values seen later are clamped into [0, 1] rather
    than extrapolated. Constant columns are flagged degenerate and map to
    0.5 in the scaled space; inverting a degenerate column returns its
    constant regardless of the scaled value.

    Accepts (T, D) matrices or single (D,) vectors in both directions.
    """

    def fit(self, X, y=None):
        X = self._as_matrix(X)
        if X.shape[0] < 1:
            raise ValueError("cannot fit normalization on an empty dataset")
        if not np.all(np.isfinite(X)):
            raise ValueError("normalization input contains non-finite values")
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.degenerate_ = self.data_min_ == self.data_max_
        self.n_features_in_ = X.shape[1]
        # Safe divisor; degenerate columns are routed around it anyway.
        self._range = np.where(self.degenerate_, 1.0, self.data_max_ - self.data_min_)
        return self

    def transform(self, X):
        X, squeeze = self._check_input(X)
        scaled = np.clip((X - self.data_min_) / self._range, 0.0, 1.0)
        scaled[:, self.degenerate_] = 0.5
        return scaled[0] if squeeze else scaled

    def inverse_transform(self, X):
        X, squeeze = self._check_input(X)
        raw = self.data_min_ + X * (self.data_max_ - self.data_min_)
        return raw[0] if squeeze else raw

    @staticmethod
    def _as_matrix(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return X[None, :]
        if X.ndim != 2:
            raise ValueError(f"expected 1-D or 2-D input, got shape {X.shape}")
        return X

    def _check_input(self, X):
        if not hasattr(self, "data_min_"):
            raise NotFittedError(
                "MinMaxNormalizer is not fitted; call fit(train_samples) first"
            )
        squeeze = np.asarray(X).ndim == 1
        X = self._as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"input has {X.shape[1]} dimensions, normalizer was fit on "
                f"{self.n_features_in_}"
            )
        return X, squeeze
