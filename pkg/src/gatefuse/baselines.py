"""Sensor-free reference predictors and the ridge linear regressor.

The constant and sampling baselines use only the training-label histogram;
they never look at a sensor value. The ridge regressor solves the
regularized normal equations in closed form on centered data, with an
unregularized intercept, over robust-scaled statistical features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import EmptyHistogram, SingularSystem
from .validation import check_fitted, check_fold_tag, check_labels
from .windows import round_half_away

LABELS = (1, 2, 3, 4, 5)


@dataclass
class LabelHistogram:
    """Counts for labels 1..5 over a training set."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (5,):
            raise ValueError("histogram needs exactly five counts")
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be non-negative")
        if self.total == 0:
            raise EmptyHistogram("histogram has zero total count")

    @classmethod
    def from_labels(cls, labels) -> "LabelHistogram":
        labels = check_labels(labels)
        return cls(np.bincount(labels, minlength=6)[1:6])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def proportions(self) -> np.ndarray:
        return self.counts / self.total

    def mean_label(self) -> float:
        return float(np.dot(self.counts, LABELS) / self.total)

    def mode_label(self) -> int:
        # argmax returns the first maximum, i.e. the smaller label on ties
        return int(np.argmax(self.counts)) + 1


class MeanBaseline(BaseEstimator, RegressorMixin):
    """Constant predictor: the rounded training-label mean, clipped to 1..5."""

    def fit(self, X, y=None):
        labels = y if y is not None else X
        self.histogram_ = (labels if isinstance(labels, LabelHistogram)
                           else LabelHistogram.from_labels(labels))
        self.constant_ = int(np.clip(round_half_away(self.histogram_.mean_label()), 1, 5))
        return self

    def predict(self, X):
        check_fitted(self, "constant_")
        return np.full(_n_rows(X), self.constant_, dtype=np.int64)

    predict_labels = predict


class ModeBaseline(BaseEstimator, RegressorMixin):
    """Constant predictor: the most frequent training label (ties -> smaller)."""

    def fit(self, X, y=None):
        labels = y if y is not None else X
        self.histogram_ = (labels if isinstance(labels, LabelHistogram)
                           else LabelHistogram.from_labels(labels))
        self.constant_ = self.histogram_.mode_label()
        return self

    def predict(self, X):
        check_fitted(self, "constant_")
        return np.full(_n_rows(X), self.constant_, dtype=np.int64)

    predict_labels = predict


class RandomBaseline(BaseEstimator, RegressorMixin):
    """Draws i.i.d. labels from the empirical training distribution.

    Each predict call reseeds from ``seed``, so prediction is a pure
    function of (histogram, seed, n).
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def fit(self, X, y=None):
        labels = y if y is not None else X
        self.histogram_ = (labels if isinstance(labels, LabelHistogram)
                           else LabelHistogram.from_labels(labels))
        return self

    def predict(self, X):
        check_fitted(self, "histogram_")
        rng = np.random.default_rng(self.seed)
        return rng.choice(np.array(LABELS), size=_n_rows(X),
                          p=self.histogram_.proportions())

    predict_labels = predict


def _n_rows(X) -> int:
    if isinstance(X, (int, np.integer)):
        return int(X)
    if hasattr(X, "__len__"):
        return len(X)
    raise TypeError("X must be a row count or a sized collection")


def mean_baseline(hist: LabelHistogram) -> MeanBaseline:
    return MeanBaseline().fit(hist)


def mode_baseline(hist: LabelHistogram) -> ModeBaseline:
    return ModeBaseline().fit(hist)


def random_baseline(hist: LabelHistogram, seed: int = 0) -> RandomBaseline:
    return RandomBaseline(seed=seed).fit(hist)


class RidgeRegressor(BaseEstimator, RegressorMixin):
    """Closed-form ridge over centered data; the intercept is unregularized.

    Solves (Xc^T Xc + alpha I) w = Xc^T yc with Xc, yc mean-centered;
    the intercept recovers the means. Labels are expected on the encoded
    0..4 scale.
    """

    def __init__(self, alpha: float = 1.0, fold_tag=None):
        self.alpha = alpha
        self.fold_tag = fold_tag

    def fit(self, X, y):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError("X must be 2-D with one row per label")
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        Xc = X - x_mean
        yc = y - y_mean
        gram = Xc.T @ Xc + self.alpha * np.eye(X.shape[1])
        try:
            self.coef_ = np.linalg.solve(gram, Xc.T @ yc)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"normal equations unsolvable: {exc}") from exc
        if not np.all(np.isfinite(self.coef_)):
            raise SingularSystem("normal equations produced non-finite weights")
        self.intercept_ = float(y_mean - x_mean @ self.coef_)
        return self

    def predict(self, X, fold=None):
        check_fitted(self, "coef_")
        check_fold_tag(self.fold_tag, fold)
        X = np.asarray(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_


def ridge_fit(features, labels_encoded, alpha: float = 1.0,
              fold_tag=None) -> RidgeRegressor:
    return RidgeRegressor(alpha=alpha, fold_tag=fold_tag).fit(features, labels_encoded)


def ridge_predict(model: RidgeRegressor, vector, fold=None):
    arr = np.atleast_2d(np.asarray(vector, dtype=np.float64))
    out = model.predict(arr, fold=fold)
    return float(out[0]) if np.asarray(vector).ndim == 1 else out
