"""scikit-learn wrappers for the two pieces that really are fit/transform shaped:
the benchmark score as a transformer over metric columns, and the SSIM no-edit
baseline as a threshold classifier over image pairs."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import imaging
from .models import MetricVector
from .scoring import geometric_score
from .taxonomy import Metric


class GeometricMeanScorer(BaseEstimator, TransformerMixin):
    """Map rows of judge scores (one column per metric) to the benchmark score.

    >>> GeometricMeanScorer(metrics=("IF", "NC", "VQ")).fit_transform([[8, 8, 8]])
    array([[8.]])
    """

    def __init__(self, metrics=("IF", "NC", "VQ")):
        self.metrics = metrics

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.metrics_ = tuple(Metric(m) for m in self.metrics)
        if X.shape[1] != len(self.metrics_):
            raise ValueError(f"expected {len(self.metrics_)} metric columns, got {X.shape[1]}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "metrics_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} metric columns, got {X.shape[1]}")
        out = np.empty((X.shape[0], 1))
        for i, row in enumerate(X):
            v = MetricVector.from_scores({m.value: x for m, x in zip(self.metrics_, row)})
            out[i, 0] = geometric_score(v, self.metrics_)
        return out


def _as_gray(img) -> imaging.GrayImage:
    return img if isinstance(img, imaging.GrayImage) else imaging.GrayImage(np.asarray(img, dtype=float))


class SsimNoEditClassifier(BaseEstimator, ClassifierMixin):
    """Label an (original, edited) pair as no-edit (1) when SSIM reaches ``threshold``.

    ``threshold="auto"`` picks, during ``fit``, the cut between observed SSIM
    values that maximizes training accuracy (ties go to the lowest cut).
    X is a sequence of image pairs (GrayImage or 2-D arrays in [0, 1]).
    """

    def __init__(self, threshold=0.95, window=11, k1=0.01, k2=0.03):
        self.threshold = threshold
        self.window = window
        self.k1 = k1
        self.k2 = k2

    def _similarities(self, X) -> np.ndarray:
        params = imaging.SsimParams(window=self.window, k1=self.k1, k2=self.k2)
        return np.array([imaging.ssim(_as_gray(a), _as_gray(b), params) for a, b in X])

    def fit(self, X, y):
        y = np.asarray(y, dtype=int)
        s = self._similarities(X)
        if len(s) != len(y):
            raise ValueError("X and y lengths differ")
        self.classes_ = np.array([0, 1])
        if self.threshold == "auto":
            values = np.unique(s)
            cuts = np.concatenate([[values[0]], (values[:-1] + values[1:]) / 2, [np.nextafter(values[-1], np.inf)]])
            acc = [np.mean((s >= c).astype(int) == y) for c in cuts]
            self.threshold_ = float(cuts[int(np.argmax(acc))])
        else:
            self.threshold_ = float(self.threshold)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "threshold_")
        return self._similarities(X) - self.threshold_

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(int)
