"""scikit-learn style wrappers around the trainer, the quantized model and the explainer.

Feature matrices are 2-D: one row per video, ``frames * features`` columns
in row-major (frame, feature) order, as produced by MotionFeatureExtractor.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .encoder import encode_model
from .explain import check_axp, explain_whynot, explain_why
from .fixedpoint import FixedPointFormat
from .model import ModelSpec, argmax_lowest, dequantize_grid, float_forward, quantized_forward
from .videoharness import SyntheticVideo, extract_features, train_model


def check_feature_rows(X, model: ModelSpec) -> np.ndarray:
    """Validate a 2-D feature matrix against a model's input grid and reshape to (n, T, D)."""
    X = check_array(X, dtype=float)
    T, D = model.input_shape
    if X.shape[1] != T * D:
        raise ValueError(f"X has {X.shape[1]} columns, model expects {T * D} ({T} frames x {D} features)")
    return X.reshape(-1, T, D)


class MotionFeatureExtractor(TransformerMixin, BaseEstimator):
    """Videos (or raw (T, H, W) frame stacks) -> flattened centroid-displacement rows."""

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        rows = []
        for v in X:
            if not isinstance(v, SyntheticVideo):
                v = SyntheticVideo(np.asarray(v), -1)
            rows.append(extract_features(v).reshape(-1))
        return np.array(rows)


class QuantizedVideoClassifier(ClassifierMixin, BaseEstimator):
    def __init__(self, frames=2, hidden=(8,), epochs=200, lr=0.05, seed=7,
                 weight_bits=6, weight_frac=3, act_bits=4, act_frac=2):
        self.frames = frames
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.weight_bits = weight_bits
        self.weight_frac = weight_frac
        self.act_bits = act_bits
        self.act_frac = act_frac

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] % self.frames:
            raise ValueError(f"{X.shape[1]} columns do not split into {self.frames} frames")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        grids = X.reshape(len(X), self.frames, -1)
        self.model_, self.train_accuracy_ = train_model(
            grids, y_idx, tuple(self.hidden), self.epochs, self.lr, self.seed, num_classes=len(self.classes_),
            weight_format=FixedPointFormat(self.weight_bits, self.weight_frac),
            act_format=FixedPointFormat(self.act_bits, self.act_frac))
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        """Dequantized logits of the fixed-point forward pass."""
        check_is_fitted(self, "model_")
        out = []
        for g in check_feature_rows(X, self.model_):
            q = quantized_forward(self.model_, g)
            out.append(dequantize_grid(q.mantissas, q.fmt))
        return np.array(out, dtype=float)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[[argmax_lowest(list(s)) for s in scores]]

    def predict_float(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        grids = check_feature_rows(X, self.model_)
        return self.classes_[[argmax_lowest(list(float_forward(self.model_, g))) for g in grids]]


class SatExplainer(BaseEstimator):
    """Encodes a model once; answers why / why-not queries on feature rows."""

    def __init__(self, mode="entailment", granularity="bits", backend="internal", order_seed=None):
        self.mode = mode
        self.granularity = granularity
        self.backend = backend
        self.order_seed = order_seed

    def fit(self, model, y=None):
        if isinstance(model, QuantizedVideoClassifier):
            check_is_fitted(model, "model_")
            self.classes_ = model.classes_
            model = model.model_
        elif not isinstance(model, ModelSpec):
            raise TypeError("fit expects a ModelSpec or a fitted QuantizedVideoClassifier")
        else:
            self.classes_ = np.arange(model.num_classes)
        self.model_ = model
        self.encoded_ = encode_model(model)
        return self

    def _grid(self, x) -> np.ndarray:
        check_is_fitted(self, "encoded_")
        return check_feature_rows(np.asarray(x, dtype=float).reshape(1, -1), self.model_)[0]

    def explain_why(self, x):
        return explain_why(self.encoded_, self._grid(x), self.mode, self.order_seed, backend=self.backend)

    def explain_whynot(self, x, target):
        idx = int(np.flatnonzero(self.classes_ == target)[0]) if target in self.classes_ else -1
        return explain_whynot(self.encoded_, self._grid(x), idx, self.granularity, backend=self.backend)

    def check(self, x, features, target) -> bool:
        idx = int(np.flatnonzero(self.classes_ == target)[0])
        return check_axp(self.encoded_, self._grid(x), features, idx, backend=self.backend)

    def transform(self, X) -> np.ndarray:
        """Boolean mask per row: True where the feature belongs to the returned explanation."""
        check_is_fitted(self, "encoded_")
        T, D = self.model_.input_shape
        out = np.zeros((len(X), T * D), dtype=bool)
        for i, x in enumerate(check_array(X, dtype=float)):
            for t, d in self.explain_why(x).features:
                out[i, t * D + d] = True
        return out
