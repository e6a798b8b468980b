"""scikit-learn compatible regressors wrapping the from-scratch networks.

Both estimators map the training inputs affinely onto [-1, 1] and apply the
same map at prediction time, so extrapolation queries land outside [-1, 1].
A ``validation_fraction`` of the training points is held out for early
stopping: evenly spaced across the window by default, or the last points in
input order with ``validation_mode="tail"``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .net import TrainConfig, build_varied_depth, init_network, train
from .validation import check_scalar_input, check_scalar_xy


class _NetRegressor(RegressorMixin, BaseEstimator):

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                           batch_size=self.batch_size, validation_fraction=self.validation_fraction,
                           patience=self.patience, seed=self.random_state,
                           validation_mode=self.validation_mode)

    def fit(self, X, y):
        x, y = check_scalar_xy(X, y)
        order = np.argsort(x, kind="stable")
        x, y = x[order], y[order]
        lo, hi = float(x[0]), float(x[-1])
        self.input_shift_ = 0.5 * (lo + hi)
        self.input_scale_ = 0.5 * (hi - lo) if hi > lo else 1.0
        self.n_features_in_ = 1
        model = self._build()
        self.model_, self.history_ = train(model, self.normalize(x), y, self._train_config())
        return self

    def normalize(self, X) -> np.ndarray:
        """Map raw inputs into the network's coordinates (train window -> [-1, 1])."""
        check_is_fitted(self, "input_shift_")
        x = check_scalar_input(X)
        return (x - self.input_shift_) / self.input_scale_

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.predict(self.normalize(X))

    def saturation_limits(self) -> tuple[float, float]:
        """Prediction limits ``(x -> -inf, x -> +inf)`` from sign propagation."""
        check_is_fitted(self, "model_")
        return self.model_.saturation_limit(-1), self.model_.saturation_limit(1)


class StandardNetRegressor(_NetRegressor):
    """Plain MLP; the benchmark baseline uses three sigmoid layers of width 16."""

    def __init__(self, hidden_layer_sizes=(16, 16, 16), activation="sigmoid",
                 learning_rate=1e-2, max_epochs=20000, patience=1000,
                 validation_fraction=0.2, validation_mode="interleaved", batch_size=None,
                 random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.validation_mode = validation_mode
        self.batch_size = batch_size
        self.random_state = random_state

    def _build(self):
        return init_network(self.hidden_layer_sizes, self.activation, self.random_state)


class VariedDepthRegressor(_NetRegressor):
    """Trainable linear combination of subnetworks with distinct depths."""

    def __init__(self, depths=(1, 2, 3), width=16, activation="sigmoid",
                 learning_rate=1e-2, max_epochs=20000, patience=1000,
                 validation_fraction=0.2, validation_mode="interleaved", batch_size=None,
                 random_state=0):
        self.depths = depths
        self.width = width
        self.activation = activation
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.validation_mode = validation_mode
        self.batch_size = batch_size
        self.random_state = random_state

    def _build(self):
        return build_varied_depth(self.depths, self.width, self.activation, self.random_state)


def make_regressor(model_tag: str, **params):
    """``"standard"`` or ``"proposed"`` -> unfitted estimator."""
    if model_tag == "standard":
        return StandardNetRegressor(**params)
    if model_tag == "proposed":
        return VariedDepthRegressor(**params)
    raise ValueError(f"unknown model tag {model_tag!r}; expected 'standard' or 'proposed'")
