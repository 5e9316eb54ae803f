"""scikit-learn style wrappers around direct INR fitting and hypernetwork training.

``INRRegressor`` treats one clip as a regression from time coordinate to
amplitude. ``HyperINR`` is a transformer from waveforms to INR weight vectors;
``inverse_transform`` renders weight vectors back into waveforms.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from . import hypernet, inr, train
from .errors import ShapeError
from .signal import DEFAULT_SAMPLE_RATE, AudioClip, make_grid


def check_waveforms(X, length=None, name="X"):
    """Return ``X`` as a float (n_clips, n_samples) array with values in [-1, 1]."""
    X = check_array(X, dtype=(np.float64, np.float32), ensure_2d=False, input_name=name)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ShapeError(f"{name} must be (n_clips, n_samples), got shape {X.shape}")
    if length is not None and X.shape[1] < length:
        raise ShapeError(f"{name} has {X.shape[1]} samples per clip, need at least {length}")
    if np.max(np.abs(X)) > 1.0:
        raise ValueError(f"{name} samples must lie in [-1, 1]")
    return X if length is None else X[:, :length]


def check_coordinates(X, name="X"):
    """Return ``X`` as a 1-D coordinate vector; accepts (n,) or (n, 1)."""
    X = check_array(X, dtype=np.float64, ensure_2d=False, input_name=name)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 1:
        raise ShapeError(f"{name} must be (n,) or (n, 1) coordinates, got shape {X.shape}")
    return X


class INRRegressor(RegressorMixin, BaseEstimator):
    """Fit one target network to (coordinate, amplitude) pairs."""

    def __init__(self, kind="siren", hidden_widths=(32, 32, 32, 32, 32), embedding_L=10,
                 omega_0=2000.0, omega_i=30.0, steps=5000, lr=1e-4, objective="mse", seed=0):
        self.kind = kind
        self.hidden_widths = hidden_widths
        self.embedding_L = embedding_L
        self.omega_0 = omega_0
        self.omega_i = omega_i
        self.steps = steps
        self.lr = lr
        self.objective = objective
        self.seed = seed

    def _spec(self):
        return inr.TargetNetworkSpec(kind=self.kind, embedding_L=self.embedding_L,
                                     hidden_widths=tuple(self.hidden_widths),
                                     omega_0=self.omega_0, omega_i=self.omega_i)

    def fit(self, X, y):
        coords = check_coordinates(X)
        y = check_array(y, dtype=np.float64, ensure_2d=False, input_name="y").ravel()
        if y.shape[0] != coords.shape[0]:
            raise ShapeError(f"X has {coords.shape[0]} coordinates, y has {y.shape[0]} samples")
        self.spec_ = self._spec()
        cfg = train.FitConfig(steps=self.steps, lr=self.lr, seed=self.seed, objective=self.objective)
        result = train.fit_individual_inr(AudioClip(y), self.spec_, cfg, coords=coords)
        self.theta_, self.shared_ = result.theta, result.shared
        self.loss_curve_ = np.asarray(result.loss_curve)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "theta_")
        return inr.forward(self.spec_, self.theta_, self.shared_, check_coordinates(X))

    def render(self, n_samples):
        """Evaluate on an evenly spaced grid of ``n_samples`` points over [-1, 1]."""
        check_is_fitted(self, "theta_")
        return inr.render(self.spec_, self.theta_, self.shared_, n_samples)


class HyperINR(TransformerMixin, BaseEstimator):
    """Hypernetwork that maps fixed-length waveforms to INR weights."""

    def __init__(self, hyper_spec=None, train_config=None, init="auto", seed=0,
                 sample_rate=DEFAULT_SAMPLE_RATE):
        self.hyper_spec = hyper_spec
        self.train_config = train_config
        self.init = init
        self.seed = seed
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        spec = self.hyper_spec or hypernet.HypernetworkSpec()
        cfg = self.train_config or train.TrainConfig()
        if cfg.seed != self.seed:
            cfg = train.replace(cfg, seed=self.seed)
        X = check_waveforms(X, spec.input_len)
        clips = [AudioClip(x, self.sample_rate) for x in X]
        result = train.train_hypernetwork(clips, spec, cfg, init=self.init)
        self.state_ = result.state
        self.history_ = result.history
        self.n_features_in_ = spec.input_len
        return self

    def transform(self, X):
        """Weight vectors, shape (n_clips, param_count)."""
        check_is_fitted(self, "state_")
        X = check_waveforms(X, self.state_.spec.input_len)
        return np.concatenate([hypernet.generate(self.state_, X[i : i + 16])
                               for i in range(0, len(X), 16)])

    def inverse_transform(self, X, n_samples=None):
        """Render weight vectors back to waveforms (default length: the input length)."""
        check_is_fitted(self, "state_")
        spec = self.state_.spec
        theta = check_array(X, dtype=(np.float32, np.float64), input_name="X")
        if theta.shape[1] != inr.param_count(spec.target):
            raise ShapeError(f"expected {inr.param_count(spec.target)} weights per row, "
                             f"got {theta.shape[1]}")
        grid = make_grid(n_samples or spec.input_len)
        return inr.forward(spec.target, theta, self.state_.shared, grid)

    def predict(self, X):
        """Reconstruction of each input clip."""
        return self.inverse_transform(self.transform(X))
