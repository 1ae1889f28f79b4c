"""scikit-learn style front end for fitting and scoring multi-view flows."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_masks
from .exceptions import DataError
from .scoring import score_instance
from .training import TrainConfig, fit_flow

__all__ = ["MultiFlowDetector"]


class MultiFlowDetector(BaseEstimator):
    """Normalizing-flow anomaly detector over groups of camera views.

    ``X`` holds one row per object instance: ``(N, V, C, H, W)`` feature
    maps with view 0 the top view and views 1..V-1 the side ring.  Masks
    are optional foreground maps ``(N, V, H, W)``; pixels outside them are
    ignored both in training and in scoring.

    Higher anomaly scores are more anomalous.  ``score_samples`` follows the
    scikit-learn outlier convention and returns the negated sample score.
    """

    def __init__(self, epochs=112, learning_rate=2e-4, weight_decay=1e-5, beta1=0.9,
                 beta2=0.95, clamp_alpha=1.9, blocks=6, hidden_dim=64,
                 top_view_connections=True, neighbor_view_connections=True,
                 noise_kind="simplenet", c_squared=0.15, cross_kernel=1,
                 include_logdet=True, random_state=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.clamp_alpha = clamp_alpha
        self.blocks = blocks
        self.hidden_dim = hidden_dim
        self.top_view_connections = top_view_connections
        self.neighbor_view_connections = neighbor_view_connections
        self.noise_kind = noise_kind
        self.c_squared = c_squared
        self.cross_kernel = cross_kernel
        self.include_logdet = include_logdet
        self.random_state = random_state

    def _train_config(self):
        params = self.get_params()
        params.pop("include_logdet")
        params["seed"] = int(params.pop("random_state") or 0)
        return TrainConfig(**params)

    def fit(self, X, masks=None, y=None):
        """Fit on normal instances only; ``y`` is accepted and ignored."""
        X = check_features(X)
        masks = check_masks(masks, X)
        self.checkpoint_ = fit_flow(X, masks, self._train_config())
        self._set_fitted_attributes()
        return self

    @classmethod
    def from_checkpoint(cls, ckpt, include_logdet=True):
        """Wrap a trained checkpoint without retraining."""
        cfg = ckpt.config.to_dict()
        cfg["random_state"] = cfg.pop("seed")
        est = cls(include_logdet=include_logdet, **cfg)
        est.checkpoint_ = ckpt
        est._set_fitted_attributes()
        return est

    def _set_fitted_attributes(self):
        ckpt = self.checkpoint_
        self.model_ = ckpt.model
        self.loss_history_ = list(ckpt.loss_history)
        self.input_shape_ = tuple(ckpt.model.input_shape)
        self.n_views_ = self.input_shape_[0]

    def _prepare(self, X, masks):
        check_is_fitted(self, "checkpoint_")
        X = check_features(X)
        if X.shape[1:] != self.input_shape_:
            raise DataError(f"instances have shape {X.shape[1:]}, "
                            f"the detector was fitted on {self.input_shape_}")
        return X, check_masks(masks, X)

    def _maps(self, X, masks):
        return [score_instance(self.model_, x, m, i, self.include_logdet)
                for i, (x, m) in enumerate(zip(X, masks))]

    def transform(self, X, masks=None):
        """Per-pixel anomaly maps, shape (N, V, H, W); background set to NaN."""
        X, masks = self._prepare(X, masks)
        out = np.stack([a.values for a in self._maps(X, masks)])
        return np.where(masks > 0, out, np.nan)

    def image_scores(self, X, masks=None):
        """Maximum over each view's foreground, shape (N, V)."""
        X, masks = self._prepare(X, masks)
        out = []
        for a in self._maps(X, masks):
            if not all(a.mask[v].any() for v in range(a.n_views)):
                raise DataError(f"instance {a.instance_id} has a view without foreground")
            out.append(np.where(a.mask > 0, a.values, -np.inf).max(axis=(1, 2)))
        return np.stack(out)

    def sample_scores(self, X, masks=None):
        """Maximum over the views of each instance, shape (N,)."""
        return self.image_scores(X, masks).max(axis=1)

    def score_samples(self, X, masks=None):
        return -self.sample_scores(X, masks)

    @property
    def checkpoint(self):
        check_is_fitted(self, "checkpoint_")
        return self.checkpoint_

