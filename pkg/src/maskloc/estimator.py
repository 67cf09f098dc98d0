"""scikit-learn style front end for the full detection pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .classifier import TrainConfig, train
from .detector import DetectorConfig, detect
from .evalkit import centers_to_boxes, map50

__all__ = ["GaussianMaskDetector"]


def _check_images(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError(f"expected square images shaped (n, side, side), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    return X


class GaussianMaskDetector(BaseEstimator):
    """Trains a presence classifier on image-level labels, then localizes.

    ``fit(X, y)`` only needs 0/1 presence labels. ``predict(X)`` returns one
    list of :class:`~maskloc.detector.Detection` per image. ``score`` takes
    ground-truth center lists and returns mAP50.

    Parameters
    ----------
    radius_nm, nm_per_px : float
        Known particle radius and image scale.
    stop_threshold : float
        Classifier score threshold for verification and stopping.
    """

    def __init__(
        self,
        radius_nm=30.0,
        nm_per_px=5.0,
        stop_threshold=0.5,
        max_detections=12,
        sigma_min_factor=1.0,
        init="gradcam",
        fill="mean",
        score_mode="mask_other",
        pdf_normalized=False,
        epochs=25,
        learning_rate=0.02,
        random_state=0,
    ):
        self.radius_nm = radius_nm
        self.nm_per_px = nm_per_px
        self.stop_threshold = stop_threshold
        self.max_detections = max_detections
        self.sigma_min_factor = sigma_min_factor
        self.init = init
        self.fill = fill
        self.score_mode = score_mode
        self.pdf_normalized = pdf_normalized
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _config(self):
        return DetectorConfig(
            radius_nm=self.radius_nm,
            stop_threshold=self.stop_threshold,
            max_detections=self.max_detections,
            sigma_min_factor=self.sigma_min_factor,
            init=self.init,
            fill=self.fill,
            score_mode=self.score_mode,
            pdf_normalized=self.pdf_normalized,
        )

    def fit(self, X, y):
        X = _check_images(X)
        y = np.asarray(y).astype(int).ravel()
        if len(y) != len(X):
            raise ValueError(f"{len(X)} images but {len(y)} labels")
        self.config_ = self._config()
        cfg = TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate, seed=self.random_state)
        self.model_ = train(list(zip(X, y)), cfg)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = _check_images(X)
        return [
            detect(self.model_, img, self.config_, self.nm_per_px, np.random.default_rng([self.random_state, i]))
            for i, img in enumerate(X)
        ]

    def score(self, X, centers):
        """mAP50 of :meth:`predict` against per-image ground-truth centers."""
        per_image = self.predict(X)
        r = self.radius_nm / self.nm_per_px
        gts = [centers_to_boxes(c, r) for c in centers]
        return map50([[(d.box, d.score) for d in dets] for dets in per_image], gts)
