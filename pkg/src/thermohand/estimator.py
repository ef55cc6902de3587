"""scikit-learn style wrapper around the multi-task network."""
from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .domain import Annotation, GestureVocabulary, Handedness, Sample
from .evaluation import MatchConfig, MetricsReport, compute_metrics
from .heatmap import DecodeConfig, HeatmapConfig
from .inference import annotations_from_outputs, predict_outputs
from .network import NetworkConfig, load_checkpoint, save_checkpoint
from .training import LossWeights, OptimizerConfig, TrainReport, train
from .validation import check_annotations, check_images


class HandPoseEstimator(BaseEstimator):
    """Predicts gesture, handedness and keypoints from 100x100 binary hand images.

    ``fit(X, y)`` takes images ``X`` and a list of :class:`Annotation` (or
    annotation dicts) ``y``; ``predict`` returns annotations in the same
    schema. Defaults are the reference SGD recipe.

    Parameters
    ----------
    network : NetworkConfig, optional
        Layer widths; defaults to the full-size network.
    epochs, batch_size, learning_rate, momentum, weight_decay
        SGD settings.
    alpha, beta, gamma : float
        Keypoint, gesture and handedness loss weights.
    vocabulary : GestureVocabulary, optional
        Finger visibility per gesture.
    gaussian_variance : float
        Variance of the target heatmap blobs, in heatmap pixels squared.
    wrist_min_separation : float
        Minimum distance between the two decoded wrists, heatmap pixels.
    match_radius : float
        Keypoint correctness radius used by :meth:`score` and :meth:`evaluate`.
    random_state : int
    out_dir : path, optional
        Where to write the run directory (history, checkpoints).
    """

    def __init__(self, network=None, epochs=100, batch_size=32, learning_rate=0.001, momentum=0.95,
                 weight_decay=1e-3, alpha=0.77, beta=0.15, gamma=0.08, vocabulary=None,
                 gaussian_variance=1.5, wrist_min_separation=5.0, match_radius=5.0,
                 random_state=0, out_dir=None):
        self.network = network
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.vocabulary = vocabulary
        self.gaussian_variance = gaussian_variance
        self.wrist_min_separation = wrist_min_separation
        self.match_radius = match_radius
        self.random_state = random_state
        self.out_dir = out_dir

    def _configs(self):
        return (
            self.network or NetworkConfig(),
            OptimizerConfig(self.learning_rate, self.weight_decay, self.momentum, self.batch_size,
                            self.epochs, int(self.random_state or 0)),
            LossWeights(self.alpha, self.beta, self.gamma),
            HeatmapConfig(gaussian_variance=self.gaussian_variance),
            DecodeConfig(self.wrist_min_separation),
        )

    @staticmethod
    def _samples(X, y) -> List[Sample]:
        return [Sample(img[0], a.gesture, Handedness(a.handedness), a.keypoints) for img, a in zip(X, y)]

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_images(X)
        y = check_annotations(y, len(X))
        val = []
        if X_val is not None:
            X_val = check_images(X_val)
            val = self._samples(X_val, check_annotations(y_val, len(X_val)))
        net, opt, weights, hm, _ = self._configs()
        self.vocabulary_ = self.vocabulary or GestureVocabulary.default()
        self.model_, self.train_report_ = train(self._samples(X, y), val, self.vocabulary_, net, opt,
                                                weights, self.out_dir, hm)
        self.n_parameters_ = sum(p.numel() for p in self.model_.parameters())
        return self

    def predict_outputs(self, X) -> dict:
        """Raw probabilities: ``gesture_probs`` (N, 10), ``handedness_prob`` (N,), ``heatmaps`` (N, 6, 50, 50)."""
        check_is_fitted(self, "model_")
        return predict_outputs(self.model_, check_images(X))

    def predict_proba(self, X) -> np.ndarray:
        return self.predict_outputs(X)["gesture_probs"]

    def predict(self, X) -> List[Annotation]:
        _, _, _, hm, dec = self._configs()
        return annotations_from_outputs(self.predict_outputs(X), self.vocabulary_, hm, dec)

    def evaluate(self, X, y) -> MetricsReport:
        y = check_annotations(y, len(check_images(X)))
        return compute_metrics(self.predict(X), y, MatchConfig(self.match_radius))

    def score(self, X, y) -> float:
        """Mean of gesture, handedness, fingertip and wrist accuracies, in [0, 1]."""
        report = self.evaluate(X, y)
        return float(np.mean([t["accuracy"] for t in report.tasks.values()]) / 100.0)

    def save(self, path) -> Path:
        check_is_fitted(self, "model_")
        return save_checkpoint(self.model_, path, self.vocabulary_,
                               {"estimator_params": _jsonable(self.get_params())})

    @classmethod
    def load(cls, path) -> "HandPoseEstimator":
        model, vocab, sidecar = load_checkpoint(path)
        params = dict(sidecar.get("estimator_params", {}))
        params.pop("network", None)
        params.pop("vocabulary", None)
        est = cls(network=model.cfg, vocabulary=vocab, **params)
        est.model_, est.vocabulary_ = model, vocab
        est.n_parameters_ = sum(p.numel() for p in model.parameters())
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, NetworkConfig):
            v = v.to_dict()
        elif isinstance(v, GestureVocabulary):
            v = v.to_dict()
        elif isinstance(v, Path):
            v = str(v)
        out[k] = v
    return out
