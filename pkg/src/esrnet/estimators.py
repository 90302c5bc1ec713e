"""Estimator facade with the usual fit/predict surface.

``EsrClassifier`` wraps architecture loading, the sequential trainer, and
vote fusion behind the scikit-learn estimator contract, so the ensemble
drops into pipelines, grid search, and cross-validation tooling. Inputs
are image batches (N, C, H, W) already preprocessed to the architecture's
input shape; labels are integers in [0, num_classes).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .architecture import ArchitectureConfig, load_architecture
from .metrics import ensemble_affect, ensemble_vote, softmax_probs
from .training import (
    LrSchedule,
    TrainConfig,
    TrainData,
    fine_tune_affect,
    train_esr,
)
from .validation import (
    check_affect,
    check_image_batch,
    check_labels,
    check_matching_length,
)


class EsrClassifier(ClassifierMixin, BaseEstimator):
    """Shared-trunk ensemble classifier, scikit-learn style.

    Parameters mirror :class:`esrnet.training.TrainConfig`; ``architecture``
    is a packaged config name (``toy``, ``lab``, ``wild``), a JSON path, or
    an :class:`ArchitectureConfig`. ``level`` overrides the branching split
    when non-zero.
    """

    def __init__(self, architecture="toy", level=0, num_branches=2,
                 strategy="fixed", epochs_per_branch=5, batch_size=32,
                 lr=0.1, lr_decay=0.75, lr_every=10, momentum=0.9,
                 subset_policy="full", subset_cap=0, seed=0, vote="plurality"):
        self.architecture = architecture
        self.level = level
        self.num_branches = num_branches
        self.strategy = strategy
        self.epochs_per_branch = epochs_per_branch
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_every = lr_every
        self.momentum = momentum
        self.subset_policy = subset_policy
        self.subset_cap = subset_cap
        self.seed = seed
        self.vote = vote

    def _architecture(self) -> ArchitectureConfig:
        cfg = self.architecture
        if not isinstance(cfg, ArchitectureConfig):
            cfg = load_architecture(cfg)
        if self.level:
            cfg = cfg.at_level(self.level)
        return cfg

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            strategy=self.strategy,
            num_branches=self.num_branches,
            epochs_per_branch=self.epochs_per_branch,
            batch_size=self.batch_size,
            momentum=self.momentum,
            schedule=LrSchedule(self.lr, self.lr_decay, self.lr_every),
            seed=self.seed,
            subset_policy=self.subset_policy,
            subset_cap=self.subset_cap,
        )

    def fit(self, X, y, subjects=None):
        """Grow and train the ensemble on preprocessed image batches."""
        config = self._architecture()
        X = check_image_batch(X, channels=config.input_shape[0])
        y = check_labels(y, config.num_classes)
        check_matching_length(X, y)
        if subjects is not None:
            subjects = np.asarray(subjects)
            check_matching_length(X, subjects, "subject ids")
        data = TrainData(X, y, subjects=subjects)
        result = train_esr(config, data, self._train_config())
        self.model_ = result.model
        self.result_ = result
        self.classes_ = np.arange(config.num_classes)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this EsrClassifier is not fitted; call fit first")

    def predict(self, X):
        self._check_fitted()
        X = check_image_batch(X, channels=self.model_.config.input_shape[0])
        logits = self.model_.predict_logits(X, batch_size=self.batch_size)
        return self.classes_[ensemble_vote(logits, method=self.vote)]

    def predict_proba(self, X):
        """Branch-averaged softmax probabilities, (N, num_classes)."""
        self._check_fitted()
        X = check_image_batch(X, channels=self.model_.config.input_shape[0])
        logits = self.model_.predict_logits(X, batch_size=self.batch_size)
        return softmax_probs(logits).mean(axis=0)

    def branch_predict(self, X) -> np.ndarray:
        """Per-branch argmax labels, (num_branches, N), before fusion."""
        self._check_fitted()
        X = check_image_batch(X, channels=self.model_.config.input_shape[0])
        return self.model_.predict_logits(X, batch_size=self.batch_size).argmax(axis=2)

    # -- affect extension --------------------------------------------------

    def fit_affect(self, X, arousal, valence, epochs=10, lr=0.01, cap=0):
        """Attach the 2-neuron heads and tune them; emotion weights freeze."""
        self._check_fitted()
        X = check_image_batch(X, channels=self.model_.config.input_shape[0])
        arousal = check_affect(arousal, len(X), "arousal")
        valence = check_affect(valence, len(X), "valence")
        data = TrainData(X, arousal=arousal, valence=valence)
        cfg = TrainConfig(num_branches=self.model_.num_branches,
                          epochs_per_branch=epochs, batch_size=self.batch_size,
                          schedule=LrSchedule(lr, self.lr_decay, self.lr_every),
                          seed=self.seed, subset_policy="full", subset_cap=cap)
        fine_tune_affect(self.model_, data, cfg)
        return self

    def predict_affect(self, X) -> np.ndarray:
        """Head-averaged (arousal, valence) per sample, (N, 2)."""
        self._check_fitted()
        if not self.model_.has_affect_heads:
            raise NotFittedError("affect heads not tuned; call fit_affect first")
        X = check_image_batch(X, channels=self.model_.config.input_shape[0])
        return ensemble_affect(self.model_.predict_affect(X, batch_size=self.batch_size))
