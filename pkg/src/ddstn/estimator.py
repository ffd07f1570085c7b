"""scikit-learn compatible front end.

The privileged (source) modality is passed to ``fit`` as ``X_source``, an
array aligned with ``X`` whose rows are all-NaN for samples that only have
the target modality::

    clf = DDSTNClassifier(epochs=100).fit(X, y, X_source=S)
    clf.predict(X_test)          # target modality only

Labels may be any two classes; ``classes_[1]`` is treated as the positive
class.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import type_of_target
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datagen import BimodalDataset
from .losses import Hyperparams
from .networks import forward, image_backbone, vector_backbone
from .training import ALGORITHMS, ChannelSpecs, OptimizerConfig, TrainConfig, train


def split_modalities(X, y, X_source):
    """Validate inputs and split them into a :class:`BimodalDataset`.

    Returns ``(dataset, classes)``. A row of ``X_source`` must be either fully
    finite (paired sample) or fully NaN (target-only sample).
    """
    X, y = check_X_y(X, y, dtype=np.float64)
    if type_of_target(y) != "binary":
        raise ValueError(f"DDSTNClassifier is a binary classifier; got target type {type_of_target(y)!r}")
    classes = np.unique(y)
    if len(classes) != 2:
        raise ValueError(f"need exactly two classes, got {len(classes)}")
    y_pm = np.where(y == classes[1], 1.0, -1.0)
    if X_source is None:
        raise ValueError("X_source is required: pass NaN rows for samples without the source modality")
    S = check_array(X_source, dtype=np.float64, ensure_all_finite="allow-nan")
    if S.shape[0] != X.shape[0]:
        raise ValueError(f"X_source has {S.shape[0]} rows but X has {X.shape[0]}")
    missing = np.isnan(S)
    paired = ~missing.any(axis=1)
    partial = missing.any(axis=1) & ~missing.all(axis=1)
    if partial.any():
        raise ValueError(f"X_source row {int(np.flatnonzero(partial)[0])} is only partly NaN")
    if not paired.any() or paired.all():
        raise ValueError("need both paired rows (finite X_source) and target-only rows (NaN X_source)")
    ids = np.array([f"r{i}" for i in range(X.shape[0])])
    ds = BimodalDataset(
        ids[paired].tolist(), S[paired], X[paired], y_pm[paired],
        ids[~paired].tolist(), X[~paired], y_pm[~paired],
    )
    return ds, classes


class DDSTNClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Two-channel network trained with the doubly supervised objective or a baseline.

    Parameters
    ----------
    algorithm : {"ddstn", "cnn_svm", "cnn_svm_plus", "ddc", "dan", "deep_coral"}
    hidden, feature_dim : int
        Width of the first dense layer and of the penultimate features.
    image_shape : tuple or None
        If set, rows of ``X`` and ``X_source`` are flattened images of this
        shape and the convolutional backbone is used.
    C1, C2, lambda1, lambda2, mmd_kernel, bandwidths, lupi_penalty, include_paired_target
        Loss weights, see :class:`ddstn.losses.Hyperparams`.
    random_state : int
        Seeds initialisation and minibatch order.
    """

    def __init__(
        self,
        algorithm="ddstn",
        hidden=64,
        feature_dim=32,
        image_shape=None,
        epochs=150,
        paired_batch_size=32,
        unpaired_batch_size=32,
        optimizer="adam",
        learning_rate=1e-3,
        C1=1.0,
        C2=1.0,
        lambda1=1.0,
        lambda2=0.5,
        mmd_kernel="linear",
        bandwidths=None,
        lupi_penalty=1.0,
        include_paired_target=False,
        coupling_mode="symmetric",
        random_state=0,
    ):
        self.algorithm = algorithm
        self.hidden = hidden
        self.feature_dim = feature_dim
        self.image_shape = image_shape
        self.epochs = epochs
        self.paired_batch_size = paired_batch_size
        self.unpaired_batch_size = unpaired_batch_size
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.C1 = C1
        self.C2 = C2
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.mmd_kernel = mmd_kernel
        self.bandwidths = bandwidths
        self.lupi_penalty = lupi_penalty
        self.include_paired_target = include_paired_target
        self.coupling_mode = coupling_mode
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        hp = Hyperparams(
            C1=self.C1, C2=self.C2, lambda1=self.lambda1, lambda2=self.lambda2,
            mmd_kernel=self.mmd_kernel,
            bandwidths=None if self.bandwidths is None else tuple(self.bandwidths),
            lupi_penalty=self.lupi_penalty, include_paired_target=self.include_paired_target,
        )
        return TrainConfig(
            epochs=self.epochs,
            paired_batch_size=self.paired_batch_size,
            unpaired_batch_size=self.unpaired_batch_size,
            optimizer=OptimizerConfig(method=self.optimizer, lr=self.learning_rate),
            hyperparams=hp,
            coupling_mode=self.coupling_mode,
            seed=int(self.random_state or 0),
        )

    def _specs(self, ds: BimodalDataset) -> ChannelSpecs:
        if self.image_shape is not None:
            shape = tuple(self.image_shape)
            layers = image_backbone(feature_dim=self.feature_dim)
            return ChannelSpecs(layers, list(layers), shape, shape)
        layers = vector_backbone(self.hidden, self.feature_dim)
        return ChannelSpecs(layers, list(layers), (ds.dim_s,), (ds.dim_t,))

    def fit(self, X, y, X_source=None):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        ds, self.classes_ = split_modalities(X, y, X_source)
        self.n_features_in_ = ds.dim_t
        self.model_ = train(self.algorithm, ds, self._specs(ds), self._train_config())
        self.history_ = list(self.model_.history)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return forward(self.model_.target, X)["scores"]

    def predict(self, X):
        scores = self.decision_function(X)
        return np.where(scores >= 0, self.classes_[1], self.classes_[0])

    def transform(self, X):
        """Penultimate-layer features of the target channel."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return forward(self.model_.target, X)["features"]
