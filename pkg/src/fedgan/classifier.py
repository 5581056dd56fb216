"""Small conv classifier; doubles as the frozen feature extractor behind
the Frechet-distance proxy and the generated-sample accuracy metric."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import autodiff as ad
from .nn import conv_forward, conv_params, dense_forward, dense_params
from .optim import Adam
from .rng import derive_seed, make_rng
from .tensor import ParamSet, Tensor
from .validation import check_images, check_labels

__all__ = ["ConvNetClassifier"]

CONV_CHANNELS = (8, 16)

_STREAM_INIT = 0
_STREAM_SHUFFLE = 1


def _init_params(seed: int, num_classes: int, feature_dim: int) -> ParamSet:
    rng = make_rng(seed)
    c1, c2 = CONV_CHANNELS
    entries = []
    entries += conv_params(rng, "conv1", c1, 1, 4, 4)
    entries += conv_params(rng, "conv2", c2, c1, 4, 4)
    entries += dense_params(rng, "fc1", c2 * 7 * 7, feature_dim)
    entries += dense_params(rng, "fc2", feature_dim, num_classes)
    return ParamSet(entries)


def _feature_graph(g: ad.Graph, p: dict, images: ad.Node) -> ad.Node:
    c2 = CONV_CHANNELS[1]
    batch = images.value.shape[0]
    h = ad.relu(conv_forward(p, "conv1", images, stride=2, padding=1))
    h = ad.relu(conv_forward(p, "conv2", h, stride=2, padding=1))
    h = ad.reshape(h, (batch, c2 * 7 * 7))
    return ad.relu(dense_forward(p, "fc1", h))


def _logit_graph(g: ad.Graph, p: dict, images: ad.Node) -> ad.Node:
    return dense_forward(p, "fc2", _feature_graph(g, p, images))


class ConvNetClassifier(BaseEstimator, ClassifierMixin):
    """Conv-conv-dense classifier for 28x28 images.

    The penultimate dense layer (width feature_dim, default 64) is the
    embedding used for feature-space metrics; after fit() the parameters
    never change, so feature outputs are reproducible across a whole
    experiment.
    """

    def __init__(
        self,
        num_classes: int = 10,
        feature_dim: int = 64,
        epochs: int = 12,
        batch_size: int = 32,
        lr: float = 1e-3,
        seed: int = 0,
    ):
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, X, y):
        images = check_images(X)
        labels = check_labels(y, images.shape[0], self.num_classes)
        params = _init_params(
            derive_seed(self.seed, _STREAM_INIT), self.num_classes, self.feature_dim
        )
        opt = Adam(params, lr=self.lr)
        n = images.shape[0]
        for epoch in range(self.epochs):
            order = make_rng(derive_seed(self.seed, _STREAM_SHUFFLE, epoch)).permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                g = ad.Graph()
                p = g.bind(params)
                logits = _logit_graph(g, p, g.constant(images[idx]))
                loss = ad.softmax_ce_mean(logits, labels[idx])
                params = opt.step(params, ad.grad(loss, params))
        self.params_ = params
        self.classes_ = np.arange(self.num_classes)
        self.train_accuracy_ = float(np.mean(self.predict(images) == labels))
        return self

    def _forward(self, X, head) -> np.ndarray:
        self._require_fitted()
        images = check_images(X)
        g = ad.Graph()
        p = g.bind_constant(self.params_)
        return head(g, p, g.constant(images)).value

    def predict_logits(self, X) -> np.ndarray:
        return self._forward(X, _logit_graph)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_logits(X), axis=1)

    def features(self, X) -> np.ndarray:
        """Penultimate-layer embedding, [n, feature_dim]."""
        return self._forward(X, _feature_graph)

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("classifier is not fitted; call fit() first")
