"""Convolutional denoising autoencoder trained at one fixed noise level.

Two stride-2 conv layers (16 then 8 channels) encode 28x28 down to 7x7,
two stride-2 transposed-conv layers decode back, and a sigmoid head pins
the output to [0,1]. Training minimizes the mean squared error between
decode(noisy(x)) and x at a single noise level; applying the model at
other levels is exactly the mismatch the probe utilities quantify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from .data import LabeledImageSet, add_pixel_noise
from .nn import (
    conv_forward,
    conv_params,
    conv_transpose_forward,
    conv_transpose_params,
    load_param_set,
    save_param_set,
)
from .optim import Adam
from .rng import derive_seed, make_rng
from .tensor import ParamSet, ShapeError, Tensor
from .validation import check_images

__all__ = [
    "Autoencoder",
    "ProbeResult",
    "init_autoencoder",
    "train_autoencoder",
    "denoise",
    "mismatch_probe",
    "save_autoencoder",
    "load_autoencoder",
    "DenoisingAutoencoder",
]

ENC_CHANNELS = (16, 8)
IMAGE_HW = 28

_NOISE_LEVEL_KEY = "meta.trained_noise_level"

# rng stream ids within train_autoencoder's seed
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1
_STREAM_NOISE = 2


@dataclass(frozen=True)
class Autoencoder:
    """Trained parameters plus the noise level they were trained at."""

    params: ParamSet
    trained_noise_level: float
    train_losses: tuple[float, ...] = ()


@dataclass(frozen=True)
class ProbeResult:
    level: float
    mse_noisy: float
    mse_denoised: float


def init_autoencoder(seed: int) -> ParamSet:
    rng = make_rng(seed)
    c1, c2 = ENC_CHANNELS
    entries = []
    entries += conv_params(rng, "enc1", c1, 1, 4, 4)
    entries += conv_params(rng, "enc2", c2, c1, 4, 4)
    entries += conv_transpose_params(rng, "dec1", c2, c1, 4, 4)
    entries += conv_transpose_params(rng, "dec2", c1, 1, 4, 4)
    return ParamSet(entries)


def autoencoder_graph(g: ad.Graph, p: dict, images: ad.Node) -> ad.Node:
    h = ad.relu(conv_forward(p, "enc1", images, stride=2, padding=1))
    h = ad.relu(conv_forward(p, "enc2", h, stride=2, padding=1))
    h = ad.relu(conv_transpose_forward(p, "dec1", h, stride=2, padding=1))
    h = conv_transpose_forward(p, "dec2", h, stride=2, padding=1)
    return ad.sigmoid(h)


def train_autoencoder(
    clean: LabeledImageSet,
    noise_level: float,
    epochs: int,
    batch: int,
    seed: int,
    lr: float = 2e-3,
) -> Autoencoder:
    """Train on (noisy, clean) pairs; deterministic given the seed.

    Every epoch shuffles the set with a derived seed, corrupts each batch
    with fresh derived-noise draws, and takes one Adam step per batch on
    the reconstruction MSE. epochs=0 returns the initialized model as is.
    """
    if not 0.0 <= noise_level <= 1.0:
        raise ValueError(f"noise level must be in [0, 1], got {noise_level}")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if batch < 1:
        raise ValueError("batch size must be positive")
    params = init_autoencoder(derive_seed(seed, _STREAM_INIT))
    opt = Adam(params, lr=lr)
    n = clean.n
    step = 0
    epoch_losses = []
    for epoch in range(epochs):
        order = make_rng(derive_seed(seed, _STREAM_SHUFFLE, epoch)).permutation(n)
        batch_losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            target = Tensor(clean.images.data[idx])
            noisy = add_pixel_noise(target, noise_level, derive_seed(seed, _STREAM_NOISE, step))
            g = ad.Graph()
            p = g.bind(params)
            loss = ad.mse_mean(autoencoder_graph(g, p, g.constant(noisy)), g.constant(target))
            grads = ad.grad(loss, params)
            params = opt.step(params, grads)
            batch_losses.append(float(loss.value))
            step += 1
        epoch_losses.append(float(np.mean(batch_losses)))
    return Autoencoder(
        params=params,
        trained_noise_level=noise_level,
        train_losses=tuple(epoch_losses),
    )


def denoise(model: Autoencoder, images: Tensor) -> Tensor:
    """Pure forward pass; output shape equals input shape, pixels in [0,1]."""
    if images.ndim != 4 or images.shape[1:] != (1, IMAGE_HW, IMAGE_HW):
        raise ShapeError(
            f"denoise expects [batch,1,{IMAGE_HW},{IMAGE_HW}], got {images.shape}"
        )
    g = ad.Graph()
    p = g.bind_constant(model.params)
    out = autoencoder_graph(g, p, g.constant(images))
    return Tensor(out.value)


def mismatch_probe(
    model: Autoencoder, clean: Tensor, probe_levels, seed: int = 0
) -> list[ProbeResult]:
    """Reconstruction error before/after denoising at each probe level.

    Probing away from the trained level surfaces the failure mode where
    the model shifts even clean images toward gray.
    """
    results = []
    for i, level in enumerate(probe_levels):
        noisy = add_pixel_noise(clean, float(level), derive_seed(seed, 0, i))
        denoised = denoise(model, noisy)
        results.append(
            ProbeResult(
                level=float(level),
                mse_noisy=float(np.mean((noisy.data - clean.data) ** 2)),
                mse_denoised=float(np.mean((denoised.data - clean.data) ** 2)),
            )
        )
    return results


def save_autoencoder(model: Autoencoder, path) -> None:
    entries = list(model.params) + [
        (_NOISE_LEVEL_KEY, Tensor([model.trained_noise_level]))
    ]
    save_param_set(ParamSet(entries), path)


def load_autoencoder(path) -> Autoencoder:
    loaded = load_param_set(path)
    if _NOISE_LEVEL_KEY not in loaded:
        raise ValueError(f"{path}: missing {_NOISE_LEVEL_KEY} entry")
    level = float(loaded[_NOISE_LEVEL_KEY].data[0])
    params = ParamSet((n, t) for n, t in loaded if n != _NOISE_LEVEL_KEY)
    return Autoencoder(params=params, trained_noise_level=level)


class DenoisingAutoencoder(BaseEstimator, TransformerMixin):
    """Scikit-learn style wrapper: fit on clean images, transform denoises.

    X may be [n,1,28,28], [n,28,28] or [n,784] with pixels in [0,1];
    transform returns the same layout it was given.
    """

    def __init__(
        self,
        noise_level: float = 0.2,
        epochs: int = 20,
        batch_size: int = 32,
        lr: float = 2e-3,
        seed: int = 0,
    ):
        self.noise_level = noise_level
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, X, y=None):
        images = check_images(X)
        clean = LabeledImageSet(
            images=Tensor(images), labels=np.zeros(images.shape[0], dtype=np.int64)
        )
        self.model_ = train_autoencoder(
            clean,
            noise_level=self.noise_level,
            epochs=self.epochs,
            batch=self.batch_size,
            seed=self.seed,
            lr=self.lr,
        )
        self.train_losses_ = list(self.model_.train_losses)
        return self

    def transform(self, X):
        self._require_fitted()
        original_shape = np.asarray(X).shape if not isinstance(X, Tensor) else X.shape
        images = check_images(X)
        out = denoise(self.model_, Tensor(images))
        return out.data.reshape(original_shape).copy()

    def probe(self, X, levels, seed: int = 0) -> list[ProbeResult]:
        self._require_fitted()
        images = check_images(X)
        return mismatch_probe(self.model_, Tensor(images), levels, seed=seed)

    def save(self, path) -> None:
        self._require_fitted()
        save_autoencoder(self.model_, path)

    @classmethod
    def load(cls, path) -> "DenoisingAutoencoder":
        model = load_autoencoder(path)
        est = cls(noise_level=model.trained_noise_level)
        est.model_ = model
        est.train_losses_ = []
        return est

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit() or load() first")
