"""Generator and discriminator for 28x28 single-channel images.

Generator: dense(latent -> 7*7*32), two stride-2 transposed-conv blocks
up to 28x28, tanh rescaled into [0,1]. Discriminator: two stride-2 conv
blocks with LeakyReLU(0.2) down to 7x7, then a single-logit dense head.
Class conditioning (on by default) concatenates a learned label
embedding to the latent and a learned per-class plane to the
discriminator input; it exists so that classifier-based metrics are
well-defined.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .nn import (
    conv_forward,
    conv_params,
    conv_transpose_forward,
    conv_transpose_params,
    dense_forward,
    dense_params,
)
from .rng import make_rng
from .tensor import ParamSet, ShapeError, Tensor

__all__ = [
    "GanModels",
    "init_gan",
    "generate",
    "disc_loss_and_grads",
    "gen_loss_and_grads",
]

GEN_BASE_CHANNELS = 32
DISC_CHANNELS = (16, 32)
EMBED_DIM = 16
IMAGE_HW = 28


@dataclass(frozen=True)
class GanModels:
    """Parameter sets plus the architecture flags they were built with."""

    generator: ParamSet
    discriminator: ParamSet
    z_dim: int = 64
    conditional: bool = True
    num_classes: int = 10

    def with_generator(self, params: ParamSet) -> "GanModels":
        self.generator.require_compatible(params, "with_generator")
        return replace(self, generator=params)

    def with_discriminator(self, params: ParamSet) -> "GanModels":
        self.discriminator.require_compatible(params, "with_discriminator")
        return replace(self, discriminator=params)


def init_gan(
    seed: int, z_dim: int = 64, conditional: bool = True, num_classes: int = 10
) -> GanModels:
    rng = make_rng(seed)
    gen_in = z_dim + (EMBED_DIM if conditional else 0)
    c = GEN_BASE_CHANNELS
    gen_entries = []
    if conditional:
        gen_entries.append(
            ("embed", Tensor(0.1 * rng.standard_normal((num_classes, EMBED_DIM))))
        )
    gen_entries += dense_params(rng, "fc", gen_in, 7 * 7 * c)
    gen_entries += conv_transpose_params(rng, "up1", c, c // 2, 4, 4)
    gen_entries += conv_transpose_params(rng, "up2", c // 2, 1, 4, 4)

    disc_in = 2 if conditional else 1
    d1, d2 = DISC_CHANNELS
    disc_entries = []
    if conditional:
        disc_entries.append(
            ("embed", Tensor(0.1 * rng.standard_normal((num_classes, IMAGE_HW * IMAGE_HW))))
        )
    disc_entries += conv_params(rng, "conv1", d1, disc_in, 4, 4)
    disc_entries += conv_params(rng, "conv2", d2, d1, 4, 4)
    disc_entries += dense_params(rng, "out", d2 * 7 * 7, 1)

    return GanModels(
        generator=ParamSet(gen_entries),
        discriminator=ParamSet(disc_entries),
        z_dim=z_dim,
        conditional=conditional,
        num_classes=num_classes,
    )


def _check_labels(models: GanModels, labels, batch: int, context: str):
    if models.conditional:
        if labels is None:
            raise ValueError(f"{context}: conditional model needs labels")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (batch,):
            raise ShapeError(f"{context}: labels shape {labels.shape} vs batch {batch}")
        if labels.size and (labels.min() < 0 or labels.max() >= models.num_classes):
            raise ValueError(f"{context}: label outside [0, {models.num_classes})")
        return labels
    if labels is not None:
        raise ValueError(f"{context}: unconditional model takes no labels")
    return None


def _onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    if labels.size:
        out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def generator_graph(
    g: ad.Graph, p: dict, models: GanModels, latents: np.ndarray, labels
) -> ad.Node:
    c = GEN_BASE_CHANNELS
    z = g.constant(latents)
    if models.conditional:
        onehot = g.constant(_onehot(labels, models.num_classes))
        z = ad.concat([z, ad.matmul(onehot, p["embed"])], axis=1)
    h = ad.relu(ad.reshape(dense_forward(p, "fc", z), (latents.shape[0], c, 7, 7)))
    h = ad.relu(conv_transpose_forward(p, "up1", h, stride=2, padding=1))
    h = conv_transpose_forward(p, "up2", h, stride=2, padding=1)
    return ad.affine(ad.tanh(h), 0.5, 0.5)  # [0,1] pixels


def discriminator_graph(
    g: ad.Graph, p: dict, models: GanModels, images: ad.Node, labels
) -> ad.Node:
    x = images
    batch = x.value.shape[0]
    if models.conditional:
        onehot = g.constant(_onehot(labels, models.num_classes))
        plane = ad.reshape(ad.matmul(onehot, p["embed"]), (batch, 1, IMAGE_HW, IMAGE_HW))
        x = ad.concat([x, plane], axis=1)
    h = ad.leaky_relu(conv_forward(p, "conv1", x, stride=2, padding=1), 0.2)
    h = ad.leaky_relu(conv_forward(p, "conv2", h, stride=2, padding=1), 0.2)
    h = ad.reshape(h, (batch, DISC_CHANNELS[1] * 7 * 7))
    return dense_forward(p, "out", h)


def generate(models: GanModels, latents: Tensor, labels=None) -> Tensor:
    """Deterministic forward pass of the generator; pixels land in [0,1]."""
    if latents.ndim != 2 or latents.shape[1] != models.z_dim:
        raise ShapeError(
            f"latents must be [batch, {models.z_dim}], got {latents.shape}"
        )
    labels = _check_labels(models, labels, latents.shape[0], "generate")
    g = ad.Graph()
    p = g.bind_constant(models.generator)
    out = generator_graph(g, p, models, latents.data, labels)
    images = Tensor(out.value)
    if images.size and (images.data.min() < 0.0 or images.data.max() > 1.0):
        raise ValueError("generator produced pixels outside [0, 1]")
    return images


def disc_loss_and_grads(
    models: GanModels,
    real: Tensor,
    fake: Tensor,
    real_labels=None,
    fake_labels=None,
) -> tuple[float, ParamSet]:
    """Binary cross-entropy discriminator loss and its gradients.

    loss = mean[-log sigmoid(D(real))] + mean[-log(1 - sigmoid(D(fake)))];
    gradients flow to the discriminator only.
    """
    if real.shape != fake.shape:
        raise ShapeError(f"real/fake shape mismatch: {real.shape} vs {fake.shape}")
    batch = real.shape[0]
    real_labels = _check_labels(models, real_labels, batch, "disc real")
    fake_labels = _check_labels(models, fake_labels, batch, "disc fake")
    g = ad.Graph()
    p = g.bind(models.discriminator)
    real_logits = discriminator_graph(g, p, models, g.constant(real), real_labels)
    fake_logits = discriminator_graph(g, p, models, g.constant(fake), fake_labels)
    loss = ad.add(
        ad.bce_with_logits_mean(real_logits, np.ones((batch, 1))),
        ad.bce_with_logits_mean(fake_logits, np.zeros((batch, 1))),
    )
    return float(loss.value), ad.grad(loss, models.discriminator)


def gen_loss_and_grads(
    models: GanModels, latents: Tensor, labels=None
) -> tuple[float, ParamSet]:
    """Non-saturating generator loss mean[-log sigmoid(D(G(z)))].

    The discriminator is frozen inside this graph; gradients flow to the
    generator only. This is the quantity logged as gen_loss.
    """
    if latents.ndim != 2 or latents.shape[1] != models.z_dim:
        raise ShapeError(
            f"latents must be [batch, {models.z_dim}], got {latents.shape}"
        )
    batch = latents.shape[0]
    labels = _check_labels(models, labels, batch, "gen loss")
    g = ad.Graph()
    gen_p = g.bind(models.generator)
    disc_p = g.bind_constant(models.discriminator)
    images = generator_graph(g, gen_p, models, latents.data, labels)
    logits = discriminator_graph(g, disc_p, models, images, labels)
    loss = ad.bce_with_logits_mean(logits, np.ones((batch, 1)))
    return float(loss.value), ad.grad(loss, models.generator)
