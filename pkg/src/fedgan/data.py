"""IDX container parsing, federated partitioning, and pixel-noise synthesis.

The IDX layout is the classic big-endian MNIST/EMNIST container:
bytes [0, 0, dtype, ndim], then ndim 32-bit big-endian dimension sizes,
then the row-major payload. Only dtype 0x08 (unsigned byte) is supported;
pixels map to [0, 1] via division by 255.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .rng import make_rng
from .tensor import Tensor

__all__ = [
    "IdxFormatError",
    "LabeledImageSet",
    "ClientShard",
    "parse_idx",
    "serialize_idx",
    "load_labeled_set",
    "partition_clients",
    "add_pixel_noise",
    "fixture_paths",
]

IMAGE_HW = 28


class IdxFormatError(ValueError):
    """Malformed IDX payload; the message carries the failing byte offset."""


def _parse_idx_raw(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise IdxFormatError(f"truncated IDX header at offset {len(buf)}")
    if buf[0] != 0 or buf[1] != 0:
        raise IdxFormatError(f"bad IDX magic prefix at offset 0: {buf[:2].hex()}")
    dtype, ndim = buf[2], buf[3]
    if dtype != 0x08:
        raise IdxFormatError(f"unsupported IDX dtype 0x{dtype:02x} at offset 2")
    if ndim == 0:
        raise IdxFormatError("zero-dimensional IDX tensor at offset 3")
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise IdxFormatError(f"truncated IDX dimension table at offset {len(buf)}")
    dims = struct.unpack(f">{ndim}I", buf[4:header_end])
    n_values = int(np.prod(dims, dtype=np.int64))
    payload_end = header_end + n_values
    if len(buf) < payload_end:
        raise IdxFormatError(
            f"truncated IDX payload at offset {len(buf)} (expected {payload_end} bytes)"
        )
    if len(buf) > payload_end:
        raise IdxFormatError(f"trailing data in IDX file at offset {payload_end}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header_end).reshape(dims)


def parse_idx(buf: bytes, normalize: bool = True) -> Tensor:
    """Decode an IDX byte string; u8 values map to [0,1] unless normalize=False."""
    raw = _parse_idx_raw(buf)
    if normalize:
        return Tensor(raw.astype(np.float64) / 255.0)
    return Tensor(raw.astype(np.float64))


def serialize_idx(t: Tensor) -> bytes:
    """Encode a [0,1]-valued tensor as IDX unsigned bytes (v -> round(v*255))."""
    data = t.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValueError("serialize_idx expects values in [0, 1]")
    header = bytes([0, 0, 0x08, t.ndim]) + struct.pack(f">{t.ndim}I", *t.shape)
    payload = np.rint(data * 255.0).astype(np.uint8).tobytes()
    return header + payload


@dataclass(frozen=True)
class LabeledImageSet:
    """Images [n,1,28,28] with values in [0,1] plus integer class labels."""

    images: Tensor
    labels: np.ndarray

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        if self.images.ndim != 4 or self.images.shape[1:] != (1, IMAGE_HW, IMAGE_HW):
            raise ValueError(
                f"images must be [n,1,{IMAGE_HW},{IMAGE_HW}], got {self.images.shape}"
            )
        n = self.images.shape[0]
        if n == 0:
            raise ValueError("empty image set")
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} vs {n} images")
        if labels.min() < 0:
            raise ValueError("negative class label")
        if self.images.data.min() < 0.0 or self.images.data.max() > 1.0:
            raise ValueError("pixel values outside [0, 1]")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "LabeledImageSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImageSet(
            images=Tensor(self.images.data[indices]),
            labels=self.labels[indices],
        )


@dataclass(frozen=True)
class ClientShard:
    """One simulated user's private examples."""

    user_id: str
    data: LabeledImageSet


def load_labeled_set(images_path, labels_path) -> LabeledImageSet:
    with open(images_path, "rb") as f:
        images = parse_idx(f.read())
    with open(labels_path, "rb") as f:
        labels = _parse_idx_raw(f.read())
    if images.ndim != 3:
        raise IdxFormatError(f"expected [n,h,w] image file, got shape {images.shape}")
    n, h, w = images.shape
    return LabeledImageSet(
        images=images.reshape((n, 1, h, w)),
        labels=labels.astype(np.int64),
    )


def partition_clients(
    dataset: LabeledImageSet,
    n_clients: int,
    scheme: str = "uniform_iid",
    seed: int = 0,
    alpha: float = 0.3,
) -> list[ClientShard]:
    """Split a dataset into disjoint per-user shards covering every example.

    uniform_iid deals a seeded permutation out in near-equal chunks, so
    shard sizes differ by at most one. by_label_skew gives every client
    a target label distribution drawn from a symmetric Dirichlet(alpha)
    and fills its quota by sampling classes from that distribution while
    per-class pools last; smaller alpha concentrates each client on
    fewer classes. Both schemes produce non-empty shards whose union is
    exactly the input.
    """
    n = dataset.n
    if n_clients < 1:
        raise ValueError("n_clients must be positive")
    if n_clients > n:
        raise ValueError(f"n_clients={n_clients} exceeds dataset size {n}")
    rng = make_rng(seed)
    if scheme == "uniform_iid":
        parts = np.array_split(rng.permutation(n), n_clients)
    elif scheme == "by_label_skew":
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        parts = _label_skew_parts(dataset.labels, n_clients, alpha, rng)
    else:
        raise ValueError(f"unknown partition scheme {scheme!r}")
    return [
        ClientShard(user_id=f"client_{i:05d}", data=dataset.subset(part))
        for i, part in enumerate(parts)
    ]


def _label_skew_parts(
    labels: np.ndarray, n_clients: int, alpha: float, rng: np.random.Generator
) -> list[np.ndarray]:
    n = len(labels)
    classes = np.unique(labels)
    pools = {int(c): list(rng.permutation(np.flatnonzero(labels == c))) for c in classes}
    quotas = np.full(n_clients, n // n_clients)
    quotas[: n % n_clients] += 1
    parts = []
    for i in range(n_clients):
        target = rng.dirichlet(np.full(len(classes), alpha))
        taken = []
        for _ in range(quotas[i]):
            weights = np.array([target[j] if pools[int(c)] else 0.0 for j, c in enumerate(classes)])
            total = weights.sum()
            if total == 0.0:
                weights = np.array([float(len(pools[int(c)])) for c in classes])
                total = weights.sum()
            c = int(rng.choice(classes, p=weights / total))
            taken.append(pools[c].pop())
        parts.append(np.sort(np.asarray(taken, dtype=np.int64)))
    return parts


def add_pixel_noise(images: Tensor, level: float, seed: int) -> Tensor:
    """Additive Gaussian pixel noise with std `level`, clamped back to [0,1]."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"noise level must be in [0, 1], got {level}")
    if level == 0.0:
        return images
    rng = make_rng(seed)
    noisy = images.data + level * rng.standard_normal(images.shape)
    return Tensor(np.clip(noisy, 0.0, 1.0))


def fixture_paths() -> dict[str, str]:
    """Paths of the bundled handwritten-digit fixture files."""
    base = resources.files("fedgan") / "fixture"
    return {
        "train_images": str(base / "train-images-idx3-ubyte"),
        "train_labels": str(base / "train-labels-idx1-ubyte"),
        "heldout_images": str(base / "heldout-images-idx3-ubyte"),
        "heldout_labels": str(base / "heldout-labels-idx1-ubyte"),
    }
