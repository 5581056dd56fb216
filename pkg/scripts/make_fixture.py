#!/usr/bin/env python3
"""Regenerate the bundled handwritten-digit fixture files.

Upsamples scikit-learn's 8x8 digits to 28x28 and writes two disjoint
IDX pairs (512 train, 256 held-out) under src/fedgan/fixture/. The
output is deterministic, so regenerating must reproduce the committed
files byte for byte.
"""

from pathlib import Path

import numpy as np
from scipy import ndimage
from sklearn.datasets import load_digits

from fedgan.data import serialize_idx
from fedgan.tensor import Tensor

SEED = 20240711
N_TRAIN = 512
N_HELDOUT = 256
OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "fedgan" / "fixture"


def upsample(img8: np.ndarray) -> np.ndarray:
    img = ndimage.zoom(img8 / 16.0, 28 / 8, order=1, mode="nearest", grid_mode=True)
    return np.clip(img, 0.0, 1.0)


def main() -> None:
    digits = load_digits()
    rng = np.random.default_rng(SEED)
    order = rng.permutation(len(digits.images))
    picked = order[: N_TRAIN + N_HELDOUT]
    images = np.stack([upsample(digits.images[i]) for i in picked])
    labels = digits.target[picked].astype(np.uint8)

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    splits = {
        "train": (images[:N_TRAIN], labels[:N_TRAIN]),
        "heldout": (images[N_TRAIN:], labels[N_TRAIN:]),
    }
    for name, (imgs, labs) in splits.items():
        image_bytes = serialize_idx(Tensor(imgs))
        label_bytes = bytes([0, 0, 0x08, 1]) + len(labs).to_bytes(4, "big") + labs.tobytes()
        (OUT_DIR / f"{name}-images-idx3-ubyte").write_bytes(image_bytes)
        (OUT_DIR / f"{name}-labels-idx1-ubyte").write_bytes(label_bytes)
        print(f"{name}: {imgs.shape[0]} images -> {OUT_DIR}")


if __name__ == "__main__":
    main()
