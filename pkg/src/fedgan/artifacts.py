"""Binary-exact artifact emission: PGM sample grids."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["write_pgm_grid", "GRID_TILES", "format_pgm_grid"]

GRID_TILES = (8, 8)
TILE_HW = 28


def format_pgm_grid(images: Tensor) -> bytes:
    """8x8 tile grid of 28x28 images as a binary P5 PGM (maxval 255).

    Tiles are laid out row-major in image order; pixel = round(v * 255).
    """
    rows, cols = GRID_TILES
    n = rows * cols
    if images.shape != (n, 1, TILE_HW, TILE_HW):
        raise ShapeError(
            f"sample grid expects [{n},1,{TILE_HW},{TILE_HW}], got {images.shape}"
        )
    tiles = images.data.reshape(rows, cols, TILE_HW, TILE_HW)
    canvas = tiles.transpose(0, 2, 1, 3).reshape(rows * TILE_HW, cols * TILE_HW)
    if canvas.min() < 0.0 or canvas.max() > 1.0:
        raise ValueError("grid pixels outside [0, 1]")
    payload = np.rint(canvas * 255.0).astype(np.uint8).tobytes()
    header = f"P5\n{cols * TILE_HW} {rows * TILE_HW}\n255\n".encode("ascii")
    return header + payload


def write_pgm_grid(images: Tensor, path) -> None:
    with open(path, "wb") as f:
        f.write(format_pgm_grid(images))
