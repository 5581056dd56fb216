"""Dense float64 tensors and named parameter collections.

Tensors are immutable wrappers around C-contiguous float64 numpy arrays.
Every construction path validates finiteness, so any value that escapes
this module is guaranteed NaN/Inf free. The raw convolution kernels used
by the autodiff layer live here as pure array functions.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "Tensor",
    "ParamSet",
    "conv2d",
    "conv2d_transpose",
    "conv2d_output_hw",
    "conv2d_transpose_output_hw",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NumericError(ArithmeticError):
    """A NaN or Inf appeared where only finite values are allowed."""


def _as_array(values, context: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{context}: non-finite values")
    return arr


class Tensor:
    """An n-dimensional array of float64 values, immutable once built."""

    __slots__ = ("_data",)

    def __init__(self, values):
        arr = _as_array(values, "Tensor")
        arr.flags.writeable = False
        object.__setattr__(self, "_data", arr)

    @staticmethod
    def zeros(shape: Sequence[int]) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float64))

    @staticmethod
    def full(shape: Sequence[int], value: float) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=np.float64))

    @property
    def data(self) -> np.ndarray:
        """Read-only ndarray view of the contents."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def ndim(self) -> int:
        return self._data.ndim

    def numpy(self) -> np.ndarray:
        """Writable copy of the contents."""
        return self._data.copy()

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        try:
            return Tensor(self._data.reshape(shape))
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {self.shape} to {tuple(shape)}") from exc

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __add__(self, other: "Tensor") -> "Tensor":
        return Tensor(self._data + _same_shape(self, other)._data)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return Tensor(self._data - _same_shape(self, other)._data)

    def __mul__(self, scalar: float) -> "Tensor":
        return Tensor(self._data * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and bool(np.array_equal(self._data, other._data))
        )

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _same_shape(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(b, Tensor):
        raise TypeError(f"expected Tensor, got {type(b).__name__}")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return b


class ParamSet:
    """Ordered, named collection of tensors; one model's parameters.

    Order and names are fixed at construction. Two sets are compatible
    when names, order and shapes all agree; the vector-space operations
    below require compatibility and treat the set as one flat vector.
    """

    __slots__ = ("_names", "_tensors", "_index")

    def __init__(self, entries: Iterable[tuple[str, Tensor]]):
        names = []
        tensors = []
        index = {}
        for name, value in entries:
            if not isinstance(value, Tensor):
                value = Tensor(value)
            if name in index:
                raise ValueError(f"duplicate parameter name {name!r}")
            index[name] = len(names)
            names.append(name)
            tensors.append(value)
        self._names = tuple(names)
        self._tensors = tuple(tensors)
        self._index = index

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def flat_len(self) -> int:
        return sum(t.size for t in self._tensors)

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(zip(self._names, self._tensors))

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[self._index[name]]

    def compatible_with(self, other: "ParamSet") -> bool:
        return (
            isinstance(other, ParamSet)
            and self._names == other._names
            and all(a.shape == b.shape for a, b in zip(self._tensors, other._tensors))
        )

    def require_compatible(self, other: "ParamSet", context: str = "ParamSet") -> None:
        if not self.compatible_with(other):
            raise ShapeError(f"{context}: incompatible parameter sets")

    def replace(self, name: str, value: Tensor) -> "ParamSet":
        if value.shape != self[name].shape:
            raise ShapeError(
                f"replace {name!r}: shape {value.shape} vs {self[name].shape}"
            )
        return ParamSet(
            (n, value if n == name else t) for n, t in self
        )

    def map(self, fn) -> "ParamSet":
        """New set with fn applied to each tensor (shapes must be preserved)."""
        out = ParamSet((n, fn(t)) for n, t in self)
        out.require_compatible(self, "map")
        return out

    def add(self, other: "ParamSet") -> "ParamSet":
        self.require_compatible(other, "add")
        return ParamSet((n, a + b) for (n, a), (_, b) in zip(self, other))

    def sub(self, other: "ParamSet") -> "ParamSet":
        self.require_compatible(other, "sub")
        return ParamSet((n, a - b) for (n, a), (_, b) in zip(self, other))

    def scale(self, factor: float) -> "ParamSet":
        return ParamSet((n, t * factor) for n, t in self)

    def l2_norm(self) -> float:
        total = 0.0
        for _, t in self:
            total += float(np.dot(t.data.reshape(-1), t.data.reshape(-1)))
        return float(np.sqrt(total))

    def to_flat(self) -> np.ndarray:
        if not self._tensors:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate([t.data.reshape(-1) for t in self._tensors])

    def from_flat(self, flat: np.ndarray) -> "ParamSet":
        """Rebuild a compatible set from one flat vector."""
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.size != self.flat_len:
            raise ShapeError(f"flat length {flat.size} vs expected {self.flat_len}")
        entries = []
        offset = 0
        for name, t in self:
            entries.append((name, Tensor(flat[offset : offset + t.size].reshape(t.shape))))
            offset += t.size
        return ParamSet(entries)

    def zeros_like(self) -> "ParamSet":
        return ParamSet((n, Tensor.zeros(t.shape)) for n, t in self)

    def allclose(self, other: "ParamSet", rtol: float = 0.0, atol: float = 0.0) -> bool:
        if not self.compatible_with(other):
            return False
        return all(
            np.allclose(a.data, b.data, rtol=rtol, atol=atol)
            for (_, a), (_, b) in zip(self, other)
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ParamSet)
            and self._names == other._names
            and all(a == b for a, b in zip(self._tensors, other._tensors))
        )

    def __hash__(self):
        return hash((self._names, tuple(hash(t) for t in self._tensors)))

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} entries, flat_len={self.flat_len})"


# ---------------------------------------------------------------------------
# Raw 2-D convolution kernels (arrays in, arrays out). The autodiff layer
# builds its conv ops from these; the forward pairs double as the public
# tensor-level operations.
# ---------------------------------------------------------------------------


def conv2d_output_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    return (
        (h + 2 * padding - kh) // stride + 1,
        (w + 2 * padding - kw) // stride + 1,
    )


def conv2d_transpose_output_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    return (
        (h - 1) * stride - 2 * padding + kh,
        (w - 1) * stride - 2 * padding + kw,
    )


def _check_conv_args(stride: int, padding: int) -> None:
    if not (isinstance(stride, int) and stride >= 1):
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    if not (isinstance(padding, int) and padding >= 0):
        raise ValueError(f"padding must be a non-negative int, got {padding!r}")


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # [B, C, Hp, Wp] -> [B, C, Ho, Wo, kh, kw]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride, :, :]


def conv2d_raw(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Cross-correlation of [B,Cin,H,W] with [Cout,Cin,kh,kw]."""
    _check_conv_args(stride, padding)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {k.shape}")
    b, cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d kernel {k.shape} larger than padded input {x.shape} (padding={padding})"
        )
    win = _windows(_pad_hw(x, padding), kh, kw, stride)
    out = np.tensordot(win, k, axes=((1, 4, 5), (1, 2, 3)))  # [B, Ho, Wo, Cout]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_grad_kernel(
    x: np.ndarray, gout: np.ndarray, kh: int, kw: int, stride: int, padding: int
) -> np.ndarray:
    """Gradient of conv2d_raw w.r.t. its kernel; returns [Cout,Cin,kh,kw]."""
    win = _windows(_pad_hw(x, padding), kh, kw, stride)  # [B, Cin, Ho, Wo, kh, kw]
    return np.tensordot(gout, win, axes=((0, 2, 3), (0, 2, 3)))


def conv2d_grad_input(
    gout: np.ndarray, k: np.ndarray, stride: int, padding: int, in_shape: tuple[int, ...]
) -> np.ndarray:
    """Gradient of conv2d_raw w.r.t. its input; returns an array of in_shape."""
    return _scatter_accumulate(gout, k, stride, padding, in_shape)


def conv2d_transpose_raw(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Transposed convolution of [B,Cin,H,W] with kernel [Cin,Cout,kh,kw]."""
    _check_conv_args(stride, padding)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(
            f"conv2d_transpose expects 4-D input and kernel, got {x.shape} and {k.shape}"
        )
    b, cin, h, w = x.shape
    kcin, cout, kh, kw = k.shape
    if kcin != cin:
        raise ShapeError(
            f"conv2d_transpose channel mismatch: input {x.shape} vs kernel {k.shape}"
        )
    ho, wo = conv2d_transpose_output_hw(h, w, kh, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"conv2d_transpose output would be empty for input {x.shape}, "
            f"kernel {k.shape}, stride={stride}, padding={padding}"
        )
    return _scatter_accumulate(x, k, stride, padding, (b, cout, ho, wo))


def _scatter_accumulate(
    g: np.ndarray, k: np.ndarray, stride: int, padding: int, out_shape: tuple[int, ...]
) -> np.ndarray:
    """Shared core of conv2d input-gradient and transposed-conv forward.

    g has layout [B, O, Hg, Wg]; k has layout [O, C, kh, kw]; every g cell
    scatters a kh x kw patch into the padded output at stride offsets.
    """
    b, cout, ho, wo = out_shape
    _, _, hg, wg = g.shape
    o, c, kh, kw = k.shape
    t = np.tensordot(g, k, axes=((1,), (0,)))  # [B, Hg, Wg, C, kh, kw]
    t = t.transpose(0, 3, 4, 5, 1, 2)  # [B, C, kh, kw, Hg, Wg]
    padded = np.zeros((b, cout, ho + 2 * padding, wo + 2 * padding), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            padded[:, :, u : u + hg * stride : stride, v : v + wg * stride : stride] += t[
                :, :, u, v, :, :
            ]
    if padding:
        return np.ascontiguousarray(padded[:, :, padding:-padding, padding:-padding])
    return padded


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; output H = floor((H+2p-kh)/s)+1, likewise W."""
    return Tensor(conv2d_raw(x.data, k.data, stride, padding))


def conv2d_transpose(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution; output H = (H-1)*s - 2p + kh, likewise W."""
    return Tensor(conv2d_transpose_raw(x.data, k.data, stride, padding))
