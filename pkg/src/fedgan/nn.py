"""Parameter initialization and ParamSet (de)serialization.

Weights use uniform Glorot init, +-sqrt(6/(fan_in+fan_out)); biases start
at zero. The binary ParamSet container is a fixed little-endian layout so
saved models replay byte-exactly across runs:

    magic  b"FGPS"
    u32    entry count
    per entry: u32 name length, name bytes (UTF-8),
               u32 ndim, ndim x u32 dims
    per entry, same order: raw float64 payload, little-endian, row-major
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import ParamSet, Tensor

__all__ = [
    "glorot_uniform",
    "dense_params",
    "conv_params",
    "conv_transpose_params",
    "dense_forward",
    "conv_forward",
    "conv_transpose_forward",
    "save_param_set",
    "load_param_set",
    "dump_param_set",
    "parse_param_set",
]

_MAGIC = b"FGPS"


def glorot_uniform(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int
) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape))


def dense_params(
    rng: np.random.Generator, name: str, n_in: int, n_out: int
) -> list[tuple[str, Tensor]]:
    return [
        (f"{name}.w", glorot_uniform(rng, (n_in, n_out), n_in, n_out)),
        (f"{name}.b", Tensor.zeros((n_out,))),
    ]


def conv_params(
    rng: np.random.Generator, name: str, c_out: int, c_in: int, kh: int, kw: int
) -> list[tuple[str, Tensor]]:
    fan_in = c_in * kh * kw
    fan_out = c_out * kh * kw
    return [
        (f"{name}.k", glorot_uniform(rng, (c_out, c_in, kh, kw), fan_in, fan_out)),
        (f"{name}.b", Tensor.zeros((c_out,))),
    ]


def conv_transpose_params(
    rng: np.random.Generator, name: str, c_in: int, c_out: int, kh: int, kw: int
) -> list[tuple[str, Tensor]]:
    fan_in = c_in * kh * kw
    fan_out = c_out * kh * kw
    return [
        (f"{name}.k", glorot_uniform(rng, (c_in, c_out, kh, kw), fan_in, fan_out)),
        (f"{name}.b", Tensor.zeros((c_out,))),
    ]


def dense_forward(p: dict, name: str, x):
    """x @ w + b over bound graph nodes."""
    from . import autodiff as ad

    return ad.add(ad.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def conv_forward(p: dict, name: str, x, stride: int, padding: int):
    from . import autodiff as ad

    out = ad.conv2d(x, p[f"{name}.k"], stride=stride, padding=padding)
    c = p[f"{name}.b"].value.shape[0]
    return ad.add(out, ad.reshape(p[f"{name}.b"], (c, 1, 1)))


def conv_transpose_forward(p: dict, name: str, x, stride: int, padding: int):
    from . import autodiff as ad

    out = ad.conv2d_transpose(x, p[f"{name}.k"], stride=stride, padding=padding)
    c = p[f"{name}.b"].value.shape[0]
    return ad.add(out, ad.reshape(p[f"{name}.b"], (c, 1, 1)))


def dump_param_set(params: ParamSet) -> bytes:
    chunks = [_MAGIC, struct.pack("<I", len(params))]
    for name, t in params:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
    for _, t in params:
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def parse_param_set(data: bytes) -> ParamSet:
    if data[:4] != _MAGIC:
        raise ValueError("not a ParamSet file (bad magic)")
    offset = 4

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise ValueError(f"truncated ParamSet file at offset {offset}")
        piece = data[offset : offset + n]
        offset += n
        return piece

    (count,) = struct.unpack("<I", take(4))
    headers = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        headers.append((name, shape))
    entries = []
    for name, shape in headers:
        n_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = take(8 * n_values)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        entries.append((name, Tensor(arr)))
    if offset != len(data):
        raise ValueError(f"trailing data in ParamSet file at offset {offset}")
    return ParamSet(entries)


def save_param_set(params: ParamSet, path) -> None:
    with open(path, "wb") as f:
        f.write(dump_param_set(params))


def load_param_set(path) -> ParamSet:
    with open(path, "rb") as f:
        return parse_param_set(f.read())
