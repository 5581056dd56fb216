"""Tape-based reverse-mode automatic differentiation.

A Graph records one forward computation over float64 arrays. Parameter
leaves are registered by name (mirroring a ParamSet); calling grad() on
the scalar loss node walks the tape once in reverse and returns one
gradient tensor per requested parameter, with zeros for parameters the
loss never touched. Graphs are single-use and single-threaded; run
independent steps on independent graphs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import (
    NumericError,
    ParamSet,
    ShapeError,
    Tensor,
    conv2d_grad_input,
    conv2d_grad_kernel,
    conv2d_raw,
    conv2d_transpose_raw,
    _pad_hw,
    _windows,
)

__all__ = ["Graph", "Node", "grad"]


class Node:
    """One recorded value in a Graph; holds its parents and their vjps."""

    __slots__ = ("graph", "value", "op", "parents", "vjps", "tape_index")

    def __init__(
        self,
        graph: "Graph",
        value: np.ndarray,
        op: str,
        parents: tuple["Node", ...] = (),
        vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = (),
    ):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite values produced by node {op!r}")
        self.graph = graph
        self.value = value
        self.op = op
        self.parents = parents
        self.vjps = vjps
        self.tape_index = len(graph._tape)
        graph._tape.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape})"


class Graph:
    """Recording of one forward computation ending in a scalar loss."""

    def __init__(self):
        self._tape: list[Node] = []
        self._params: dict[str, Node] = {}

    def param(self, name: str, value: Tensor) -> Node:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already bound")
        node = Node(self, value.data, f"param:{name}")
        self._params[name] = node
        return node

    def constant(self, value) -> Node:
        if isinstance(value, Tensor):
            value = value.data
        return Node(self, np.asarray(value, dtype=np.float64), "constant")

    def bind(self, params: ParamSet) -> dict[str, Node]:
        """Register every entry of a ParamSet as a trainable leaf."""
        return {name: self.param(name, value) for name, value in params}

    def bind_constant(self, params: ParamSet) -> dict[str, Node]:
        """Register a ParamSet as frozen values (no gradients flow to them)."""
        return {name: self.constant(value) for name, value in params}


def _check_same_graph(*nodes: Node) -> Graph:
    g = nodes[0].graph
    for n in nodes[1:]:
        if n.graph is not g:
            raise ValueError("nodes belong to different graphs")
    return g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Node, b: Node) -> Node:
    g = _check_same_graph(a, b)
    return Node(
        g,
        a.value + b.value,
        "add",
        (a, b),
        (
            lambda gr: _unbroadcast(gr, a.value.shape),
            lambda gr: _unbroadcast(gr, b.value.shape),
        ),
    )


def sub(a: Node, b: Node) -> Node:
    g = _check_same_graph(a, b)
    return Node(
        g,
        a.value - b.value,
        "sub",
        (a, b),
        (
            lambda gr: _unbroadcast(gr, a.value.shape),
            lambda gr: _unbroadcast(-gr, b.value.shape),
        ),
    )


def mul(a: Node, b: Node) -> Node:
    g = _check_same_graph(a, b)
    return Node(
        g,
        a.value * b.value,
        "mul",
        (a, b),
        (
            lambda gr: _unbroadcast(gr * b.value, a.value.shape),
            lambda gr: _unbroadcast(gr * a.value, b.value.shape),
        ),
    )


def affine(a: Node, scale: float, shift: float = 0.0) -> Node:
    scale = float(scale)
    return Node(
        a.graph,
        a.value * scale + shift,
        "affine",
        (a,),
        (lambda gr: gr * scale,),
    )


def matmul(a: Node, b: Node) -> Node:
    g = _check_same_graph(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    return Node(
        g,
        a.value @ b.value,
        "matmul",
        (a, b),
        (
            lambda gr: gr @ b.value.T,
            lambda gr: a.value.T @ gr,
        ),
    )


def conv2d(x: Node, k: Node, stride: int, padding: int) -> Node:
    g = _check_same_graph(x, k)
    out = conv2d_raw(x.value, k.value, stride, padding)
    kh, kw = k.value.shape[2], k.value.shape[3]
    return Node(
        g,
        out,
        "conv2d",
        (x, k),
        (
            lambda gr: conv2d_grad_input(gr, k.value, stride, padding, x.value.shape),
            lambda gr: conv2d_grad_kernel(x.value, gr, kh, kw, stride, padding),
        ),
    )


def conv2d_transpose(x: Node, k: Node, stride: int, padding: int) -> Node:
    g = _check_same_graph(x, k)
    out = conv2d_transpose_raw(x.value, k.value, stride, padding)
    kh, kw = k.value.shape[2], k.value.shape[3]

    def vjp_kernel(gr: np.ndarray) -> np.ndarray:
        win = _windows(_pad_hw(gr, padding), kh, kw, stride)  # [B, Cout, H, W, kh, kw]
        return np.tensordot(x.value, win, axes=((0, 2, 3), (0, 2, 3)))

    return Node(
        g,
        out,
        "conv2d_transpose",
        (x, k),
        (
            lambda gr: conv2d_raw(gr, k.value, stride, padding),
            vjp_kernel,
        ),
    )


def relu(a: Node) -> Node:
    mask = a.value > 0
    return Node(a.graph, np.where(mask, a.value, 0.0), "relu", (a,), (lambda gr: gr * mask,))


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    factor = np.where(a.value > 0, 1.0, float(slope))
    return Node(
        a.graph, a.value * factor, "leaky_relu", (a,), (lambda gr: gr * factor,)
    )


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return Node(a.graph, t, "tanh", (a,), (lambda gr: gr * (1.0 - t * t),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    s = _sigmoid(a.value)
    return Node(a.graph, s, "sigmoid", (a,), (lambda gr: gr * s * (1.0 - s),))


def reshape(a: Node, shape: Sequence[int]) -> Node:
    shape = tuple(shape)
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.value.shape} to {shape}") from exc
    return Node(
        a.graph, out, "reshape", (a,), (lambda gr: gr.reshape(a.value.shape),)
    )


def concat(nodes: Sequence[Node], axis: int) -> Node:
    if not nodes:
        raise ValueError("concat of no nodes")
    g = _check_same_graph(*nodes)
    out = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i: int):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(gr: np.ndarray) -> np.ndarray:
            index = [slice(None)] * gr.ndim
            index[axis] = slice(lo, hi)
            return gr[tuple(index)]

        return vjp

    return Node(
        g, out, "concat", tuple(nodes), tuple(make_vjp(i) for i in range(len(nodes)))
    )


def sum_all(a: Node) -> Node:
    return Node(
        a.graph,
        np.asarray(a.value.sum()),
        "sum",
        (a,),
        (lambda gr: np.broadcast_to(gr, a.value.shape).copy(),),
    )


def mean_all(a: Node) -> Node:
    n = a.value.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    return Node(
        a.graph,
        np.asarray(a.value.mean()),
        "mean",
        (a,),
        (lambda gr: np.broadcast_to(gr / n, a.value.shape).copy(),),
    )


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bce_with_logits_mean(logits: Node, targets: np.ndarray) -> Node:
    """Mean binary cross-entropy between logits and 0/1 targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.value.shape:
        raise ShapeError(
            f"bce targets shape {targets.shape} vs logits {logits.value.shape}"
        )
    n = logits.value.size
    if n == 0:
        raise ShapeError("bce on an empty batch")
    loss = np.asarray((_softplus(logits.value) - targets * logits.value).mean())
    s = _sigmoid(logits.value)
    return Node(
        logits.graph,
        loss,
        "bce_with_logits",
        (logits,),
        (lambda gr: gr * (s - targets) / n,),
    )


def softmax_ce_mean(logits: Node, labels: np.ndarray) -> Node:
    """Mean softmax cross-entropy against integer class labels."""
    labels = np.asarray(labels)
    if logits.value.ndim != 2 or labels.shape != (logits.value.shape[0],):
        raise ShapeError(
            f"softmax_ce expects [B,K] logits and [B] labels, got "
            f"{logits.value.shape} and {labels.shape}"
        )
    b = logits.value.shape[0]
    if b == 0:
        raise ShapeError("softmax_ce on an empty batch")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    ez = np.exp(z)
    softmax = ez / ez.sum(axis=1, keepdims=True)
    logp = z - np.log(ez.sum(axis=1, keepdims=True))
    loss = np.asarray(-logp[np.arange(b), labels].mean())
    onehot = np.zeros_like(logits.value)
    onehot[np.arange(b), labels] = 1.0
    return Node(
        logits.graph,
        loss,
        "softmax_ce",
        (logits,),
        (lambda gr: gr * (softmax - onehot) / b,),
    )


def mse_mean(a: Node, b: Node) -> Node:
    g = _check_same_graph(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mse shape mismatch: {a.value.shape} vs {b.value.shape}")
    n = a.value.size
    if n == 0:
        raise ShapeError("mse on an empty tensor")
    diff = a.value - b.value
    return Node(
        g,
        np.asarray((diff * diff).mean()),
        "mse",
        (a, b),
        (
            lambda gr: gr * 2.0 * diff / n,
            lambda gr: gr * -2.0 * diff / n,
        ),
    )


def grad(loss: Node, params: ParamSet) -> ParamSet:
    """Gradients of a scalar loss w.r.t. every parameter in `params`.

    Parameters the loss does not depend on get zero gradients. Raises
    ShapeError for a non-scalar loss and NumericError if a gradient
    comes out non-finite.
    """
    if loss.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")
    graph = loss.graph
    for name, value in params:
        bound = graph._params.get(name)
        if bound is not None and bound.value.shape != value.shape:
            raise ShapeError(
                f"parameter {name!r}: graph leaf shape {bound.value.shape} "
                f"vs ParamSet shape {value.shape}"
            )

    grads: dict[int, np.ndarray] = {
        loss.tape_index: np.ones_like(loss.value)
    }
    for node in reversed(graph._tape[: loss.tape_index + 1]):
        gr = grads.pop(node.tape_index, None)
        if gr is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contribution = vjp(gr)
            slot = grads.get(parent.tape_index)
            if slot is None:
                grads[parent.tape_index] = np.asarray(contribution, dtype=np.float64)
            else:
                grads[parent.tape_index] = slot + contribution
        # keep leaf gradients around for collection below
        if node.op.startswith("param:"):
            grads[node.tape_index] = gr

    entries = []
    for name, value in params:
        bound = graph._params.get(name)
        if bound is None:
            entries.append((name, Tensor.zeros(value.shape)))
            continue
        accumulated = grads.get(bound.tape_index)
        if accumulated is None:
            entries.append((name, Tensor.zeros(value.shape)))
        else:
            try:
                entries.append((name, Tensor(accumulated)))
            except NumericError as exc:
                raise NumericError(f"non-finite gradient for {name!r}") from exc
    return ParamSet(entries)
