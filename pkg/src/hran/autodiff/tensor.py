"""Tensor values and the reverse-mode tape."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)


class DimensionError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class Tensor:
    """Immutable dense array, optionally tracked by a :class:`Tape`.

    Activations are rank-4 ``(n, c, h, w)``; parameters may use other ranks
    (biases are vectors, attention matrices are ``C x C``).
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: Optional[int] = None):
        arr = np.asarray(data)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float32)
        arr = arr.view()
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tracked = "" if self.tape is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tracked})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple
    shape: tuple
    vjp: Optional[Callable]
    name: Optional[str] = None


@dataclass
class Tape:
    """Append-only record of the ops applied to watched tensors.

    Node ids are list indices, so inputs always precede outputs. One tape
    belongs to one training step and must not be shared between threads.
    """

    nodes: list = field(default_factory=list)
    grads: list = field(default_factory=list)

    def watch(self, value, name: Optional[str] = None) -> Tensor:
        """Register ``value`` as a leaf and return the tracked tensor."""
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        self.nodes.append(Node("leaf", (), data.shape, None, name))
        return Tensor(data, self, len(self.nodes) - 1)

    def record(self, op: str, inputs: Sequence[Optional[int]], out: np.ndarray, vjp) -> Tensor:
        self.nodes.append(Node(op, tuple(inputs), out.shape, vjp))
        return Tensor(out, self, len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> dict:
        """Populate ``self.grads`` and return ``{leaf name: gradient}``.

        Leaves that the loss does not depend on receive zero gradients.
        """
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.node] = np.ones(loss.shape, dtype=loss.dtype)
        for nid in range(loss.node, -1, -1):
            g = grads[nid]
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            for src, gi in zip(node.inputs, node.vjp(g)):
                if src is None or gi is None:
                    continue
                grads[src] = gi if grads[src] is None else grads[src] + gi
        dtype = loss.dtype
        for nid, node in enumerate(self.nodes):
            if grads[nid] is None:
                grads[nid] = np.zeros(node.shape, dtype=dtype)
        self.grads = grads
        return {n.name: grads[i] for i, n in enumerate(self.nodes) if n.op == "leaf" and n.name is not None}

    def grad(self, t: Tensor) -> np.ndarray:
        if t.tape is not self:
            raise ValueError("tensor is not tracked by this tape")
        if not self.grads:
            raise RuntimeError("backward has not been run")
        return self.grads[t.node]


def record(op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
    """Wrap an op result, recording it if any input is tracked."""
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError(f"{op}: inputs are tracked by different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(out)
    ids = [t.node if t.tape is tape else None for t in inputs]
    return tape.record(op, ids, out, vjp)
