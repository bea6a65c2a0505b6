"""Tensor type and the reverse-mode tape.

Every primitive that produces a differentiable result attaches a :class:`Node`
holding its parents and a backward closure. Nodes carry a global sequence
number, so walking the reachable nodes in descending sequence order replays
the forward pass in reverse (the tape).
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_seq = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    __slots__ = ("seq", "parents", "backward")

    def __init__(self, parents: Sequence["Tensor"], backward: Callable):
        self.seq = next(_seq)
        self.parents = tuple(parents)
        self.backward = backward


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Activations use the (batch, channels, X, Y, Z) convention.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that
        requires a gradient. ``grad`` defaults to 1 for scalars."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        if self.node is None:
            if self.requires_grad:
                self.grad = grad.copy() if self.grad is None else self.grad + grad
            return

        # collect reachable nodes
        order: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t.node is None or t.node.seq in order:
                continue
            order[t.node.seq] = t
            stack.extend(t.node.parents)

        pending: dict[int, np.ndarray] = {id(self): grad}
        for seq in sorted(order, reverse=True):
            t = order[seq]
            g = pending.pop(id(t), None)
            if g is None:
                continue
            parent_grads = t.node.backward(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None or not (p.requires_grad or p.node is not None):
                    continue
                if p.node is None:
                    p.grad = pg.copy() if p.grad is None else p.grad + pg
                else:
                    key = id(p)
                    pending[key] = pg if key not in pending else pending[key] + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of a primitive, recording a node when any
    parent participates in differentiation."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad or p.node is not None for p in parents):
        out.node = Node(parents, backward)
    return out
