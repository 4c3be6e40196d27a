"""Dense f64 tensors and the reverse-mode tape they are recorded on."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_DEBUG = os.environ.get("RIGJOINTS_DEBUG", "") not in ("", "0")
_TAPES: list["Tape"] = []


class NumericError(ValueError):
    """Raised when a tensor would hold NaN or Inf."""


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


def set_debug(enabled: bool) -> None:
    """Toggle post-op finiteness checks on every op output."""
    global _DEBUG
    _DEBUG = bool(enabled)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    """Row-major float64 array that can take part in a :class:`Tape`.

    ``data`` is replaced wholesale by optimizers rather than written in place,
    so arrays handed out by ops are never mutated behind the tape's back.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, check: bool = True):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if any(extent <= 0 for extent in arr.shape):
            raise DimensionError(f"tensor extents must be positive, got {arr.shape}")
        if check and not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._op: "Node | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self.shape)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Arithmetic sugar; implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def _raise_not_scalar(shape):
    raise ContractError(f"item() needs a single-element tensor, got shape {shape}")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass(eq=False)
class Node:
    """One executed operation: its inputs, its output and how to pull gradients back."""

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    index: int = -1


@dataclass(eq=False)
class Tape:
    """Ordered record of ops executed while the tape is active.

    Use as a context manager; ops run inside the ``with`` block whose inputs
    require gradients are appended in execution order, which is a valid
    topological order by construction.
    """

    nodes: list[Node] = field(default_factory=list)
    visits: int = 0

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        assert popped is self, "tapes must be closed in LIFO order"

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, name, inputs, output, backward) -> None:
        node = Node(name, tuple(inputs), output, backward, index=len(self.nodes))
        output._op = node
        output.requires_grad = True
        self.nodes.append(node)

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None):
        return backward(self, loss, params)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def make_output(data: np.ndarray, name: str, inputs: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result and record it on the active tape when a gradient can flow."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = None
    out._op = None
    if _DEBUG and not np.isfinite(data).all():
        raise NumericError(f"op {name} produced non-finite values")
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(name, inputs, out, backward)
    return out


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
    """Reverse sweep over ``tape`` seeded with d(loss)/d(loss) = 1.

    Leaf tensors that require gradients receive ``.grad``; leaves that the
    loss does not depend on get zeros. When ``params`` is given, their
    gradients are returned in the same order.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._op is None or loss._op not in tape.nodes[loss._op.index : loss._op.index + 1]:
        raise ContractError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    tape.visits = 0
    for node in reversed(tape.nodes):
        tape.visits += 1
        g_out = grads.pop(id(node.output), None)
        for t in node.inputs:
            if t.requires_grad and t.is_leaf:
                leaves[id(t)] = t
        if g_out is None:
            continue
        g_ins = node.backward(g_out)
        for t, g in zip(node.inputs, g_ins):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise DimensionError(f"{node.name}: gradient shape {g.shape} != input shape {t.shape}")
            prev = grads.get(id(t))
            grads[id(t)] = g if prev is None else prev + g

    for key, leaf in leaves.items():
        leaf.grad = grads.get(key, np.zeros_like(leaf.data))
    if params is None:
        return None
    out = []
    for p in params:
        g = grads.get(id(p)) if p.is_leaf else None
        if g is None:
            g = np.zeros_like(p.data)
        p.grad = g
        out.append(g)
    return out
