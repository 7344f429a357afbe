"""Tensor values and the append-only tape used for reverse-mode differentiation.

Every differentiable operation executed while a :class:`Tape` is active (and
with at least one input that requires a gradient) appends a node to that tape.
Because nodes are appended in execution order, the append order is already a
topological order, and :func:`backward` simply walks it in reverse.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

_state = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array with an optional gradient buffer.

    Leaf tensors (parameters, inputs) own ``grad``; intermediate tensors carry
    the index of the tape node that produced them in ``node_id``.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar; the implementations live in ops.
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

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("kind", "inputs", "backward_fn", "output")

    def __init__(self, kind: str, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, output: Tensor):
        self.kind = kind
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.output = output


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations run outside any tape are not
    recorded and produce constants.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        """Drop every node and detach their outputs.

        Outputs point back at the tape, so a finished graph is a reference
        cycle; clearing frees it immediately instead of at the next full
        garbage collection.
        """
        for node in self.nodes:
            node.output.tape = None
            node.output.node_id = None
        self.nodes.clear()

    def record(self, kind: str, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, output: Tensor) -> None:
        output.node_id = len(self.nodes)
        output.tape = self
        output.requires_grad = True
        self.nodes.append(_Node(kind, inputs, backward_fn, output))


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording: operations inside produce constants."""
    stack = _tape_stack()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack[:] = saved


def make_result(kind: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` and record a node if any input needs a gradient."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.node_id = None
    out.tape = None
    out.name = None
    tape = active_tape()
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                tape.record(kind, inputs, backward_fn, out)
                break
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Intermediate gradients live only for the duration of the call, so calling
    this twice on the same tape adds the leaf gradients twice.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None or loss.node_id is None:
        raise ValueError("loss was not produced on a tape; nothing to differentiate")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.node_id is None or t.tape is not tape:
                # leaf (or a tensor from an enclosing tape treated as a leaf)
                if t.grad is None:
                    t.grad = np.array(gi, dtype=np.float64, copy=True)
                else:
                    t.grad += gi
            else:
                key = id(t)
                prev = grads.get(key)
                if prev is None:
                    grads[key] = gi
                else:
                    grads[key] = prev + gi


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
