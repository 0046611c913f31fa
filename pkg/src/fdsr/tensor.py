"""Dense tensors with reverse-mode differentiation over a dynamically recorded graph.

Every differentiable operation that receives at least one input with
``requires_grad`` attaches a :class:`Node` to its output.  Calling
:func:`backward` on a scalar result linearises the reachable nodes into a
:class:`Tape` (topological order) and replays the backward rules in reverse.

Gradients accumulate into ``leaf.grad`` across backward calls; callers zero
them explicitly with :meth:`Tensor.zero_grad`.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()
_faults: dict[str, float] = {}


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextlib.contextmanager
def corrupt_backward(op: str, factor: float = 1.01) -> Iterator[None]:
    """Test hook: scale every gradient produced by ``op``'s backward rule.

    Used as a negative control for gradient checking.
    """
    _faults[op] = factor
    try:
        yield
    finally:
        _faults.pop(op, None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; shapes must match exactly (no broadcasting)
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scalar_mul(self, -1.0)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Node:
    """One recorded operation: its inputs and the rule mapping output grad to input grads."""

    op: str
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


def record(data: np.ndarray, inputs: Sequence[Tensor], op: str, backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of ``op``; attach a node when any input needs grad."""
    out = Tensor(data)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward_fn)
    return out


@dataclass
class Tape:
    """Operations reachable from a root, inputs before consumers."""

    nodes: list[tuple[Tensor, Node]] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[tuple[Tensor, Node]] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                order.append((t, t.node))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t.node.inputs:
                if parent.node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def ops(self) -> list[str]:
        return [n.op for _, n in self.nodes]


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if root.node is None and not root.requires_grad:
        raise RuntimeError("backward called on a tensor that is not part of any tape")

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    tape = Tape.from_root(root)
    for out, node in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        factor = _faults.get(node.op)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if factor is not None:
                gi = gi * factor
            if t.node is None:
                _accumulate_leaf(t, gi)
            else:
                key = id(t)
                grads[key] = grads[key] + gi if key in grads else gi
    if root.node is None:
        _accumulate_leaf(root, grads[id(root)])


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g
