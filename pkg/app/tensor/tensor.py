"""
Dense tensor with reverse-mode automatic differentiation

Graphs are built define-by-run: every operation applied to a tensor that
requires grad records its parents and a backward rule on the output. Calling
``backward()`` on a scalar walks the recorded graph once in reverse
topological order and then releases it.
"""
import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_FLOAT_TYPES = (np.float32, np.float64)
_grad_state = threading.local()


class ShapeError(ValueError):
    """Operands of a tensor operation have incompatible shapes"""


class GraphError(RuntimeError):
    """backward() called on something that is not a live scalar graph"""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference); the flag is per thread"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class Tensor:
    """N-dimensional float array (NCHW for image data) with an optional grad buffer"""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.type in _FLOAT_TYPES else np.float64
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardRule] = None
        self._op = "leaf"
        self._released = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardRule, op: str) -> "Tensor":
        """Output of an operation; records the graph edge only when a parent needs grad"""
        out = cls(data, dtype=data.dtype)
        out._op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op}{flag})"


@dataclass
class ComputationGraph:
    """Nodes reachable from an output, in topological order (output last)"""

    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationGraph":
        order: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def release(self) -> None:
        for node in self.nodes:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
                node._released = True


def backward(loss: Tensor) -> None:
    """Populate grad on every requires-grad tensor reachable from a scalar loss"""
    if loss.data.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphError("backward() already ran on this graph; run the forward pass again")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")

    graph = ComputationGraph.from_output(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        grad = pending.pop(id(node), None)
        if grad is None:
            grad = np.zeros_like(node.data)
        if node.is_leaf:
            node.grad = grad if node.grad is None else node.grad + grad
            continue
        node.grad = grad
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.shape:
                raise ShapeError(
                    f"{node._op} backward produced grad {parent_grad.shape} for input {parent.shape}"
                )
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
    graph.release()
