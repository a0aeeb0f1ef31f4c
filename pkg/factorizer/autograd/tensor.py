import logging
import threading
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from factorizer.exceptions import DimensionError, UsageError

logger = logging.getLogger(__name__)

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Grad mode is per thread so independent graphs can be built concurrently
_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the current thread"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw numpy arrays and `backward`, which maps
    the gradient of the output to one gradient (or None) per input tensor.
    Anything `backward` needs is saved on the instance during `forward`.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs: Tuple["Tensor", ...] = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, creator=fn if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out the axes that broadcasting added or stretched."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """
    Dense real tensor with reverse-mode automatic differentiation.

    `data` is a read-only numpy view; every operation returns a new tensor.
    Leaves created with `requires_grad=True` receive `.grad` after `backward`.
    """

    # Makes `ndarray + Tensor` dispatch to Tensor.__radd__
    __array_priority__ = 1000

    def __init__(
        self,
        data: Union["Tensor", np.ndarray, float, int, Sequence],
        requires_grad: bool = False,
        dtype: Optional[Any] = None,
        creator: Optional[Function] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=dtype)
        if array.dtype not in _SUPPORTED_DTYPES:
            array = array.astype(np.float64)
        if any(extent < 1 for extent in array.shape):
            raise DimensionError(f"Tensor extents must be positive, got shape {array.shape}")
        array = array.view()
        array.flags.writeable = False
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.creator = creator
        self.grad: Optional[np.ndarray] = None

    # Introspection

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def item(self) -> float:
        if self.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype: Any) -> "Tensor":
        if np.dtype(dtype) == self.dtype:
            return self
        return _F.cast(self, dtype)

    def __repr__(self) -> str:
        grad_note = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_note})"

    def __len__(self) -> int:
        return self.shape[0]

    def __hash__(self) -> int:
        return id(self)

    # Autodiff

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor into every reachable leaf."""
        if grad is None and self.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that is not part of a graph")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        graph = Graph.build(self)
        graph.run_backward(seed)
        graph.release()

    # Arithmetic

    def _wrap(self, other: Any) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: Any) -> "Tensor":
        return _F.add(self, self._wrap(other))

    def __radd__(self, other: Any) -> "Tensor":
        return _F.add(self._wrap(other), self)

    def __sub__(self, other: Any) -> "Tensor":
        return _F.sub(self, self._wrap(other))

    def __rsub__(self, other: Any) -> "Tensor":
        return _F.sub(self._wrap(other), self)

    def __mul__(self, other: Any) -> "Tensor":
        return _F.mul(self, self._wrap(other))

    def __rmul__(self, other: Any) -> "Tensor":
        return _F.mul(self._wrap(other), self)

    def __truediv__(self, other: Any) -> "Tensor":
        return _F.div(self, self._wrap(other))

    def __rtruediv__(self, other: Any) -> "Tensor":
        return _F.div(self._wrap(other), self)

    def __neg__(self) -> "Tensor":
        return _F.neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return _F.power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return _F.matmul(self, self._wrap(other))

    def __getitem__(self, index: Any) -> "Tensor":
        return _F.slice(self, index)

    # Reductions and pointwise maps

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return _F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return _F.mean(self, axis=axis, keepdims=keepdims)

    def relu(self) -> "Tensor":
        return _F.relu(self)

    def gelu(self) -> "Tensor":
        return _F.gelu(self)

    def exp(self) -> "Tensor":
        return _F.exp(self)

    def log(self) -> "Tensor":
        return _F.log(self)

    def sigmoid(self) -> "Tensor":
        return _F.sigmoid(self)

    def softmax(self, axis: int = 1) -> "Tensor":
        return _F.softmax(self, axis=axis)

    def clamp(self, low: Optional[float] = None, high: Optional[float] = None) -> "Tensor":
        return _F.clamp(self, low, high)

    # Structure

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _F.reshape(self, shape)

    def permute(self, *axes: Any) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _F.permute(self, axes)

    def transpose(self, axis0: int = -2, axis1: int = -1) -> "Tensor":
        axes = list(range(self.ndim))
        axes[axis0], axes[axis1] = axes[axis1], axes[axis0]
        return _F.permute(self, tuple(axes))

    @property
    def mT(self) -> "Tensor":
        """Swap the last two axes (matrix transpose of a batch)."""
        return self.transpose(-2, -1)

    def roll(self, shifts: Union[int, Sequence[int]], axes: Union[int, Sequence[int]]) -> "Tensor":
        return _F.roll(self, shifts, axes)

    def rearrange(self, pattern: str, **axes_lengths: int) -> "Tensor":
        return _F.rearrange(self, pattern, **axes_lengths)


class Graph:
    """
    Tape of the operations reachable from an output tensor.

    `nodes` is in topological order: every node's inputs precede it. The graph
    is rebuilt on every call to `Tensor.backward` and released afterwards.
    """

    def __init__(self, output: Tensor, nodes: List[Tensor]):
        self.output = output
        self.nodes = nodes

    @classmethod
    def build(cls, output: Tensor) -> "Graph":
        nodes: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in visited:
                continue
            if expanded:
                visited.add(id(node))
                nodes.append(node)
                continue
            stack.append((node, True))
            if node.creator is not None:
                # Reversed so inputs are visited in argument order
                for parent in reversed(node.creator.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(output, nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def run_backward(self, seed: np.ndarray) -> None:
        pending: Dict[int, np.ndarray] = {id(self.output): seed}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node.creator is None:
                grad = np.asarray(grad, dtype=node.dtype)
                node.grad = np.array(grad, copy=True) if node.grad is None else node.grad + grad
                continue
            input_grads = node.creator.backward(grad)
            for parent, parent_grad in zip(node.creator.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    def release(self) -> None:
        for node in self.nodes:
            node.creator = None


def as_tensor(value: Any, dtype: Optional[Any] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value if dtype is None else value.astype(dtype)
    return Tensor(value, dtype=dtype)


from factorizer.autograd import functional as _F  # noqa: E402
