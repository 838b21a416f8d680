"""Tensor with tape-based reverse-mode automatic differentiation

Every differentiable operation is a `Function` subclass. Applying one records
the function on the output tensor; `Tensor.backward()` walks the recorded
graph in reverse topological order and accumulates gradients into leaf
tensors. A graph can be walked once: afterwards its functions drop their
saved arrays and a second backward raises TrainingError.
"""

import contextlib
import logging
import threading
from collections.abc import Iterator, Sequence
from typing import Any, Optional, Union

import numpy as np

from beamcast.errors import DimensionError, TrainingError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

# Grad mode and default dtype are per-thread: a tape is confined to one thread
_state = threading.local()


def grad_enabled() -> bool:
    """True unless inside a `no_grad()` block on this thread"""
    return getattr(_state, "grad_enabled", True)


def get_default_dtype() -> np.dtype:
    """Floating dtype used for new tensors on this thread (float32 unless overridden)"""
    return getattr(_state, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype: Any) -> None:
    """Set the floating dtype for new tensors on this thread"""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise TypeError(f"Unsupported tensor dtype: {dtype}")
    _state.dtype = dtype


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block"""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextlib.contextmanager
def default_dtype(dtype: Any) -> Iterator[None]:
    """Temporarily switch the default dtype, e.g. float64 for gradient checks"""
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw numpy arrays and `backward`, which maps
    the gradient w.r.t. the output to a tuple of gradients w.r.t. each input
    (None for inputs that receive no gradient). Anything backward needs is saved
    on `self` during forward.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs: tuple["Tensor", ...] = inputs
        self.consumed = False

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        """Run forward on the inputs' data and record the function if any input needs grad"""
        fn = cls(*inputs)
        out_data = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=requires_grad, dtype=out_data.dtype)
        if requires_grad:
            out._creator = fn
        else:
            fn.release()
        return out

    def release(self) -> None:
        """Drop inputs and saved arrays once the function can no longer be differentiated"""
        self.inputs = ()
        self.__dict__ = {"inputs": (), "consumed": True}

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: tuple[int, ...]) -> np.ndarray:
        """Sum out dimensions that numpy broadcasting added or stretched"""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for dim, size in enumerate(to_shape):
            if size == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad


class Tensor:
    """
    n-dimensional real array with an optional gradient.

    Attributes:
        data: numpy array (float32 or float64)
        requires_grad: whether gradients flow into this tensor
        grad: accumulated gradient (same shape as data) for leaf tensors, else None
        name: optional label used in error messages and checkpoints
    """

    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Any = None,
        name: Optional[str] = None,
    ):
        self.data: np.ndarray = np.ascontiguousarray(data, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._creator: Optional[Function] = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a one-element tensor, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype, name=self.name)

    def astype(self, dtype: Any) -> "Tensor":
        """Leaf copy in another dtype, keeping requires_grad and name"""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    # ------------------------------------------------------------- operators
    def _wrap(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype), dtype=self.dtype)

    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        from beamcast.numcore.ops import Add

        return Add.apply(self, self._wrap(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return self.__add__(other)

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        from beamcast.numcore.ops import Sub

        return Sub.apply(self, self._wrap(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        from beamcast.numcore.ops import Sub

        return Sub.apply(self._wrap(other), self)

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        from beamcast.numcore.ops import Mul

        return Mul.apply(self, self._wrap(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: Union[float, int]) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("Tensor / Tensor is not supported; multiply by a reciprocal")
        return self * (1.0 / other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from beamcast.numcore.ops import matmul

        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        from beamcast.numcore.ops import Reshape

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def permute(self, *axes: int) -> "Tensor":
        from beamcast.numcore.ops import Permute

        return Permute.apply(self, axes=axes)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        from beamcast.numcore.ops import Sum

        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -------------------------------------------------------------- backward
    def backward(self, grad: Optional[ArrayLike] = None) -> None:
        """
        Backpropagate from this tensor through the recorded graph.

        Args:
            grad: gradient w.r.t. this tensor (defaults to ones, i.e. d(self)/d(self))

        Raises:
            TrainingError: if this tensor does not require grad or its graph was
                already consumed by a previous backward
        """
        if not self.requires_grad:
            raise TrainingError("backward() called on a tensor that does not require grad")
        if self._creator is not None and self._creator.consumed:
            raise TrainingError("Graph already consumed: single backward per tape", self.name)

        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        if seed.shape != self.shape:
            raise TrainingError(f"Seed gradient shape {seed.shape} != tensor shape {self.shape}")

        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            fn = node._creator
            if fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue

            input_grads = fn.backward(g)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for inp, ig in zip(fn.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = ig if key not in grads else grads[key] + ig
            fn.release()

    def _topological_order(self) -> list["Tensor"]:
        """Post-order over the graph (inputs before outputs), iterative"""
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in visited:
                continue
            if expanded:
                visited.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            if node._creator is not None:
                for parent in reversed(node._creator.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order
