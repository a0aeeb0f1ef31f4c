"""
Differentiable operations on `Tensor`.

Each operation is a `Function` subclass with a forward pass over numpy arrays and
an analytic backward pass; the lowercase wrappers at the bottom are the public API.
"""
import math
import re
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import einops
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from factorizer.autograd.tensor import Function, Tensor, as_tensor
from factorizer.exceptions import DimensionError, UsageError

Axis = Optional[Union[int, Tuple[int, ...]]]

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _check_broadcast(x: np.ndarray, y: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {x.shape} and {y.shape} do not broadcast") from None


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# Binary elementwise

class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_broadcast(x, y, "add")
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            Function.unbroadcast(grad, self.shapes[0]),
            Function.unbroadcast(grad, self.shapes[1]),
        )


class Sub(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_broadcast(x, y, "sub")
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            Function.unbroadcast(grad, self.shapes[0]),
            Function.unbroadcast(-grad, self.shapes[1]),
        )


class Mul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_broadcast(x, y, "mul")
        self.x, self.y = x, y
        return x * y

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        x_input, y_input = self.inputs
        grad_x = Function.unbroadcast(grad * self.y, self.x.shape) if x_input.requires_grad else None
        grad_y = Function.unbroadcast(grad * self.x, self.y.shape) if y_input.requires_grad else None
        return grad_x, grad_y


class Div(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_broadcast(x, y, "div")
        self.x, self.y = x, y
        return x / y

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        x_input, y_input = self.inputs
        grad_x = Function.unbroadcast(grad / self.y, self.x.shape) if x_input.requires_grad else None
        grad_y = None
        if y_input.requires_grad:
            grad_y = Function.unbroadcast(-grad * self.x / (self.y * self.y), self.y.shape)
        return grad_x, grad_y


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise DimensionError(f"matmul batch extents do not broadcast: {a.shape} @ {b.shape}") from None
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        a_input, b_input = self.inputs
        grad_a = grad_b = None
        if a_input.requires_grad:
            grad_a = Function.unbroadcast(np.matmul(grad, np.swapaxes(self.b, -1, -2)), self.a.shape)
        if b_input.requires_grad:
            grad_b = Function.unbroadcast(np.matmul(np.swapaxes(self.a, -1, -2), grad), self.b.shape)
        return grad_a, grad_b


# Unary elementwise

class Neg(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return -x

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (-grad,)


class Cast(Function):
    def forward(self, x: np.ndarray, dtype: Any) -> np.ndarray:
        self.source = x.dtype
        return x.astype(dtype)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad.astype(self.source),)


class Power(Function):
    def forward(self, x: np.ndarray, exponent: float) -> np.ndarray:
        self.x, self.exponent = x, exponent
        return np.power(x, exponent)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.exponent * np.power(self.x, self.exponent - 1),)


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.mask,)


class GELU(Function):
    """Exact GELU, x * Phi(x), with Phi the Gaussian CDF."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        self.cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
        return (x * self.cdf).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * self.x * self.x)
        return ((grad * (self.cdf + self.x * pdf)).astype(grad.dtype),)


class Clamp(Function):
    def forward(self, x: np.ndarray, low: Optional[float], high: Optional[float]) -> np.ndarray:
        mask = np.ones(x.shape, dtype=bool)
        if low is not None:
            mask &= x >= low
        if high is not None:
            mask &= x <= high
        self.mask = mask
        return np.clip(x, low, high).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.mask,)


class MaximumScalar(Function):
    def forward(self, x: np.ndarray, value: float) -> np.ndarray:
        self.mask = x > value
        return np.maximum(x, np.asarray(value, dtype=x.dtype))

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.mask,)


class Exp(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.out,)


class Log(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return np.log(x)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad / self.x,)


class Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype)
        return self.out

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.out * (1.0 - self.out),)


class Softmax(Function):
    def forward(self, x: np.ndarray, axis: int) -> np.ndarray:
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        self.axis = axis
        return self.out

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


# Reductions

class Sum(Function):
    def forward(self, x: np.ndarray, axis: Axis, keepdims: bool) -> np.ndarray:
        self.shape = x.shape
        self.axes = _normalize_axes(axis, x.ndim)
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=self.axes, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, self.shape),)


class Mean(Sum):
    def forward(self, x: np.ndarray, axis: Axis, keepdims: bool) -> np.ndarray:
        total = super().forward(x, axis, keepdims)
        self.count = int(np.prod([x.shape[a] for a in self.axes])) if self.axes else 1
        return np.asarray(total / self.count, dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        (expanded,) = super().backward(grad)
        return (expanded / self.count,)


# Structure

class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise DimensionError(f"cannot reshape {x.shape} ({x.size} elements) into {shape}") from None

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad.reshape(self.shape),)


class Permute(Function):
    def forward(self, x: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
        if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
            raise DimensionError(f"permutation {axes} does not match rank {x.ndim}")
        self.inverse = tuple(np.argsort([a % x.ndim for a in axes]))
        return np.transpose(x, axes)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (np.transpose(grad, self.inverse),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        try:
            out = np.concatenate(arrays, axis=axis)
        except ValueError:
            shapes = [a.shape for a in arrays]
            raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from None
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return out

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Roll(Function):
    def forward(self, x: np.ndarray, shifts: Tuple[int, ...], axes: Tuple[int, ...]) -> np.ndarray:
        self.shifts, self.axes = shifts, axes
        return np.roll(x, shifts, axis=axes)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (np.roll(grad, tuple(-s for s in self.shifts), axis=self.axes),)


class Slice(Function):
    """Basic indexing (ints, slices, Ellipsis, None)."""

    def forward(self, x: np.ndarray, index: Any) -> np.ndarray:
        parts = index if isinstance(index, tuple) else (index,)
        if any(isinstance(p, (list, np.ndarray, Tensor)) for p in parts):
            raise UsageError(f"only basic indexing is differentiable, got {index!r}")
        self.shape, self.index = x.shape, index
        return np.array(x[index])

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[self.index] = grad
        return (full,)


_GROUP = re.compile(r"\(([^)]*)\)|(\S+)")


def _pattern_groups(side: str) -> List[List[str]]:
    return [(m.group(1) or m.group(2)).split() for m in _GROUP.finditer(side)]


def _resolve_axes(lhs: str, shape: Tuple[int, ...], known: Dict[str, int]) -> Dict[str, int]:
    """Every elementary axis length of `lhs` for an input of `shape`."""
    groups = _pattern_groups(lhs)
    if len(groups) != len(shape):
        raise DimensionError(f"pattern '{lhs}' has {len(groups)} axes, tensor has rank {len(shape)}")
    lengths = dict(known)
    for group, extent in zip(groups, shape):
        unknown = [name for name in group if name not in lengths]
        if len(unknown) > 1:
            raise DimensionError(f"cannot infer axes {unknown} of group {group}")
        fixed = int(np.prod([lengths[name] for name in group if name in lengths]))
        if unknown:
            if extent % fixed:
                raise DimensionError(f"extent {extent} is not divisible by {fixed} in group {group}")
            lengths[unknown[0]] = extent // fixed
        elif fixed != extent:
            raise DimensionError(f"group {group} has length {fixed}, tensor extent is {extent}")
    return lengths


class Rearrange(Function):
    """einops `rearrange` forward; the reversed pattern is the backward pass."""

    def forward(self, x: np.ndarray, pattern: str, axes_lengths: Dict[str, int]) -> np.ndarray:
        lhs, rhs = (side.strip() for side in pattern.split("->"))
        self.lengths = _resolve_axes(lhs, x.shape, axes_lengths)
        self.inverse = f"{rhs} -> {lhs}"
        return einops.rearrange(x, pattern, **self.lengths)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (einops.rearrange(grad, self.inverse, **self.lengths),)


# Convolution

def _windows(x: np.ndarray, kernel: Tuple[int, int, int], stride: int) -> np.ndarray:
    """(B, C, H', W', D', kh, kw, kd) strided view of all kernel windows."""
    view = sliding_window_view(x, kernel, axis=(2, 3, 4))
    return view[:, :, ::stride, ::stride, ::stride]


def _scatter(cols: np.ndarray, out_shape: Tuple[int, ...], stride: int) -> np.ndarray:
    """Adjoint of `_windows`: add (B, H, W, D, C, kh, kw, kd) columns into an image."""
    out = np.zeros(out_shape, dtype=cols.dtype)
    _, h, w, d = cols.shape[:4]
    for i, j, k in np.ndindex(*cols.shape[5:]):
        patch = np.moveaxis(cols[..., i, j, k], -1, 1)
        out[:, :, i:i + stride * h:stride, j:j + stride * w:stride, k:k + stride * d:stride] += patch
    return out


class Conv3d(Function):
    """Direct cross-correlation; weight layout (C_out, C_in, kh, kw, kd)."""

    def forward(self, x: np.ndarray, weight: np.ndarray, stride: int, padding: int) -> np.ndarray:
        if x.ndim != 5 or weight.ndim != 5:
            raise DimensionError(f"conv3d expects rank-5 input and weight, got {x.shape} and {weight.shape}")
        if x.shape[1] != weight.shape[1]:
            raise DimensionError(f"conv3d channel mismatch: input {x.shape}, weight {weight.shape}")
        kernel = weight.shape[2:]
        if padding:
            x = np.pad(x, ((0, 0), (0, 0)) + ((padding, padding),) * 3)
        if any(n < k for n, k in zip(x.shape[2:], kernel)):
            raise DimensionError(f"conv3d kernel {kernel} exceeds padded input {x.shape[2:]}")
        self.padded_shape, self.padding, self.stride = x.shape, padding, stride
        self.weight = weight
        self.cols = _windows(x, kernel, stride)
        out = np.tensordot(self.cols, weight, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
        return np.ascontiguousarray(np.moveaxis(out, -1, 1))

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        x_input, w_input = self.inputs
        grad_x = grad_w = None
        if w_input.requires_grad:
            grad_w = np.tensordot(grad, self.cols, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        if x_input.requires_grad:
            cols = np.tensordot(np.moveaxis(grad, 1, -1), self.weight, axes=([4], [0]))
            grad_x = _scatter(cols, self.padded_shape, self.stride)
            p = self.padding
            if p:
                grad_x = grad_x[:, :, p:-p, p:-p, p:-p]
        return grad_x, grad_w


class ConvTranspose3d(Function):
    """Adjoint of `Conv3d` without padding; weight layout (C_in, C_out, kh, kw, kd)."""

    def forward(self, x: np.ndarray, weight: np.ndarray, stride: int) -> np.ndarray:
        if x.ndim != 5 or weight.ndim != 5:
            raise DimensionError(
                f"conv3d_transposed expects rank-5 input and weight, got {x.shape} and {weight.shape}"
            )
        if x.shape[1] != weight.shape[0]:
            raise DimensionError(f"conv3d_transposed channel mismatch: input {x.shape}, weight {weight.shape}")
        self.x, self.weight, self.stride = x, weight, stride
        kernel = weight.shape[2:]
        out_shape = (x.shape[0], weight.shape[1]) + tuple(
            (n - 1) * stride + k for n, k in zip(x.shape[2:], kernel)
        )
        cols = np.tensordot(np.moveaxis(x, 1, -1), weight, axes=([4], [0]))
        return _scatter(cols, out_shape, stride)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        x_input, w_input = self.inputs
        windows = _windows(grad, self.weight.shape[2:], self.stride)
        grad_x = grad_w = None
        if x_input.requires_grad:
            out = np.tensordot(windows, self.weight, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
            grad_x = np.ascontiguousarray(np.moveaxis(out, -1, 1))
        if w_input.requires_grad:
            grad_w = np.tensordot(self.x, windows, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        return grad_x, grad_w


# Normalization

class LayerNorm(Function):
    """Normalize over one axis (the channel axis) at every other position."""

    def forward(self, x: np.ndarray, gain: np.ndarray, offset: np.ndarray, axis: int, eps: float) -> np.ndarray:
        axis = axis % x.ndim
        channels = x.shape[axis]
        if gain.shape != (channels,) or offset.shape != (channels,):
            raise DimensionError(
                f"layer_norm parameters {gain.shape}/{offset.shape} do not match {channels} channels"
            )
        param_shape = [1] * x.ndim
        param_shape[axis] = channels
        self.axis, self.param_shape = axis, tuple(param_shape)
        mean = x.mean(axis=axis, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=axis, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.normalized = centered * self.inv_std
        self.gain = gain.reshape(param_shape)
        return (self.normalized * self.gain + offset.reshape(param_shape)).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        axis = self.axis
        reduce_axes = tuple(a for a in range(grad.ndim) if a != axis)
        channels = grad.shape[axis]
        grad_normalized = grad * self.gain
        grad_x = (self.inv_std / channels) * (
            channels * grad_normalized
            - grad_normalized.sum(axis=axis, keepdims=True)
            - self.normalized * (grad_normalized * self.normalized).sum(axis=axis, keepdims=True)
        )
        grad_gain = (grad * self.normalized).sum(axis=reduce_axes)
        grad_offset = grad.sum(axis=reduce_axes)
        return grad_x.astype(grad.dtype), grad_gain, grad_offset


# Public wrappers

def add(x: Tensor, y: Tensor) -> Tensor:
    return Add.apply(x, y)


def sub(x: Tensor, y: Tensor) -> Tensor:
    return Sub.apply(x, y)


def mul(x: Tensor, y: Tensor) -> Tensor:
    return Mul.apply(x, y)


def div(x: Tensor, y: Tensor, eps: Optional[float] = None) -> Tensor:
    """x / y, or x / (y + eps) when the call site asks for a guarded denominator."""
    if eps is not None:
        y = Add.apply(y, Tensor(np.asarray(eps, dtype=y.dtype)))
    return Div.apply(x, y)


def neg(x: Tensor) -> Tensor:
    return Neg.apply(x)


def cast(x: Tensor, dtype: Any) -> Tensor:
    return Cast.apply(x, dtype=np.dtype(dtype))


def power(x: Tensor, exponent: float) -> Tensor:
    return Power.apply(x, exponent=exponent)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def gelu(x: Tensor) -> Tensor:
    return GELU.apply(x)


def clamp(x: Tensor, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    return Clamp.apply(x, low=low, high=high)


def clamp_min(x: Tensor, low: float) -> Tensor:
    return Clamp.apply(x, low=low, high=None)


def maximum(x: Tensor, value: float) -> Tensor:
    return MaximumScalar.apply(x, value=value)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    return Softmax.apply(x, axis=axis)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "gelu": gelu,
    "max_with_scalar": maximum,
    "clamp_min": clamp_min,
}


def elementwise(op: str, *operands: Any, **kwargs: Any) -> Tensor:
    """Dispatch an elementwise operation by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise UsageError(f"unknown elementwise op '{op}', expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*operands, **kwargs)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    return Permute.apply(x, axes=tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise UsageError("concat needs at least one tensor")
    return Concat.apply(*tensors, axis=axis)


def roll(x: Tensor, shifts: Union[int, Sequence[int]], axes: Union[int, Sequence[int]]) -> Tensor:
    shifts = (shifts,) if isinstance(shifts, int) else tuple(shifts)
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    if len(shifts) != len(axes):
        raise UsageError(f"roll got {len(shifts)} shifts for {len(axes)} axes")
    return Roll.apply(x, shifts=shifts, axes=axes)


def slice(x: Tensor, index: Any) -> Tensor:  # noqa: A001
    return Slice.apply(x, index=index)


def rearrange(x: Tensor, pattern: str, **axes_lengths: int) -> Tensor:
    return Rearrange.apply(x, pattern=pattern, axes_lengths=axes_lengths)


def _with_bias(out: Tensor, bias: Optional[Tensor]) -> Tensor:
    if bias is None:
        return out
    return add(out, reshape(bias, (1, -1, 1, 1, 1)))


def conv3d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    return _with_bias(Conv3d.apply(x, weight, stride=stride, padding=padding), bias)


def conv3d_transposed(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
) -> Tensor:
    return _with_bias(ConvTranspose3d.apply(x, weight, stride=stride), bias)


def layer_norm(
    x: Tensor,
    gain: Tensor,
    offset: Tensor,
    axis: int = 1,
    eps: float = 1e-5,
) -> Tensor:
    return LayerNorm.apply(x, gain, offset, axis=axis, eps=eps)


def gradcheck(
    fn: Any,
    inputs: Sequence[Tensor],
    step: float = 1e-6,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Analytic and central finite-difference gradients of `sum(fn(*inputs))`.

    Returns one (analytic, numeric) pair per input; inputs should be float64.
    """
    leaves = [Tensor(as_tensor(t).data, requires_grad=True) for t in inputs]
    fn(*leaves).sum().backward()
    results = []
    for position, leaf in enumerate(leaves):
        base = leaf.numpy()
        numeric = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            values = []
            for delta in (step, -step):
                probe = base.copy()
                probe[index] += delta
                args = [Tensor(probe) if i == position else Tensor(t.data) for i, t in enumerate(leaves)]
                values.append(fn(*args).sum().item())
            numeric[index] = (values[0] - values[1]) / (2 * step)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
        results.append((analytic, numeric))
    return results
