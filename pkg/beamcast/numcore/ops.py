"""Differentiable operations: linear algebra, convolution, pooling, normalization, losses

The public functions at the bottom of this module (matmul, conv2d, maxpool2d,
relu, softmax, layernorm, batchnorm2d, linear, dropout, cross_entropy) validate
their arguments, accept both batched and unbatched layouts where that makes
sense, and dispatch to the `Function` subclasses defined here.
"""

import logging
from dataclasses import dataclass
from typing import Any, Optional, Union

import numpy as np

from beamcast.errors import ConfigurationError, DimensionError, LabelRangeError
from beamcast.numcore.tensor import Function, Tensor, get_default_dtype

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------- elementwise
class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.x_shape, self.y_shape = x.shape, y.shape
        return x + y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.unbroadcast(grad, self.x_shape), self.unbroadcast(grad, self.y_shape)


class Sub(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.x_shape, self.y_shape = x.shape, y.shape
        return x - y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.unbroadcast(grad, self.x_shape), self.unbroadcast(-grad, self.y_shape)


class Mul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.x, self.y = x, y
        return x * y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.unbroadcast(grad * self.y, self.x.shape),
            self.unbroadcast(grad * self.x, self.y.shape),
        )


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


# --------------------------------------------------------------------------- shape ops
class Reshape(Function):
    def forward(self, x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.in_shape),)


class Permute(Function):
    def forward(self, x: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
        self.inverse = tuple(np.argsort(axes))
        return np.transpose(x, axes)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(grad, self.inverse),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = -1) -> np.ndarray:
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Sum(Function):
    def forward(self, x: np.ndarray, axis: Optional[int] = None, keepdims: bool = False) -> np.ndarray:
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.ascontiguousarray(np.broadcast_to(grad, self.in_shape)),)


# --------------------------------------------------------------------------- linear algebra
class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return self.unbroadcast(grad_a, self.a.shape), self.unbroadcast(grad_b, self.b.shape)


# --------------------------------------------------------------------------- convolution
def _im2col_3x3(x_padded: np.ndarray, height: int, width: int) -> np.ndarray:
    """[B, C, H+2, W+2] -> [B, C*9, H*W] patches for a 3x3 kernel, stride 1"""
    b, c = x_padded.shape[:2]
    s_b, s_c, s_h, s_w = x_padded.strides
    patches = np.lib.stride_tricks.as_strided(
        x_padded,
        shape=(b, c, 3, 3, height, width),
        strides=(s_b, s_c, s_h, s_w, s_h, s_w),
        writeable=False,
    )
    return patches.reshape(b, c * 9, height * width)


def _col2im_3x3(cols: np.ndarray, x_shape: tuple[int, ...]) -> np.ndarray:
    """Scatter-add [B, C*9, H*W] columns back onto an unpadded [B, C, H, W] image"""
    b, c, height, width = x_shape
    padded = np.zeros((b, c, height + 2, width + 2), dtype=cols.dtype)
    cols = cols.reshape(b, c, 3, 3, height, width)
    for i in range(3):
        for j in range(3):
            padded[:, :, i : i + height, j : j + width] += cols[:, :, i, j]
    return padded[:, :, 1:-1, 1:-1]


class Conv2d(Function):
    """3x3 cross-correlation, stride 1, zero padding 1 (same-size output)"""

    def forward(self, x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
        batch, _, height, width = x.shape
        c_out = kernels.shape[0]
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        self.cols = _im2col_3x3(padded, height, width)
        self.w_mat = kernels.reshape(c_out, -1)
        self.x_shape, self.k_shape = x.shape, kernels.shape
        out = np.matmul(self.w_mat, self.cols) + bias[None, :, None]
        return out.reshape(batch, c_out, height, width)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        batch, c_out = grad.shape[:2]
        g = grad.reshape(batch, c_out, -1)
        grad_bias = g.sum(axis=(0, 2))
        grad_kernels = np.tensordot(g, self.cols, axes=([0, 2], [0, 2])).reshape(self.k_shape)
        grad_cols = np.matmul(self.w_mat.T, g)
        grad_x = _col2im_3x3(grad_cols, self.x_shape)
        return grad_x, grad_kernels, grad_bias


class MaxPool2d(Function):
    """2x2 max pooling, stride 2; ties route the gradient to the row-major first element"""

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        windows = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        windows = windows.reshape(b, c, h // 2, w // 2, 4)
        self.argmax = windows.argmax(axis=-1)[..., None]
        self.x_shape = x.shape
        return np.take_along_axis(windows, self.argmax, axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        b, c, h, w = self.x_shape
        windows = np.zeros((b, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(windows, self.argmax, grad[..., None], axis=-1)
        windows = windows.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (windows.reshape(b, c, h, w),)


# --------------------------------------------------------------------------- normalization
class Softmax(Function):
    """Softmax over the last axis"""

    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = np.exp(x - x.max(axis=-1, keepdims=True))
        self.out = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        s = self.out
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    """Normalize over the last axis, then scale/shift by gamma/beta"""

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.x_hat = (x - mean) * self.inv_std
        self.gamma = gamma
        return self.x_hat * gamma + beta

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.x_hat.shape[-1]
        reduce_axes = tuple(range(grad.ndim - 1))
        grad_gamma = (grad * self.x_hat).sum(axis=reduce_axes)
        grad_beta = grad.sum(axis=reduce_axes)
        d_hat = grad * self.gamma
        grad_x = (self.inv_std / n) * (
            n * d_hat
            - d_hat.sum(axis=-1, keepdims=True)
            - self.x_hat * (d_hat * self.x_hat).sum(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta


class BatchNorm2dTrain(Function):
    """Batch statistics over (batch, height, width) per channel"""

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
        axes = (0, 2, 3)
        self.batch_mean = x.mean(axis=axes)
        self.batch_var = x.var(axis=axes)
        self.count = x.shape[0] * x.shape[2] * x.shape[3]
        self.inv_std = (1.0 / np.sqrt(self.batch_var + eps))[None, :, None, None]
        self.x_hat = (x - self.batch_mean[None, :, None, None]) * self.inv_std
        self.gamma = gamma[None, :, None, None]
        return self.x_hat * self.gamma + beta[None, :, None, None]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = (0, 2, 3)
        n = self.count
        grad_gamma = (grad * self.x_hat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        d_hat = grad * self.gamma
        grad_x = (self.inv_std / n) * (
            n * d_hat
            - d_hat.sum(axis=axes, keepdims=True)
            - self.x_hat * (d_hat * self.x_hat).sum(axis=axes, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta


class BatchNorm2dEval(Function):
    """Frozen running statistics: an affine map of the input"""

    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        eps: float,
    ) -> np.ndarray:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        self.x_hat = (x - running_mean.astype(x.dtype)[None, :, None, None]) * inv_std[None, :, None, None]
        self.scale = (gamma * inv_std)[None, :, None, None]
        return self.x_hat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = (0, 2, 3)
        return grad * self.scale, (grad * self.x_hat).sum(axis=axes), grad.sum(axis=axes)


# --------------------------------------------------------------------------- loss
class CrossEntropy(Function):
    """Mean over the batch of -log softmax(logits)[label]"""

    def forward(self, logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
        batch = logits.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        self.probs = np.exp(log_probs)
        self.labels = labels
        picked = log_probs[np.arange(batch), labels]
        return np.asarray(-picked.mean(), dtype=logits.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        batch = self.probs.shape[0]
        d_logits = self.probs.copy()
        d_logits[np.arange(batch), self.labels] -= 1.0
        return (d_logits * (grad / batch),)


# =========================================================================== public API
def _as_tensor(x: Union[Tensor, np.ndarray, float]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ConfigurationError(f"eps must be > 0, got {eps}", "eps")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product with numpy broadcasting over leading batch dimensions.

    Raises:
        DimensionError: if either operand is below 2-D or the inner dimensions differ
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {list(a.shape)} x {list(b.shape)}")
    return MatMul.apply(a, b)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(_as_tensor(x))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis"""
    return Softmax.apply(_as_tensor(x))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight (+ bias); weight is stored [in_features, out_features]"""
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learned scale/shift"""
    _check_eps(eps)
    x = _as_tensor(x)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(
            f"layernorm scale/shift {list(gamma.shape)}/{list(beta.shape)} do not match width {x.shape[-1]}"
        )
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def _batched(x: Tensor, name: str) -> tuple[Tensor, bool]:
    """Accept [C, H, W] or [B, C, H, W]; return the 4-D tensor and whether a batch axis was added"""
    if x.ndim == 3:
        return x.reshape(1, *x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"{name} expects [C,H,W] or [B,C,H,W], got {list(x.shape)}")
    return x, False


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """
    3x3 same-size cross-correlation (stride 1, zero padding 1).

    Args:
        x: [C_in, H, W] or [B, C_in, H, W]
        kernels: [C_out, C_in, 3, 3]
        bias: [C_out]

    Raises:
        DimensionError: on channel mismatch or a non-3x3 kernel
    """
    x, added = _batched(_as_tensor(x), "conv2d")
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d kernels must be [C_out, C_in, 3, 3], got {list(kernels.shape)}")
    if kernels.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, kernels expect {kernels.shape[1]}"
        )
    if bias.shape != (kernels.shape[0],):
        raise DimensionError(f"conv2d bias {list(bias.shape)} does not match {kernels.shape[0]} filters")
    out = Conv2d.apply(x, kernels, bias)
    return out.reshape(*out.shape[1:]) if added else out


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 on [C, H, W] or [B, C, H, W]; H and W must be even"""
    x, added = _batched(_as_tensor(x), "maxpool2d")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"maxpool2d needs even spatial dimensions, got {list(x.shape[2:])}")
    out = MaxPool2d.apply(x)
    return out.reshape(*out.shape[1:]) if added else out


@dataclass
class BatchNormStats:
    """Running statistics of one batchnorm2d layer (not learnable)"""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype: Any = None) -> "BatchNormStats":
        dtype = dtype or get_default_dtype()
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    train: bool,
    eps: float = 1e-5,
) -> Tensor:
    """
    Batch normalization per channel over spatial positions (and the batch).

    In train mode batch statistics normalize the input and the running
    statistics are updated (unbiased variance, momentum `stats.momentum`).
    In eval mode the running statistics are used, making the layer an affine
    function of its input independent of batch composition.
    """
    _check_eps(eps)
    x, added = _batched(_as_tensor(x), "batchnorm2d")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"batchnorm2d scale/shift do not match {channels} channels")

    if train:
        out = BatchNorm2dTrain.apply(x, gamma, beta, eps=eps)
        fn_stats = _last_batch_stats(x, out)
        mean, var, count = fn_stats
        unbiased = var * count / (count - 1) if count > 1 else var
        m = stats.momentum
        stats.running_mean = ((1 - m) * stats.running_mean + m * mean).astype(stats.running_mean.dtype)
        stats.running_var = ((1 - m) * stats.running_var + m * unbiased).astype(stats.running_var.dtype)
    else:
        out = BatchNorm2dEval.apply(
            x, gamma, beta, running_mean=stats.running_mean, running_var=stats.running_var, eps=eps
        )
    return out.reshape(*out.shape[1:]) if added else out


def _last_batch_stats(x: Tensor, out: Tensor) -> tuple[np.ndarray, np.ndarray, int]:
    """Batch mean/var of x; reuses the recorded function's values when a graph exists"""
    fn = out._creator
    if isinstance(fn, BatchNorm2dTrain):
        return fn.batch_mean, fn.batch_var, fn.count
    axes = (0, 2, 3)
    return x.data.mean(axis=axes), x.data.var(axis=axes), x.shape[0] * x.shape[2] * x.shape[3]


def dropout(x: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """
    Inverted dropout: in train mode zero each element with probability `rate` and
    scale survivors by 1/(1-rate); identity in eval mode.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}", "dropout")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in train mode needs a random generator", "rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return x * Tensor(mask, dtype=x.dtype)


def cross_entropy(logits: Tensor, labels: Any) -> Tensor:
    """
    Mean cross-entropy of integer labels under softmax(logits).

    Args:
        logits: [B, Q]
        labels: integer array [B] with values in [0, Q)

    Raises:
        DimensionError: if logits are not 2-D or batch sizes differ
        LabelRangeError: if a label lies outside [0, Q)
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"cross_entropy expects [B, Q] logits for {labels.shape[0]} labels, got {list(logits.shape)}")
    num_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise LabelRangeError(f"label {bad} outside [0, {num_classes})")
    return CrossEntropy.apply(logits, labels=labels)

