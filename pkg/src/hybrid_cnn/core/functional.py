"""
Differentiable primitives built on `Tensor`.

All convolutions are stride-1 cross-correlations without a bias term;
normalisation layers supply the shift. Gradients are written out by hand and
checked against finite differences in `hybrid_cnn.core.gradcheck`.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hybrid_cnn.core.tensor import Tensor
from hybrid_cnn.errors import DimensionError, StateError, UsageError

logger = logging.getLogger(__name__)

__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "RunningStats",
    "conv2d",
    "batchnorm2d",
    "relu",
    "add",
    "scale",
    "sum_all",
    "mul_elementwise",
    "add_channel_bias",
    "linear_combination",
    "abs_cosine_similarity",
    "bce_with_logits",
    "sigmoid",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on raw arrays."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def conv2d(input: Tensor, kernel: Tensor, padding: int = 0) -> Tensor:
    """2D cross-correlation with zero padding and stride 1.

    Args:
        input: Tensor of shape [N, Cin, H, W].
        kernel: Tensor of shape [Cout, Cin, Kh, Kw].
        padding: Zero padding added on every spatial side.

    Returns:
        Tensor of shape [N, Cout, H + 2p - Kh + 1, W + 2p - Kw + 1].
    """
    if input.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4D input and kernel, got {input.shape} and {kernel.shape}"
        )
    if padding < 0:
        raise UsageError(f"conv2d padding must be non-negative, got {padding}")
    n, cin, h, w = input.shape
    cout, kcin, kh, kw = kernel.shape
    if cin != kcin:
        raise DimensionError(
            f"conv2d channel mismatch: input has {cin} channels, kernel expects {kcin}"
        )
    h_out = h + 2 * padding - kh + 1
    w_out = w + 2 * padding - kw + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    x_padded = np.pad(input.data, pad)
    windows = sliding_window_view(x_padded, (kh, kw), axis=(2, 3))
    k = kernel.data
    out = np.einsum("nchwij,ocij->nohw", windows, k, optimize=True)

    def _backward(grad: np.ndarray):
        grad_kernel = np.einsum("nchwij,nohw->ocij", windows, grad, optimize=True)
        g_pad = ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1))
        g_windows = sliding_window_view(np.pad(grad, g_pad), (kh, kw), axis=(2, 3))
        flipped = k[:, :, ::-1, ::-1]
        grad_padded = np.einsum("nohwij,ocij->nchw", g_windows, flipped, optimize=True)
        grad_input = grad_padded[:, :, padding : padding + h, padding : padding + w]
        return np.ascontiguousarray(grad_input), grad_kernel

    return Tensor.from_op(out, (input, kernel), _backward, "conv2d")


@dataclass
class RunningStats:
    """Per-channel running mean/variance of a batchnorm layer.

    Both buffers stay None until the first training-mode forward pass.
    """

    mean: Optional[np.ndarray] = None
    var: Optional[np.ndarray] = None
    num_batches_tracked: int = 0

    @property
    def initialized(self) -> bool:
        return self.mean is not None and self.var is not None

    def copy(self) -> "RunningStats":
        return RunningStats(
            mean=None if self.mean is None else self.mean.copy(),
            var=None if self.var is None else self.var.copy(),
            num_batches_tracked=self.num_batches_tracked,
        )


def batchnorm2d(
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    train: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Per-channel batch normalisation over (N, H, W).

    In training mode the batch statistics normalise the input and `running`
    is updated in place by an exponential moving average (running variance
    uses the unbiased estimate). In eval mode the running statistics are used.

    Raises:
        StateError: Eval mode with uninitialised running statistics.
        UsageError: Training mode with fewer than two values per channel.
    """
    if input.ndim != 4:
        raise DimensionError(f"batchnorm2d expects [N, C, H, W], got {input.shape}")
    n, c, h, w = input.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batchnorm2d affine parameters must have shape ({c},), "
            f"got {gamma.shape} and {beta.shape}"
        )
    x = input.data
    g = gamma.data.reshape(1, c, 1, 1)
    b = beta.data.reshape(1, c, 1, 1)
    m = n * h * w

    if train:
        if m < 2:
            raise UsageError("batchnorm2d in train mode needs N*H*W >= 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if not running.initialized:
            running.mean = np.zeros(c)
            running.var = np.ones(c)
        running.mean = (1.0 - momentum) * running.mean + momentum * mean
        running.var = (1.0 - momentum) * running.var + momentum * var * m / (m - 1)
        running.num_batches_tracked += 1
    else:
        if not running.initialized:
            raise StateError("batchnorm2d eval mode used before any training step")
        mean = running.mean
        var = running.var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = g * x_hat + b

    def _backward(grad: np.ndarray):
        grad_gamma = np.sum(grad * x_hat, axis=(0, 2, 3))
        grad_beta = np.sum(grad, axis=(0, 2, 3))
        g_hat = grad * g
        if train:
            sum_g = np.sum(g_hat, axis=(0, 2, 3), keepdims=True)
            sum_gx = np.sum(g_hat * x_hat, axis=(0, 2, 3), keepdims=True)
            grad_input = (inv_std.reshape(1, c, 1, 1) / m) * (m * g_hat - sum_g - x_hat * sum_gx)
        else:
            grad_input = g_hat * inv_std.reshape(1, c, 1, 1)
        return grad_input, grad_gamma, grad_beta

    return Tensor.from_op(out, (input, gamma, beta), _backward, "batchnorm2d")


def relu(input: Tensor) -> Tensor:
    """Elementwise max(x, 0); the subgradient at exactly 0 is 0."""
    mask = input.data > 0
    out = np.where(mask, input.data, 0.0)

    def _backward(grad: np.ndarray):
        return (grad * mask,)

    return Tensor.from_op(out, (input,), _backward, "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def _backward(grad: np.ndarray):
        return grad, grad

    return Tensor.from_op(a.data + b.data, (a, b), _backward, "add")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def _backward(grad: np.ndarray):
        return (grad * s,)

    return Tensor.from_op(a.data * s, (a,), _backward, "scale")


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element, as a 0-d tensor."""

    def _backward(grad: np.ndarray):
        return (np.full(a.shape, grad.item(), dtype=np.float64),)

    return Tensor.from_op(np.asarray(a.data.sum()), (a,), _backward, "sum_all")


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul_elementwise")

    def _backward(grad: np.ndarray):
        return grad * b.data, grad * a.data

    return Tensor.from_op(a.data * b.data, (a, b), _backward, "mul_elementwise")


def add_channel_bias(input: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias of shape [C] to an [N, C, H, W] tensor."""
    if input.ndim != 4 or bias.shape != (input.shape[1],):
        raise DimensionError(
            f"add_channel_bias: bias shape {bias.shape} does not match input {input.shape}"
        )
    c = input.shape[1]

    def _backward(grad: np.ndarray):
        return grad, np.sum(grad, axis=(0, 2, 3))

    return Tensor.from_op(
        input.data + bias.data.reshape(1, c, 1, 1), (input, bias), _backward, "add_channel_bias"
    )


def linear_combination(coefficients: Tensor, row: int, terms: Sequence[Tensor]) -> Tensor:
    """Return sum_j coefficients[row, j] * terms[j].

    Gradients flow to the selected coefficient row and to every term.

    Args:
        coefficients: Tensor of shape [L, k].
        row: Row of `coefficients` to use.
        terms: k tensors of one common shape.
    """
    if coefficients.ndim != 2:
        raise DimensionError(f"coefficients must be 2D [L, k], got {coefficients.shape}")
    n_rows, k = coefficients.shape
    if not 0 <= row < n_rows:
        raise UsageError(f"row {row} out of range for {n_rows} coefficient rows")
    if len(terms) != k:
        raise DimensionError(f"expected {k} terms, got {len(terms)}")
    shape = terms[0].shape
    for term in terms[1:]:
        if term.shape != shape:
            raise DimensionError(f"terms must share one shape, got {shape} and {term.shape}")

    alpha = coefficients.data[row]
    stacked = np.stack([t.data for t in terms])
    out = np.tensordot(alpha, stacked, axes=(0, 0))

    def _backward(grad: np.ndarray):
        grad_coeff = np.zeros_like(coefficients.data)
        grad_coeff[row] = np.tensordot(stacked, grad, axes=grad.ndim)
        return (grad_coeff, *(alpha[j] * grad for j in range(k)))

    return Tensor.from_op(out, (coefficients, *terms), _backward, "linear_combination")


def abs_cosine_similarity(a: Tensor) -> Tensor:
    """Absolute cosine similarity between all pairs of rows of a 2D tensor.

    `|x|` is differentiated with subgradient 0 at exactly 0.

    Raises:
        UsageError: If any row has zero norm.
    """
    if a.ndim != 2:
        raise DimensionError(f"abs_cosine_similarity expects a 2D tensor, got {a.shape}")
    rows = a.data
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        zero_rows = np.flatnonzero(norms == 0.0).tolist()
        raise UsageError(f"rows {zero_rows} have zero norm; similarity is undefined")
    gram = rows @ rows.T
    outer = np.outer(norms, norms)
    cosine = gram / outer
    out = np.abs(cosine)

    def _backward(grad: np.ndarray):
        weighted = grad * np.sign(cosine)
        m = weighted / outer
        diag = ((weighted * cosine).sum(axis=1) + (weighted * cosine).sum(axis=0)) / norms**2
        grad_rows = (m + m.T) @ rows - diag[:, None] * rows
        return (grad_rows,)

    return Tensor.from_op(out, (a,), _backward, "abs_cosine_similarity")


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy on raw logits, in the stable form
    max(z, 0) - z*t + log(1 + exp(-|z|)).

    Raises:
        DimensionError: Shapes differ.
        ValueError: A target is not exactly 0 or 1.
    """
    _require_same_shape(logits, targets, "bce_with_logits")
    t = targets.data
    if not np.all((t == 0.0) | (t == 1.0)):
        raise UsageError("bce_with_logits targets must be 0 or 1")
    z = logits.data
    per_element = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    count = z.size
    out = np.asarray(per_element.sum() / count)

    def _backward(grad: np.ndarray):
        return (grad.item() * (sigmoid(z) - t) / count, None)

    return Tensor.from_op(out, (logits, targets), _backward, "bce_with_logits")
