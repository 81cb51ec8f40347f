"""Forward/backward kernels on [batch x channels x time] float64 arrays.

Every ``*_forward`` returns its output plus the context its ``*_backward``
needs; passing ``None`` as that context raises ``ContractError``.
"""
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ContractError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _require(cache, kernel):
    if cache is None:
        raise ContractError(f'{kernel} backward called without a saved forward context')


@dataclass
class Conv1dCache:
    padded: np.ndarray
    weight: np.ndarray
    left: int
    length: int
    has_bias: bool


def conv1d_forward(x, weight, bias=None):
    """Stride-1 convolution with zero "same" padding.

    Even kernels put the extra padding frame on the right.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ValidationError(
            'conv1d shape mismatch: input %(x)s, weight %(w)s',
            params={'x': x.shape, 'w': weight.shape},
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValidationError('conv1d bias must have one entry per output channel')
    k = weight.shape[2]
    left = (k - 1) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (left, k - 1 - left)))
    cols = sliding_window_view(padded, k, axis=2)
    out = np.tensordot(cols, weight, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias[None, :, None]
    return np.ascontiguousarray(out), Conv1dCache(padded, weight, left, x.shape[2], bias is not None)


def conv1d_backward(grad_out, cache):
    _require(cache, 'conv1d')
    k = cache.weight.shape[2]
    cols = sliding_window_view(cache.padded, k, axis=2)
    grad_w = np.tensordot(grad_out, cols, axes=([0, 2], [0, 2]))
    grad_cols = np.tensordot(grad_out, cache.weight, axes=([1], [0]))
    grad_padded = np.zeros_like(cache.padded)
    for j in range(k):
        grad_padded[:, :, j:j + cache.length] += grad_cols[:, :, :, j].transpose(0, 2, 1)
    grad_x = grad_padded[:, :, cache.left:cache.left + cache.length]
    grad_b = grad_out.sum(axis=(0, 2)) if cache.has_bias else None
    return np.ascontiguousarray(grad_x), grad_w, grad_b


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training,
                      momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel normalization over (batch x time).

    Returns (out, cache, (running_mean, running_var)); the running statistics
    only move in training mode.
    """
    if training:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        n = x.shape[0] * x.shape[2]
        unbiased = var * n / (n - 1) if n > 1 else var
        stats = ((1.0 - momentum) * running_mean + momentum * mean,
                 (1.0 - momentum) * running_var + momentum * unbiased)
    else:
        mean, var = running_mean, running_var
        stats = (running_mean, running_var)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * x_hat + beta[None, :, None]
    return out, BatchNormCache(x_hat, inv_std, gamma, training), stats


def batchnorm_backward(grad_out, cache):
    _require(cache, 'batchnorm')
    x_hat = cache.x_hat
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2))
    grad_beta = grad_out.sum(axis=(0, 2))
    grad_xhat = grad_out * cache.gamma[None, :, None]
    inv_std = cache.inv_std[None, :, None]
    if not cache.training:
        return grad_xhat * inv_std, grad_gamma, grad_beta
    n = x_hat.shape[0] * x_hat.shape[2]
    grad_x = inv_std / n * (
        n * grad_xhat
        - grad_xhat.sum(axis=(0, 2), keepdims=True)
        - x_hat * (grad_xhat * x_hat).sum(axis=(0, 2), keepdims=True)
    )
    return grad_x, grad_gamma, grad_beta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    _require(mask, 'relu')
    return grad_out * mask


@dataclass
class MaxPoolCache:
    argmax: np.ndarray
    length: int


def maxpool3_forward(x):
    """Width-3, stride-1 max pooling; padding never wins."""
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1)), constant_values=-np.inf)
    windows = sliding_window_view(padded, 3, axis=2)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, MaxPoolCache(argmax, x.shape[2])


def maxpool3_backward(grad_out, cache):
    _require(cache, 'maxpool3')
    b, c, t = grad_out.shape
    grad_padded = np.zeros((b, c, t + 2))
    for offset in range(3):
        grad_padded[:, :, offset:offset + t] += np.where(cache.argmax == offset, grad_out, 0.0)
    return grad_padded[:, :, 1:-1]


def gap_forward(x):
    return x.mean(axis=2), x.shape[2]


def gap_backward(grad_out, length):
    _require(length, 'gap')
    return np.repeat(grad_out[:, :, None] / length, length, axis=2)


@dataclass
class LinearCache:
    x: np.ndarray
    weight: np.ndarray


def linear_forward(x, weight, bias):
    if x.shape[1] != weight.shape[1]:
        raise ValidationError('linear shape mismatch: input %(x)s, weight %(w)s',
                              params={'x': x.shape, 'w': weight.shape})
    return x @ weight.T + bias, LinearCache(x, weight)


def linear_backward(grad_out, cache):
    _require(cache, 'linear')
    return grad_out @ cache.weight, grad_out.T @ cache.x, grad_out.sum(axis=0)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


@dataclass
class SoftmaxCECache:
    probs: np.ndarray
    labels: np.ndarray


def softmax_ce_forward(logits, labels):
    """Mean categorical cross-entropy over the batch, plus the probabilities."""
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(len(labels)), labels].mean()
    probs = np.exp(log_probs)
    return float(loss), probs, SoftmaxCECache(probs, labels)


def softmax_ce_backward(cache):
    _require(cache, 'softmax_ce')
    grad = cache.probs.copy()
    grad[np.arange(len(cache.labels)), cache.labels] -= 1.0
    return grad / len(cache.labels)
