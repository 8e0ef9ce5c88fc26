"""Forward/backward numpy primitives for the encoder stack.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and that cache. Leading axes are treated as batch axes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_GELU_C = np.sqrt(2.0 / np.pi)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def softmax_backward(dy, y, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def linear_forward(x, W, b=None):
    y = x @ W
    if b is not None:
        y = y + b
    return y, x


def linear_backward(dy, x, W):
    fan_in, fan_out = W.shape
    dW = x.reshape(-1, fan_in).T @ dy.reshape(-1, fan_out)
    db = dy.reshape(-1, fan_out).sum(axis=0)
    dx = dy @ W.T
    return dx, dW, db


def layer_norm_forward(x, gain=None, bias=None, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    y = xhat
    if gain is not None:
        y = y * gain + bias
    return y, (xhat, rstd)


def layer_norm_backward(dy, cache, gain):
    xhat, rstd = cache
    d = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, d).sum(axis=0)
    dbias = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gain
    dx = rstd * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def gelu_forward(x):
    # tanh approximation
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dy, x):
    return dy * (x > 0)


def mha_forward(x, Wqkv, bqv, Wo, bo, n_heads):
    """Multi-head scaled dot-product self-attention over axis -2 of ``x`` (B, T, d).

    ``bqv`` holds the query and value biases. A key bias only adds a per-query
    constant to the attention logits, which softmax ignores, so there is none.
    """
    B, T, d = x.shape
    dh = d // n_heads
    qkv = x @ Wqkv
    qkv[..., :d] += bqv[:d]
    qkv[..., 2 * d :] += bqv[d:]
    qkv = qkv.reshape(B, T, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / np.sqrt(dh)
    attn = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    out = ctx @ Wo + bo
    return out, (x, q, k, v, attn, ctx, scale)


def mha_backward(dout, cache, Wqkv, Wo, n_heads):
    x, q, k, v, attn, ctx, scale = cache
    B, T, d = x.shape
    dh = d // n_heads
    dctx, dWo, dbo = linear_backward(dout, ctx, Wo)
    dctx = dctx.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(dattn, attn) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, T, 3 * d)
    dx, dWqkv, dbqkv = linear_backward(dqkv, x, Wqkv)
    return dx, dWqkv, np.concatenate([dbqkv[:d], dbqkv[2 * d :]]), dWo, dbo


def attention_pool_forward(H, w):
    """Self-attention pooling: weights ``softmax(H @ w)`` over time, output ``a @ H``."""
    a = softmax(H @ w)
    C = np.einsum("...t,...td->...d", a, H)
    return C, (H, a)


def attention_pool_backward(dC, cache, w):
    H, a = cache
    da = np.einsum("...td,...d->...t", H, dC)
    dlogits = softmax_backward(da, a)
    dw = np.einsum("...t,...td->...d", dlogits, H).reshape(-1, H.shape[-1]).sum(axis=0)
    dH = a[..., :, None] * dC[..., None, :] + dlogits[..., :, None] * w
    return dH, dw


def same_padding(length, kernel, stride):
    out_len = -(-length // stride)
    total = max(0, (out_len - 1) * stride + kernel - length)
    return total // 2, total - total // 2


def conv1d(x, W, b, stride):
    """Strided 1-D convolution with 'same' padding; ``x`` is (B, L, C_in), ``W`` (k, C_in, C_out)."""
    k, c_in, c_out = W.shape
    left, right = same_padding(x.shape[1], k, stride)
    if left or right:
        x = np.pad(x, ((0, 0), (left, right), (0, 0)))
    win = sliding_window_view(x, k, axis=1)[:, ::stride]  # (B, L_out, C_in, k)
    B, L_out = win.shape[:2]
    cols = win.transpose(0, 1, 3, 2).reshape(B, L_out, k * c_in)
    return cols @ W.reshape(k * c_in, c_out) + b

