"""Differentiable neural-network primitives on :class:`Tensor`.

Heavy ops (temporal convolution, normalisation, softmax family, pooling,
resizing, cross-entropy) are fused: each computes its own backward in
closed form. The attention block and MLP helpers are compositions.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Mapping

import numpy as np
from scipy import fft as sfft
from scipy.special import erf

from .tensor import Tensor, as_tensor, make_result, matmul, reshape, swap_last, transpose

ELU_ALPHA = 1.0
BICUBIC_A = -0.5


# --- convolution -------------------------------------------------------------


def _same_padding(width: int) -> tuple[int, int]:
    total = width - 1
    return total // 2, total - total // 2


def conv_temporal(
    x: Tensor, kernels: Tensor, bias: Tensor | None = None, padding: str = "valid", method: str = "auto"
) -> Tensor:
    """Convolve along time with 1 x W kernels; every electrode row is treated alike.

    ``x`` is B x C_in x K x T (or C_in x K x T), ``kernels`` C_out x C_in x 1 x W.
    ``padding`` is ``"valid"`` or ``"same"`` (zero padding, extra sample on the right).
    Computed as cross-correlation, the usual deep-learning convention.
    ``method`` picks a per-tap matrix product (``"direct"``) or frequency-domain
    products (``"fft"``); ``"auto"`` uses the FFT for kernels of 8 taps or more.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or kernels.ndim != 4 or kernels.shape[2] != 1:
        raise ValueError(f"bad shapes for conv_temporal: x {x.shape}, kernels {kernels.shape}")
    B, Cin, K, T = x.shape
    Cout, Cin_k, _, W = kernels.shape
    if Cin_k != Cin:
        raise ValueError(f"kernels expect {Cin_k} input maps, got {Cin}")
    if padding == "valid":
        left = right = 0
    elif padding == "same":
        left, right = _same_padding(W)
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    Tp = T + left + right
    if W > Tp:
        raise ValueError(f"kernel width {W} exceeds padded length {Tp}")
    if method == "auto":
        method = "fft" if W >= 8 else "direct"
    if method not in ("direct", "fft"):
        raise ValueError(f"unknown conv method {method!r}")
    kk = kernels.data[:, :, 0, :].astype(x.dtype, copy=False)
    impl = _conv_fft if method == "fft" else _conv_direct
    out, back = impl(x.data, kk, left, right)
    parents = [x, kernels]
    if bias is not None:
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        gx, gk = back(g)
        grads = [gx, gk[:, :, None, :].astype(kernels.dtype, copy=False)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    res = make_result(out, parents, backward, "conv_temporal")
    return reshape(res, res.shape[1:]) if squeeze else res


def _conv_direct(x: np.ndarray, kk: np.ndarray, left: int, right: int):
    B, Cin, K, T = x.shape
    Cout, _, W = kk.shape
    Tp = T + left + right
    Tout = Tp - W + 1
    # time-major layout so each tap's input slice is one strided matrix
    xt = np.zeros((B, Cin, Tp, K), dtype=x.dtype)
    xt[:, :, left : left + T, :] = x.transpose(0, 1, 3, 2)
    taps = np.ascontiguousarray(kk.transpose(2, 0, 1))  # W x Cout x Cin
    acc = np.zeros((B, Cout, Tout * K), dtype=x.dtype)
    for w in range(W):
        acc += taps[w] @ xt[:, :, w : w + Tout, :].reshape(B, Cin, Tout * K)
    out = np.ascontiguousarray(acc.reshape(B, Cout, Tout, K).transpose(0, 1, 3, 2))

    def back(g):
        gt = np.ascontiguousarray(g.transpose(0, 1, 3, 2)).reshape(B, Cout, Tout * K)
        gxt = np.zeros_like(xt)
        gk = np.zeros((Cout, Cin, W), dtype=x.dtype)
        taps_t = np.ascontiguousarray(taps.transpose(0, 2, 1))
        for w in range(W):
            sl = xt[:, :, w : w + Tout, :].reshape(B, Cin, Tout * K)
            gxt[:, :, w : w + Tout, :] += (taps_t[w] @ gt).reshape(B, Cin, Tout, K)
            gk[:, :, w] = (gt @ sl.transpose(0, 2, 1)).sum(axis=0)
        return np.ascontiguousarray(gxt[:, :, left : left + T, :].transpose(0, 1, 3, 2)), gk

    return out, back


def _conv_fft(x: np.ndarray, kk: np.ndarray, left: int, right: int):
    """Circular cross-correlation with a transform long enough that nothing wraps."""
    B, Cin, K, T = x.shape
    Cout, _, W = kk.shape
    Tp = T + left + right
    Tout = Tp - W + 1
    n = sfft.next_fast_len(Tp, real=True)
    # time-major real layouts (T x C x B*K) make the transforms come out frequency-major
    xt = np.zeros((n, Cin, B * K), dtype=x.dtype)
    xt[left : left + T] = x.transpose(3, 1, 0, 2).reshape(T, Cin, B * K)
    X = sfft.rfft(xt, n, axis=0)  # F x Cin x B*K
    Kf = np.ascontiguousarray(sfft.rfft(kk, n, axis=-1).transpose(2, 0, 1))  # F x Cout x Cin
    y = sfft.irfft(np.conj(Kf) @ X, n, axis=0)[:Tout]  # Tout x Cout x B*K
    out = np.ascontiguousarray(y.reshape(Tout, Cout, B, K).transpose(2, 1, 3, 0)).astype(x.dtype, copy=False)

    def back(g):
        G = sfft.rfft(np.ascontiguousarray(g.transpose(3, 1, 0, 2)).reshape(Tout, Cout, B * K), n, axis=0)
        gxp = sfft.irfft(Kf.transpose(0, 2, 1) @ G, n, axis=0)[:Tp]  # Tp x Cin x B*K
        gx = gxp[left : left + T].reshape(T, Cin, B, K).transpose(2, 1, 3, 0)
        gk = sfft.irfft(np.conj(G) @ X.transpose(0, 2, 1), n, axis=0)[:W]  # W x Cout x Cin
        return (
            np.ascontiguousarray(gx).astype(x.dtype, copy=False),
            np.ascontiguousarray(gk.transpose(1, 2, 0)).astype(x.dtype, copy=False),
        )

    return out, back


# --- normalisation -----------------------------------------------------------


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-feature-map normalisation of B x C x K x T over (B, K, T).

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); in eval mode the buffers are used.
    """
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    n = x.size // x.shape[1]
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * (var * n / max(n - 1, 1))
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(shape)) * inv.reshape(shape)
    g_ = gamma.data.reshape(shape)
    out = g_ * xhat + beta.data.reshape(shape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        if training:
            gx = (g_ * inv.reshape(shape) / n) * (
                n * g - gbeta.reshape(shape) - xhat * ggamma.reshape(shape)
            )
        else:
            gx = g * g_ * inv.reshape(shape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "batchnorm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis."""
    D = x.shape[-1]
    mean = x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    xhat = (x.data - mean) * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gh = g * gamma.data
        gx = (inv / D) * (D * gh - gh.sum(axis=-1, keepdims=True) - xhat * (gh * xhat).sum(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "layer_norm")


# --- activations -------------------------------------------------------------


def elu(x: Tensor, alpha: float = ELU_ALPHA) -> Tensor:
    neg = x.data <= 0
    em1 = np.expm1(np.minimum(x.data, 0))
    out = np.where(neg, alpha * em1, x.data)
    return make_result(out, (x,), lambda g: (np.where(neg, g * alpha * (em1 + 1), g),), "elu")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data**2) / math.sqrt(2 * math.pi)
        return (g * (cdf + x.data * pdf),)

    return make_result(out.astype(x.dtype, copy=False), (x,), backward, "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return make_result(
        out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax"
    )


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    return make_result(
        out, (x,), lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),), "log_softmax"
    )


# --- pooling / dropout ---------------------------------------------------------


def avgpool_temporal(x: Tensor, width: int) -> Tensor:
    """Non-overlapping mean pooling along the last axis (stride = width)."""
    T = x.shape[-1]
    if width < 1 or width > T:
        raise ValueError(f"pool width {width} invalid for length {T}")
    n_out = (T - width) // width + 1
    used = n_out * width
    out = x.data[..., :used].reshape(x.shape[:-1] + (n_out, width)).mean(axis=-1)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., :used] = np.repeat(g / width, width, axis=-1)
        return (gx,)

    return make_result(out, (x,), backward, "avgpool_temporal")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept entries scaled by 1/(1-p); identity in eval mode."""
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    if not training or p == 0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = (rng.random(x.shape) >= p).astype(x.dtype) * scale
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# --- resizing / scaling ----------------------------------------------------------


def cubic_kernel(s: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    s = np.abs(np.asarray(s, dtype=np.float64))
    near = ((a + 2) * s - (a + 3)) * s * s + 1
    far = ((a * s - 5 * a) * s + 8 * a) * s - 4 * a
    return np.where(s <= 1, near, np.where(s < 2, far, 0.0))


@lru_cache(maxsize=64)
def bicubic_taps(n_in: int, n_out: int, a: float = BICUBIC_A) -> tuple[np.ndarray, np.ndarray]:
    """Source indices (clamped to the edge) and kernel weights of the 4 taps behind each output sample."""
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be >= 1")
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    idx = np.floor(src).astype(int)[:, None] + np.arange(-1, 3)[None, :]
    w = cubic_kernel(src[:, None] - idx, a)
    idx = np.clip(idx, 0, n_in - 1)
    idx.flags.writeable = False
    w.flags.writeable = False
    return idx, w


@lru_cache(maxsize=64)
def bicubic_matrix(n_in: int, n_out: int, a: float = BICUBIC_A) -> np.ndarray:
    """n_out x n_in interpolation matrix (half-pixel centres, clamp to edge)."""
    idx, w = bicubic_taps(n_in, n_out, a)
    M = np.zeros((n_out, n_in))
    np.add.at(M, (np.repeat(np.arange(n_out), 4), idx.ravel()), w.ravel())
    M.flags.writeable = False
    return M


def _interp_axis(x: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    """Anchored form x[anchor] + sum_k w_k (x[tap_k] - x[anchor]): constants and identity sizes stay exact."""
    idx, w = bicubic_taps(x.shape[axis], n_out)
    w = w.astype(x.dtype)
    shape = (n_out, 1) if axis == -2 else (n_out,)
    anchor = np.take(x, idx[:, 1], axis=axis)
    acc = np.zeros_like(anchor)
    for k in range(4):
        acc += w[:, k].reshape(shape) * (np.take(x, idx[:, k], axis=axis) - anchor)
    return anchor + acc


def bicubic_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the trailing two axes with the cubic convolution kernel."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    H, W = x.shape[-2:]
    if H < 2 or W < 2:
        raise ValueError("input must be at least 2 x 2")
    out = _interp_axis(_interp_axis(x.data, out_h, -2), out_w, -1)
    Mh = bicubic_matrix(H, out_h).astype(x.dtype)
    Mw = bicubic_matrix(W, out_w).astype(x.dtype)
    return make_result(out, (x,), lambda g: (Mh.T @ g @ Mw,), "bicubic_resize")


def scale_0_255(x: Tensor) -> Tensor:
    """Affinely map each trailing 2-D plane from [min, max] onto [0, 255].

    Constant planes map to 127.5 everywhere. The backward pass includes the
    dependence of min and max on the input (routed to the first argmin/argmax).
    """
    H, W = x.shape[-2:]
    flat = x.data.reshape(-1, H * W)
    lo = flat.min(axis=1)
    hi = flat.max(axis=1)
    rng_ = hi - lo
    const = rng_ == 0
    safe = np.where(const, 1, rng_)
    out = 255 * ((flat - lo[:, None]) / safe[:, None])  # exact endpoints
    out[const] = 127.5
    imin, imax = flat.argmin(axis=1), flat.argmax(axis=1)

    def backward(g):
        gf = g.reshape(-1, H * W)
        gx = 255 * gf / safe[:, None]
        glo = (gf * 255 * (flat - hi[:, None])).sum(axis=1) / safe**2
        ghi = -(gf * 255 * (flat - lo[:, None])).sum(axis=1) / safe**2
        rows = np.arange(flat.shape[0])
        np.add.at(gx, (rows, imin), glo)
        np.add.at(gx, (rows, imax), ghi)
        gx[const] = 0
        return (gx.reshape(x.shape),)

    return make_result(out.reshape(x.shape).astype(x.dtype, copy=False), (x,), backward, "scale_0_255")


# --- dense layers and losses ------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias with ``weight`` stored as (in, out)."""
    y = matmul(x, weight) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), weight), (-1,))
    return y + bias if bias is not None else y


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be an integer vector matching the batch")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError("label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = np.asarray(np.mean(lse - z[rows, labels]), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1
        return (p * (g / B),)

    return make_result(loss, (logits,), backward, "cross_entropy")


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine of the angle between ``a`` and ``b`` along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    na = np.maximum(np.sqrt((a.data**2).sum(-1, keepdims=True)), eps)
    nb = np.maximum(np.sqrt((b.data**2).sum(-1, keepdims=True)), eps)
    dot = (a.data * b.data).sum(-1, keepdims=True)
    cos = dot / (na * nb)

    def backward(g):
        g = g[..., None]
        ga = g * (b.data / (na * nb) - cos * a.data / na**2)
        gb = g * (a.data / (na * nb) - cos * b.data / nb**2)
        return ga, gb

    return make_result(cos[..., 0], (a, b), backward, "cosine_similarity")


# --- transformer ---------------------------------------------------------------------

ATTENTION_KEYS = (
    "ln1_g", "ln1_b", "qkv_w", "qkv_b", "proj_w", "proj_b",
    "ln2_g", "ln2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b",
)


def multi_head_attention(x: Tensor, p: Mapping[str, Tensor], heads: int) -> tuple[Tensor, Tensor]:
    """Scaled dot-product self-attention on B x L x D; returns (output, B x H x L x L probs)."""
    B, L, D = x.shape
    if D % heads:
        raise ValueError(f"embedding {D} not divisible by {heads} heads")
    dh = D // heads
    qkv = linear(x, p["qkv_w"], p["qkv_b"])
    qkv = transpose(reshape(qkv, (B, L, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = matmul(q, swap_last(k)) * (1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (B, L, D))
    return linear(ctx, p["proj_w"], p["proj_b"]), attn


def attention_block(x: Tensor, p: Mapping[str, Tensor], heads: int) -> tuple[Tensor, Tensor]:
    """Pre-norm encoder block: x + MHSA(LN(x)), then h + MLP(LN(h)) with GELU."""
    a, attn = multi_head_attention(layer_norm(x, p["ln1_g"], p["ln1_b"]), p, heads)
    h = x + a
    m = linear(gelu(linear(layer_norm(h, p["ln2_g"], p["ln2_b"]), p["fc1_w"], p["fc1_b"])), p["fc2_w"], p["fc2_b"])
    return h + m, attn
