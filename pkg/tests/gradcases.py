"""Scalar-valued float64 probes for every differentiable primitive.

Each case builds fresh parameters and returns ``(f, params)`` for
:func:`fcdn.autodiff.grad_check`. Outputs are contracted with a fixed random
tensor so every output coordinate contributes to the gradient.
"""

from __future__ import annotations

import numpy as np

from fcdn.autodiff import Tensor, concat, matmul, reshape, stack, transpose
from fcdn.autodiff import functional as F
from fcdn.autodiff import tensor as T


def _p(rng, *shape, scale=1.0, away_from_zero=False):
    v = rng.standard_normal(shape) * scale
    if away_from_zero:
        v = np.where(np.abs(v) < 0.05, 0.05 * np.sign(v) + 0.05 * (v == 0), v)
    return Tensor(v, requires_grad=True, dtype=np.float64)


def _case(build):
    def make(seed=0):
        rng = np.random.default_rng(seed)
        op, params = build(rng)
        probe = np.random.default_rng(seed + 1)
        w = probe.standard_normal(op().shape)

        def f():
            return (op() * Tensor(w, dtype=np.float64)).sum()

        return f, params

    return make


def _elementwise(rng):
    a, b = _p(rng, 3, 4), _p(rng, 4)
    c = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)
    return (lambda: T.tanh(a * b - a / c + (c ** 1.5) + T.exp(a * 0.3) + T.log(c) - b)), [a, b, c]


def _structural(rng):
    a, b = _p(rng, 2, 3, 4), _p(rng, 2, 3, 4)

    def op():
        s = stack([a, b], axis=1)  # 2 x 2 x 3 x 4
        t = transpose(reshape(s, (4, 3, 4)), (0, 2, 1))
        c = concat([t[:, 1:3], t[1:3, ::2]], axis=0)
        return c.sum(axis=1) + c.mean(axis=(1, 2), keepdims=True)[:, 0]

    return op, [a, b]


def _matmul(rng):
    a, b = _p(rng, 2, 3, 4), _p(rng, 4, 5)
    return (lambda: matmul(a, b)), [a, b]


def _conv(method, padding, bias=True):
    def build(rng):
        x = _p(rng, 2, 2, 3, 12)
        k = _p(rng, 3, 2, 1, 9 if method == "fft" else 4, scale=0.5)
        b = _p(rng, 3) if bias else None
        params = [x, k] + ([b] if bias else [])
        return (lambda: F.conv_temporal(x, k, b, padding=padding, method=method)), params

    return build


def _batchnorm(training):
    def build(rng):
        x = _p(rng, 3, 2, 2, 5)
        g, b = _p(rng, 2), _p(rng, 2)
        rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)

        def op():
            # fresh copies keep repeated evaluations identical
            return F.batchnorm(x, g, b, rm.copy(), rv.copy(), training)

        return op, [x, g, b]

    return build


def _layer_norm(rng):
    x, g, b = _p(rng, 3, 6), _p(rng, 6), _p(rng, 6)
    return (lambda: F.layer_norm(x, g, b)), [x, g, b]


def _activations(rng):
    x = _p(rng, 4, 5, away_from_zero=True)
    return (lambda: F.elu(x) + F.relu(x) * 0.5 + F.gelu(x) + F.softmax(x) + F.log_softmax(x, axis=0)), [x]


def _avgpool(rng):
    x = _p(rng, 2, 3, 11)
    return (lambda: F.avgpool_temporal(x, 3)), [x]


def _dropout(rng):
    x = _p(rng, 4, 6)
    return (lambda: F.dropout(x, 0.5, True, np.random.default_rng(5))), [x]


def _bicubic(rng):
    x = _p(rng, 2, 5, 6)
    return (lambda: F.bicubic_resize(x, 7, 4)), [x]


def _scale(rng):
    # distinct, well-separated values keep argmin/argmax fixed under the probe step
    v = rng.permutation(np.arange(30.0)).reshape(2, 3, 5) * 0.1 + rng.uniform(0, 0.01, (2, 3, 5))
    x = Tensor(v, requires_grad=True, dtype=np.float64)
    return (lambda: F.scale_0_255(x)), [x]


def _linear_ce(rng):
    x, w, b = _p(rng, 4, 5), _p(rng, 5, 3), _p(rng, 3)
    labels = np.array([0, 2, 1, 2])
    return (lambda: reshape(F.cross_entropy(F.linear(x, w, b), labels), (1,))), [x, w, b]


def _cosine(rng):
    a, b = _p(rng, 3, 6), _p(rng, 3, 6)
    return (lambda: F.cosine_similarity(a, b)), [a, b]


def attention_params(rng, D, mlp=4, scale=0.3, dtype=np.float64):
    shapes = {
        "ln1_g": (D,), "ln1_b": (D,), "qkv_w": (D, 3 * D), "qkv_b": (3 * D,),
        "proj_w": (D, D), "proj_b": (D,), "ln2_g": (D,), "ln2_b": (D,),
        "fc1_w": (D, mlp * D), "fc1_b": (mlp * D,), "fc2_w": (mlp * D, D), "fc2_b": (D,),
    }
    p = {}
    for k, s in shapes.items():
        v = rng.standard_normal(s) * scale
        if k.endswith("_g"):
            v = 1.0 + v
        p[k] = Tensor(v, requires_grad=True, dtype=dtype)
    return p


def _attention(rng):
    x = _p(rng, 2, 3, 8)
    p = attention_params(rng, 8)
    return (lambda: F.attention_block(x, p, 2)[0]), [x] + list(p.values())


PRIMITIVE_CASES = {
    "elementwise": _case(_elementwise),
    "structural": _case(_structural),
    "matmul": _case(_matmul),
    "conv_direct_valid": _case(_conv("direct", "valid")),
    "conv_direct_same": _case(_conv("direct", "same")),
    "conv_fft_valid": _case(_conv("fft", "valid")),
    "conv_fft_same": _case(_conv("fft", "same", bias=False)),
    "batchnorm_train": _case(_batchnorm(True)),
    "batchnorm_eval": _case(_batchnorm(False)),
    "layer_norm": _case(_layer_norm),
    "activations": _case(_activations),
    "avgpool": _case(_avgpool),
    "dropout": _case(_dropout),
    "bicubic": _case(_bicubic),
    "scale_0_255": _case(_scale),
    "linear_cross_entropy": _case(_linear_ce),
    "cosine_similarity": _case(_cosine),
    "attention_block": _case(_attention),
}
