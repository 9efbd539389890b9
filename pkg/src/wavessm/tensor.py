"""Dense-array substrate: convolutions, normalization, activations, matmul.

Conventions used throughout the package:

* images and feature maps are channels-last ``(H, W, C)`` numpy arrays in
  row-major (C-contiguous) layout;
* float64 is the test/oracle precision, float32 the inference precision;
  every operation preserves the dtype of its inputs;
* all functions are pure (inputs are never mutated).

Forward kernels live next to their vector-Jacobian products (``*_vjp``);
the autodiff module wires the two together when building a tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of a 2D convolution (stride 1, reflect same-padding).

    ``groups`` is 1 for dense or ``in_channels`` for depth-wise kernels.
    """

    kernel_size: int = 3
    stride: int = 1
    groups: int = 1

    def __post_init__(self):
        if self.kernel_size not in (1, 3):
            raise ValueError(f"kernel_size must be 1 or 3, got {self.kernel_size}")
        if self.stride != 1:
            raise ValueError(f"stride must be 1, got {self.stride}")
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")


def reflect_pad(x: np.ndarray, p: int) -> np.ndarray:
    """Reflect-pad the two leading (spatial) axes by ``p`` on every side."""
    if p == 0:
        return x
    return np.pad(x, ((p, p), (p, p), (0, 0)), mode="reflect")


def reflect_pad_adjoint(g: np.ndarray, p: int) -> np.ndarray:
    """Adjoint of :func:`reflect_pad`: fold border gradients onto their sources."""
    if p == 0:
        return g
    hp, wp = g.shape[0], g.shape[1]
    h, w = hp - 2 * p, wp - 2 * p
    rows = g[p : p + h].copy()
    for k in range(p):
        # padded row k mirrors source row p - k (np.pad "reflect")
        rows[p - k] += g[k]
        rows[h - 1 - (p - k)] += g[hp - 1 - k]
    out = rows[:, p : p + w].copy()
    for k in range(p):
        out[:, p - k] += rows[:, k]
        out[:, w - 1 - (p - k)] += rows[:, wp - 1 - k]
    return out


def _check_conv_shapes(x, w, b, spec):
    if x.ndim != 3:
        raise ValueError(f"conv2d input must be (H, W, C), got shape {x.shape}")
    k = spec.kernel_size
    cin = x.shape[2]
    if spec.groups not in (1, cin):
        raise ValueError(
            f"groups must be 1 or in_channels={cin}, got {spec.groups}"
        )
    if cin % spec.groups != 0:
        raise ValueError(f"groups={spec.groups} does not divide Cin={cin}")
    if w.shape[0] != k or w.shape[1] != k:
        raise ValueError(
            f"kernel axis mismatch: spec says {k}x{k}, weight is "
            f"{w.shape[0]}x{w.shape[1]}"
        )
    if w.shape[2] != cin // spec.groups:
        raise ValueError(
            f"weight in-channel axis is {w.shape[2]}, expected "
            f"Cin/groups = {cin // spec.groups}"
        )
    cout = w.shape[3]
    if cout % spec.groups != 0:
        raise ValueError(f"groups={spec.groups} does not divide Cout={cout}")
    if b.shape != (cout,):
        raise ValueError(f"bias axis is {b.shape}, expected ({cout},)")


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlation with reflect same-padding.

    ``x`` is ``(H, W, Cin)``; ``w`` is ``(k, k, Cin/groups, Cout)``;
    output is ``(H, W, Cout)``.
    """
    _check_conv_shapes(x, w, b, spec)
    k = spec.kernel_size
    h, wd, cin = x.shape
    cout = w.shape[3]
    xp = reflect_pad(x, k // 2)
    if k == 1 and spec.groups == 1:
        out = x.reshape(h * wd, cin) @ w.reshape(cin, cout)
        return (out + b).reshape(h, wd, cout)
    patches = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, Cin, k, k)
    if spec.groups == 1:
        cols = patches.transpose(0, 1, 3, 4, 2).reshape(h * wd, k * k * cin)
        out = cols @ w.reshape(k * k * cin, cout)
        return (out + b).reshape(h, wd, cout)
    # depth-wise: groups == Cin, multiplier m = Cout // Cin; output channel
    # c*m + j is input channel c filtered by its j-th kernel
    m = cout // cin
    wr = w[:, :, 0, :].reshape(k, k, cin, m)
    dw = np.einsum("hwckl,klcm->hwcm", patches, wr)  # (H, W, Cin, m)
    return dw.reshape(h, wd, cout) + b


def conv2d_vjp(g, x, w, spec):
    """Gradients of conv2d wrt (x, w, b) given output gradient ``g``."""
    k = spec.kernel_size
    h, wd, cin = x.shape
    cout = w.shape[3]
    p = k // 2
    xp = reflect_pad(x, p)
    db = g.sum(axis=(0, 1))
    if spec.groups == 1:
        patches = sliding_window_view(xp, (k, k), axis=(0, 1))
        cols = patches.transpose(0, 1, 3, 4, 2).reshape(h * wd, k * k * cin)
        gm = g.reshape(h * wd, cout)
        dw = (cols.T @ gm).reshape(k, k, cin, cout)
        dxp = np.zeros_like(xp)
        wt = w.reshape(k, k, cin, cout)
        for i in range(k):
            for j in range(k):
                dxp[i : i + h, j : j + wd] += gm.reshape(h, wd, cout) @ wt[i, j].T
        dx = reflect_pad_adjoint(dxp, p)
        return dx, dw, db
    m = cout // cin
    patches = sliding_window_view(xp, (k, k), axis=(0, 1))
    gr = g.reshape(h, wd, cin, m)
    wr = w[:, :, 0, :].reshape(k, k, cin, m)
    dw = np.einsum("hwckl,hwcm->klcm", patches, gr).reshape(k, k, 1, cout)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            dxp[i : i + h, j : j + wd] += np.einsum("hwcm,cm->hwc", gr, wr[i, j])
    dx = reflect_pad_adjoint(dxp, p)
    return dx, dw, db


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
    """Per-position normalization over the trailing channel axis."""
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ValueError(
            f"gamma/beta must match channel axis {x.shape[-1]}, got "
            f"{gamma.shape} and {beta.shape}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return xhat * gamma + beta


def layer_norm_vjp(g, x, gamma, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    dgamma = (g * xhat).sum(axis=tuple(range(x.ndim - 1)))
    dbeta = g.sum(axis=tuple(range(x.ndim - 1)))
    gx = g * gamma
    dx = inv * (
        gx
        - gx.mean(axis=-1, keepdims=True)
        - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_deriv(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_deriv(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-form) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_deriv(x):
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return phi + x * pdf


def softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_deriv(x):
    return sigmoid(x)


ACTIVATIONS = {
    "silu": (silu, silu_deriv),
    "gelu": (gelu, gelu_deriv),
    "sigmoid": (sigmoid, sigmoid_deriv),
    "softplus": (softplus, softplus_deriv),
}


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Elementwise activation; ``kind`` is one of silu/gelu/sigmoid/softplus."""
    try:
        fn, _ = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted numerically stable softmax along ``axis``."""
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_vjp(g, y, axis):
    return (g - (g * y).sum(axis=axis, keepdims=True)) * y


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense 2D matrix product with an explicit inner-axis check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner axes differ: {a.shape} vs {b.shape}")
    return a @ b


def matmul_vjp(g, a, b):
    return g @ b.T, a.T @ g


def ensure_finite(x: np.ndarray, what: str) -> np.ndarray:
    """Raise if ``x`` contains NaN or Inf; returns ``x`` unchanged."""
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.isfinite(x).sum())
        raise FloatingPointError(f"{what}: {bad} non-finite value(s)")
    return x
