"""Reverse-mode differentiation over the package's operation set.

A ``Var`` wraps a numpy array and, while grad mode is on, remembers the
operation that produced it (parents plus one vector-Jacobian closure per
node).  ``backward`` replays the implicit tape in reverse topological
order.  Gradients are computed at the granularity of whole operations
(convolution, layer norm, selective scan, ...) rather than scalars, so the
same code path is fast enough to train the toy configuration.

Also here: the L1 training loss, a decoupled-weight-decay Adam step with a
cosine learning-rate schedule, and a finite-difference gradient checker.
"""

from __future__ import annotations

import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import ssm as _ssm
from . import tensor as _t
from . import wavelet as _w

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Var:
    """A tensor node in the computation graph."""

    __slots__ = ("value", "grad", "name", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None, name=None):
        self.value = np.asarray(value)
        self.grad = None
        self.name = name
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype}{tag})"

    def __add__(self, other):
        return add(self, as_var(other))

    def __radd__(self, other):
        return add(as_var(other), self)

    def __sub__(self, other):
        return sub(self, as_var(other))

    def __rsub__(self, other):
        return sub(as_var(other), self)

    def __mul__(self, other):
        return mul(self, as_var(other))

    def __rmul__(self, other):
        return mul(as_var(other), self)

    def __truediv__(self, other):
        return div(self, as_var(other))

    def __neg__(self):
        return neg(self)


def param(name: str, value: np.ndarray) -> Var:
    """A named trainable leaf."""
    return Var(np.asarray(value), name=name)


def constant(value) -> Var:
    return Var(value)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _node(value, parents, vjp) -> Var:
    if not _grad_enabled:
        return Var(value)
    return Var(value, parents=tuple(parents), vjp=vjp)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def neg(a: Var) -> Var:
    return _node(-a.value, (a,), lambda g: (-g,))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * (0.5 / out),))


def abs_(a: Var) -> Var:
    # subgradient convention: sign(0) = 0
    return _node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def clamp(a: Var, lo: float, hi: float) -> Var:
    mask = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


def sum_(a: Var, axis=None, keepdims: bool = False) -> Var:
    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean_(a: Var, axis=None, keepdims: bool = False) -> Var:
    if axis is None:
        count = a.value.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.value.shape[i] for i in ax]))

    def vjp(g):
        gg = g / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return _node(a.value.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def reshape(a: Var, shape) -> Var:
    orig = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Var, axes) -> Var:
    inv = tuple(np.argsort(axes))
    return _node(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(parts: list[Var], axis: int) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes[:-1])

    def vjp(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), parts, vjp)


def narrow(a: Var, axis: int, start: int, length: int) -> Var:
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def vjp(g):
        da = np.zeros_like(a.value)
        da[idx] = g
        return (da,)

    return _node(a.value[idx], (a,), vjp)


# ---------------------------------------------------------------------------
# dense math ops


def matmul(a: Var, b: Var) -> Var:
    out = _t.matmul(a.value, b.value)
    return _node(out, (a, b), lambda g: _t.matmul_vjp(g, a.value, b.value))


def conv2d(x: Var, w: Var, b: Var, spec: _t.ConvSpec) -> Var:
    out = _t.conv2d(x.value, w.value, b.value, spec)
    return _node(out, (x, w, b), lambda g: _t.conv2d_vjp(g, x.value, w.value, spec))


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-6) -> Var:
    out = _t.layer_norm(x.value, gamma.value, beta.value, eps)
    return _node(
        out,
        (x, gamma, beta),
        lambda g: _t.layer_norm_vjp(g, x.value, gamma.value, eps),
    )


def act(x: Var, kind: str) -> Var:
    fn, deriv = _t.ACTIVATIONS[kind]
    return _node(fn(x.value), (x,), lambda g: (g * deriv(x.value),))


def silu(x: Var) -> Var:
    return act(x, "silu")


def gelu(x: Var) -> Var:
    return act(x, "gelu")


def sigmoid(x: Var) -> Var:
    return act(x, "sigmoid")


def softplus(x: Var) -> Var:
    return act(x, "softplus")


def softmax(x: Var, axis: int = -1) -> Var:
    y = _t.softmax(x.value, axis=axis)
    return _node(y, (x,), lambda g: (_t.softmax_vjp(g, y, axis),))


def l2_normalize(x: Var, axis: int, eps: float = 1e-12) -> Var:
    """x / sqrt(sum(x^2, axis) + eps), built from primitives."""
    norm = sqrt(sum_(mul(x, x), axis=axis, keepdims=True) + eps)
    return div(x, norm)


# ---------------------------------------------------------------------------
# structured ops


def dwt2(x: Var) -> Var:
    """Stacked Haar analysis: (H, W, C) -> (H/2, W/2, 4C) = [cA|cH|cV|cD]."""
    out = _w.dwt2_stacked(x.value)
    return _node(out, (x,), lambda g: (_w.iwt2_stacked(g),))


def iwt2(s: Var) -> Var:
    """Stacked Haar synthesis: (H/2, W/2, 4C) -> (H, W, C)."""
    out = _w.iwt2_stacked(s.value)
    return _node(out, (s,), lambda g: (_w.dwt2_stacked(g),))


def unfold(x: Var, direction) -> Var:
    from . import scan2d as _s

    h, w = x.value.shape[0], x.value.shape[1]
    out = _s.unfold(x.value, direction)
    return _node(out, (x,), lambda g: (_s.fold(g, direction, h, w),))


def fold(seq: Var, direction, h: int, w: int) -> Var:
    from . import scan2d as _s

    out = _s.fold(seq.value, direction, h, w)
    return _node(out, (seq,), lambda g: (_s.unfold(g, direction),))


def selective_scan(u: Var, a: Var, b: Var, c: Var, dskip: Var, delta: Var) -> Var:
    """Differentiable selective scan; parallel forward, sequential backward."""
    p = _ssm.SsmParams(a.value, b.value, c.value, dskip.value, delta.value)
    if not _grad_enabled:
        return Var(_ssm.selective_scan_par(u.value, p))
    y, hist = _ssm.selective_scan_par(u.value, p, return_hidden=True)
    return _node(
        y,
        (u, a, b, c, dskip, delta),
        lambda g: _ssm.selective_scan_vjp(g, u.value, p, hist),
    )


def channel_select(x: Var, idx: np.ndarray) -> Var:
    """Gather channels by a fixed index vector; gradients scatter back."""
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        dx = np.zeros_like(x.value)
        np.add.at(dx, (slice(None), slice(None), idx), g)
        return (dx,)

    return _node(x.value[:, :, idx], (x,), vjp)


def avg_pool2(x: Var) -> Var:
    """Factor-2 bilinear downsample (2x2 block mean) of (H, W, C)."""
    h, w, c = x.value.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even H and W, got {h}x{w}")
    out = x.value.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25,)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Var, params: dict[str, Var] | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar ``loss``.

    Sets ``.grad`` on every node reached and returns a name -> gradient dict
    for named leaves.  If ``params`` is given, every entry is guaranteed a
    (possibly zero) gradient and detached parameters are reported once via
    a warning.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")

    topo: list[Var] = []
    seen = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    named: dict[str, np.ndarray] = {}
    for node in topo:
        node.grad = grads.get(id(node))
        if node.name is not None and node.grad is not None:
            named[node.name] = node.grad

    if params is not None:
        detached = [name for name in params if name not in named]
        if detached:
            warnings.warn(
                f"parameters unreachable from the loss: {sorted(detached)}",
                RuntimeWarning,
                stacklevel=2,
            )
        for name, var in params.items():
            named.setdefault(name, np.zeros_like(var.value))
    return named


def l1_loss(pred: Var, target) -> Var:
    """Mean absolute error."""
    target = as_var(target)
    if pred.value.shape != target.value.shape:
        raise ValueError(
            f"pred/target shapes differ: {pred.value.shape} vs {target.value.shape}"
        )
    return mean_(abs_(sub(pred, target)))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    """Adam moments plus hyperparameters (decoupled weight decay)."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(
    params: dict[str, Var],
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr: float | None = None,
) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    state.step += 1
    t = state.step
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    for name, var in params.items():
        g = grads[name]
        if g.shape != var.value.shape:
            raise ValueError(
                f"gradient shape {g.shape} != parameter shape {var.value.shape} "
                f"for {name!r}"
            )
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(var.value)
            state.m[name] = m
            state.v[name] = np.zeros_like(var.value)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        var.value = var.value - lr * (
            mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * var.value
        )


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float = 1e-7) -> float:
    """Cosine-annealed learning rate: lr_max at t=0 down to lr_min at t=total."""
    if total <= 0:
        return lr_min
    t = min(max(t, 0), total)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * t / total))


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheck:
    """Result of one analytic-vs-numeric comparison."""

    op: str
    max_err: float
    tol: float
    worst_input: str = ""
    worst_index: tuple = ()

    @property
    def passed(self) -> bool:
        return self.max_err < self.tol


def gradcheck(op: str, fn, leaves: dict[str, Var], tol: float, h: float = 1e-5) -> GradCheck:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` is a zero-argument callable returning a scalar Var built from
    the ``leaves`` (float64 leaf Vars); their values are perturbed in
    place, one coordinate at a time.  The error at each coordinate is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    for name, var in leaves.items():
        if var.value.dtype != np.float64:
            raise ValueError(f"gradcheck leaf {name!r} must be float64")
    analytic = backward(fn(), params=leaves)

    worst = GradCheck(op, 0.0, tol)
    for name, var in leaves.items():
        flat = var.value.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                fp = float(fn().value)
                flat[i] = orig - h
                fm = float(fn().value)
            flat[i] = orig
            num[i] = (fp - fm) / (2 * h)
        num = num.reshape(var.value.shape)
        a = analytic[name]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(num)))
        err = np.abs(a - num) / denom
        idx = np.unravel_index(np.argmax(err), err.shape)
        if err[idx] > worst.max_err:
            worst = GradCheck(op, float(err[idx]), tol, name, tuple(int(j) for j in idx))
    return worst
