"""Discretized selective state-space recurrence and its parallel scan.

The continuous dynamics ``h' = A h + B x`` with readout ``y = C h + D x``
are discretized per token by zeroth-order hold with a token-dependent time
scale.  ``A`` is diagonal (stored per channel/state), and ``B``, ``C`` and
``Delta`` vary along the sequence, so the recurrence is a per-cell affine
map ``h_t = a_t * h_{t-1} + b_t``.  That map composes associatively, which
is what the work-efficient (Blelloch-style) parallel scan exploits: the
scan runs in fixed-size chunks, carrying the boundary state between them,
and is bit-for-bit equivalent to the sequential recurrence up to float
rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ensure_finite

# Below this |delta * a| the exact ZOH input weight is evaluated by a cubic
# Taylor polynomial to avoid catastrophic cancellation in expm1(x)/x.
TAYLOR_THRESHOLD = 1e-4

# Sequence chunk length for the parallel scan; keeps the working set small
# and bounds the temporary (chunk, D, N) arrays.
SCAN_CHUNK = 256


@dataclass(frozen=True)
class SsmParams:
    """Per-layer scan parameters for a length-L, D-channel, N-state model.

    ``a`` is the diagonal continuous state matrix (negative everywhere for
    stable dynamics), ``b``/``c`` the token-dependent input and readout
    rows, ``dskip`` the direct feed-through, and ``delta`` the positive
    per-token time scales.
    """

    a: np.ndarray  # (D, N), < 0
    b: np.ndarray  # (L, N)
    c: np.ndarray  # (L, N)
    dskip: np.ndarray  # (D,)
    delta: np.ndarray  # (L, D), > 0

    def __post_init__(self):
        d, n = self.a.shape
        l = self.delta.shape[0]
        if self.delta.shape != (l, d):
            raise ValueError(f"delta shape {self.delta.shape} != (L={l}, D={d})")
        if self.b.shape != (l, n) or self.c.shape != (l, n):
            raise ValueError(
                f"b/c shapes {self.b.shape}/{self.c.shape} != (L={l}, N={n})"
            )
        if self.dskip.shape != (d,):
            raise ValueError(f"dskip shape {self.dskip.shape} != ({d},)")
        if np.any(self.delta <= 0):
            raise ValueError("delta must be positive everywhere")
        if np.any(self.a >= 0):
            raise ValueError("diagonal state matrix must be negative everywhere")


@dataclass(frozen=True)
class ScanElement:
    """One affine recurrence cell ``h -> a*h + b``."""

    a: float
    b: float


SCAN_IDENTITY = ScanElement(1.0, 0.0)


def scan_combine(e1: ScanElement, e2: ScanElement) -> ScanElement:
    """Compose two cells, applying ``e1`` first: ``(a1a2, a2*b1 + b2)``."""
    return ScanElement(e1.a * e2.a, e2.a * e1.b + e2.b)


def _zoh_input_factor(x: np.ndarray) -> np.ndarray:
    """Stable evaluation of ``(exp(x) - 1) / x`` with a Taylor branch."""
    x = np.asarray(x)
    small = np.abs(x) < TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x / 2.0 + x * x / 6.0, np.expm1(x) / safe)


def discretize(a, b, delta):
    """Zeroth-order-hold step: ``a_bar = exp(da)``, ``b_bar = (e^{da}-1)/a * b``.

    Works elementwise on broadcastable arrays; ``delta`` must be positive.
    Returns ``(a_bar, b_bar)``.
    """
    a = np.asarray(a, dtype=np.result_type(a, b, delta))
    b = np.asarray(b, dtype=a.dtype)
    delta = np.asarray(delta, dtype=a.dtype)
    if np.any(delta <= 0):
        raise ValueError("delta must be positive")
    da = delta * a
    a_bar = np.exp(da)
    b_bar = _zoh_input_factor(da) * delta * b
    return a_bar, b_bar


def _discretized(u, p, lo, hi):
    """a_bar, b_bar*u for tokens [lo, hi): shapes (hi-lo, D, N)."""
    da = p.delta[lo:hi, :, None] * p.a[None, :, :]
    a_bar = np.exp(da)
    b_in = _zoh_input_factor(da) * p.delta[lo:hi, :, None] * p.b[lo:hi, None, :]
    b_in = b_in * u[lo:hi, :, None]
    return a_bar, b_in


def selective_scan_seq(
    u: np.ndarray, p: SsmParams, return_hidden: bool = False
) -> np.ndarray:
    """Reference sequential recurrence; ``u`` is ``(L, D)``.

    ``h_t = a_bar_t * h_{t-1} + b_bar_t * u_t``, ``y_t = <c_t, h_t> + dskip * u_t``
    with ``h_0 = 0``.  With ``return_hidden`` the full ``(L, D, N)`` state
    history is returned alongside ``y``.
    """
    l, d = u.shape
    n = p.a.shape[1]
    h = np.zeros((d, n), dtype=u.dtype)
    y = np.empty((l, d), dtype=u.dtype)
    hist = np.empty((l, d, n), dtype=u.dtype) if return_hidden else None
    for t in range(l):
        a_bar, b_in = _discretized(u, p, t, t + 1)
        h = a_bar[0] * h + b_in[0]
        y[t] = h @ p.c[t] + p.dskip * u[t]
        if hist is not None:
            hist[t] = h
    ensure_finite(y, "selective scan output")
    if return_hidden:
        return y, hist
    return y


def _blelloch_inclusive(a: np.ndarray, b: np.ndarray):
    """In-place inclusive scan of affine cells along axis 0.

    ``a`` and ``b`` are ``(L, ...)`` arrays; afterwards element ``t`` holds
    the composition of cells ``0..t`` (cell 0 applied first).  Classic
    up-sweep/down-sweep on a power-of-two padded copy; the traversal order
    is fixed, so results are deterministic.
    """
    l = a.shape[0]
    size = 1 << (l - 1).bit_length()
    ea = np.ones((size,) + a.shape[1:], dtype=a.dtype)
    eb = np.zeros((size,) + b.shape[1:], dtype=b.dtype)
    ea[:l], eb[:l] = a, b
    orig_a, orig_b = ea.copy(), eb.copy()
    levels = size.bit_length() - 1
    for dlev in range(levels):
        step = 1 << (dlev + 1)
        right = np.arange(step - 1, size, step)
        left = right - (step >> 1)
        # compose: left cell applied first, then right
        eb[right] = ea[right] * eb[left] + eb[right]
        ea[right] = ea[left] * ea[right]
    ea[size - 1] = 1.0
    eb[size - 1] = 0.0
    for dlev in range(levels - 1, -1, -1):
        step = 1 << (dlev + 1)
        right = np.arange(step - 1, size, step)
        left = right - (step >> 1)
        ta, tb = ea[left].copy(), eb[left].copy()
        ea[left], eb[left] = ea[right], eb[right]
        # right child's exclusive prefix: incoming prefix first, then the
        # saved left-subtree reduction
        eb[right] = ta * eb[right] + tb
        ea[right] = ea[right] * ta
    # exclusive -> inclusive: append the original cell
    inc_b = orig_a * eb + orig_b
    inc_a = ea * orig_a
    return inc_a[:l], inc_b[:l]


def selective_scan_par(
    u: np.ndarray, p: SsmParams, return_hidden: bool = False
) -> np.ndarray:
    """Chunked Blelloch-scan evaluation of the same contract as
    :func:`selective_scan_seq`."""
    l, d = u.shape
    n = p.a.shape[1]
    y = np.empty((l, d), dtype=u.dtype)
    hist = np.empty((l, d, n), dtype=u.dtype) if return_hidden else None
    carry = np.zeros((d, n), dtype=u.dtype)
    for lo in range(0, l, SCAN_CHUNK):
        hi = min(lo + SCAN_CHUNK, l)
        a_bar, b_in = _discretized(u, p, lo, hi)
        pa, pb = _blelloch_inclusive(a_bar, b_in)
        h = pa * carry + pb  # (chunk, D, N)
        y[lo:hi] = np.einsum("tdn,tn->td", h, p.c[lo:hi]) + p.dskip * u[lo:hi]
        if hist is not None:
            hist[lo:hi] = h
        carry = h[-1]
    ensure_finite(y, "selective scan output")
    if return_hidden:
        return y, hist
    return y


def selective_scan_vjp(g: np.ndarray, u, p: SsmParams, hist: np.ndarray):
    """Reverse-mode gradients of the scan wrt ``(u, a, b, c, dskip, delta)``.

    ``g`` is the output gradient ``(L, D)``; ``hist`` the forward state
    history.  The adjoint state runs the recurrence backwards in time
    (sequential by design; only the ZOH factors are precomputed in bulk).
    """
    l, d = u.shape
    n = p.a.shape[1]
    dt = u.dtype
    x = p.delta[:, :, None] * p.a[None, :, :]  # (L, D, N)
    a_bar = np.exp(x)
    phi = _zoh_input_factor(x)
    small = np.abs(x) < TAYLOR_THRESHOLD
    # phi'(x) for both branches of (exp(x)-1)/x
    dphi = np.where(
        small,
        0.5 + x / 3.0,
        np.divide(a_bar * (x - 1.0) + 1.0, x * x, out=np.zeros_like(x), where=~small),
    )
    b_bar = phi * p.delta[:, :, None] * p.b[:, None, :]

    # adjoint state lam[t] = dL/dh[t]; only its recurrence is sequential,
    # every reduction that consumes it is batched afterwards
    gc = g[:, :, None] * p.c[:, None, :]  # (L, D, N)
    lam = np.empty((l, d, n), dtype=dt)
    carry = np.zeros((d, n), dtype=dt)
    for t in range(l - 1, -1, -1):
        carry = gc[t] + carry
        lam[t] = carry
        carry = carry * a_bar[t]

    h_prev = np.empty_like(hist)
    h_prev[0] = 0.0
    h_prev[1:] = hist[:-1]
    dl = p.delta[:, :, None]  # (L, D, 1)
    d_abar = lam * h_prev
    d_bbar_b = lam * (u[:, :, None] * p.b[:, None, :])
    du = g * p.dskip + np.einsum("tdn,tdn->td", lam, b_bar)
    ddskip = np.einsum("td,td->d", g, u)
    dc = np.einsum("td,tdn->tn", g, hist)
    db = np.einsum("tdn,tdn->tn", lam * u[:, :, None], phi * dl)
    ddelta = np.einsum("tdn,tdn->td", d_abar, a_bar * p.a) + np.einsum(
        "tdn,tdn->td", d_bbar_b, phi + dl * dphi * p.a
    )
    da = np.einsum("tdn,tdn->dn", d_abar, a_bar * dl) + np.einsum(
        "tdn,tdn->dn", d_bbar_b, dphi * dl * dl
    )
    return du, da, db, dc, ddskip, ddelta
