"""Orthonormal 2D Haar transform: the lossless down/up-sampling backbone.

A single level maps ``(H, W, C)`` to four half-resolution subbands
``(cA, cH, cV, cD)``: the approximation plus horizontal, vertical and
diagonal details.  The unit-gain (orthonormal) filter convention is used,
so the transform conserves L2 energy exactly and a constant image ``v``
yields ``cA == 2v``.  ``iwt2`` is the exact algebraic inverse.

Stacked variants pack the four subbands into one ``(H/2, W/2, 4C)`` array
(channel blocks ordered cA, cH, cV, cD); the network and autodiff layers
prefer that form because the transform then stays a single linear op.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


@dataclass(frozen=True)
class WaveletSubbands:
    """One decomposition level: approximation plus three detail bands."""

    ca: np.ndarray
    ch: np.ndarray
    cv: np.ndarray
    cd: np.ndarray

    def __post_init__(self):
        shapes = {self.ca.shape, self.ch.shape, self.cv.shape, self.cd.shape}
        if len(shapes) != 1:
            raise ValueError(f"subband shapes differ: {sorted(shapes)}")

    @property
    def shape(self):
        return self.ca.shape


class SwapBand(Enum):
    LOW = "low"
    HIGH = "high"


def dwt2(x: np.ndarray) -> WaveletSubbands:
    """Single-level orthonormal Haar decomposition of an ``(H, W, C)`` array."""
    if x.ndim != 3:
        raise ValueError(f"expected (H, W, C) input, got shape {x.shape}")
    h, w = x.shape[0], x.shape[1]
    if h % 2 or w % 2:
        raise ValueError(
            f"dwt2 needs even H and W, got {h}x{w}; reflect-pad the input first"
        )
    p00 = x[0::2, 0::2]
    p01 = x[0::2, 1::2]
    p10 = x[1::2, 0::2]
    p11 = x[1::2, 1::2]
    ca = (p00 + p01 + p10 + p11) * 0.5
    ch = (p00 - p01 + p10 - p11) * 0.5
    cv = (p00 + p01 - p10 - p11) * 0.5
    cd = (p00 - p01 - p10 + p11) * 0.5
    return WaveletSubbands(ca, ch, cv, cd)


def iwt2(s: WaveletSubbands) -> np.ndarray:
    """Exact inverse of :func:`dwt2`."""
    ca, ch, cv, cd = s.ca, s.ch, s.cv, s.cd
    hh, ww, c = ca.shape
    out = np.empty((2 * hh, 2 * ww, c), dtype=ca.dtype)
    out[0::2, 0::2] = (ca + ch + cv + cd) * 0.5
    out[0::2, 1::2] = (ca - ch + cv - cd) * 0.5
    out[1::2, 0::2] = (ca + ch - cv - cd) * 0.5
    out[1::2, 1::2] = (ca - ch - cv + cd) * 0.5
    return out


def swap_subbands(
    a: WaveletSubbands, b: WaveletSubbands, which: SwapBand
) -> tuple[WaveletSubbands, WaveletSubbands]:
    """Exchange the low (cA) or high (cH, cV, cD) bands between two images."""
    if a.shape != b.shape:
        raise ValueError(f"subband shapes differ: {a.shape} vs {b.shape}")
    if which is SwapBand.LOW:
        return (
            WaveletSubbands(b.ca, a.ch, a.cv, a.cd),
            WaveletSubbands(a.ca, b.ch, b.cv, b.cd),
        )
    return (
        WaveletSubbands(a.ca, b.ch, b.cv, b.cd),
        WaveletSubbands(b.ca, a.ch, a.cv, a.cd),
    )


def dwt2_stacked(x: np.ndarray) -> np.ndarray:
    """As :func:`dwt2` but returning one ``(H/2, W/2, 4C)`` array."""
    s = dwt2(x)
    return np.concatenate([s.ca, s.ch, s.cv, s.cd], axis=2)


def iwt2_stacked(s: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dwt2_stacked`."""
    if s.shape[2] % 4:
        raise ValueError(f"stacked subbands need 4k channels, got {s.shape[2]}")
    c = s.shape[2] // 4
    return iwt2(
        WaveletSubbands(s[:, :, :c], s[:, :, c : 2 * c], s[:, :, 2 * c : 3 * c], s[:, :, 3 * c :])
    )


def subband_energies(s: WaveletSubbands) -> dict[str, float]:
    """Sum of squares per subband (orthonormal Haar conserves the total)."""
    return {
        "cA": float(np.sum(s.ca.astype(np.float64) ** 2)),
        "cH": float(np.sum(s.ch.astype(np.float64) ** 2)),
        "cV": float(np.sum(s.cv.astype(np.float64) ** 2)),
        "cD": float(np.sum(s.cd.astype(np.float64) ** 2)),
    }
