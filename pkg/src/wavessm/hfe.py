"""High-frequency enhancement: channel matching, attention, and fusion.

The detail bands of a level are corrected using the already-enhanced
low-frequency features.  The matching step ("fmt") pairs every
high-frequency channel with its nearest low-frequency channel map by
Euclidean distance over flattened space, concatenates the selection with
the original details, and fuses them through a sigmoid-gated convolution.
Attention here is transposed (channel) attention with the query replaced
by its matched counterpart; a SKFF head reduces the three detail bands of
a wavelet level to one C-channel map beforehand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .params import ConvParams, LayerNormParams, LinearParams, ParamBuilder


@dataclass(frozen=True)
class FmtMatch:
    """Per high-frequency channel: nearest low-frequency channel and distance."""

    indices: np.ndarray  # (C,) intp into the low-frequency channels
    distances: np.ndarray  # (C,) Euclidean distances


# When set to a list, every fmt call appends (fl, fh, indices); used by the
# gradient checker to verify that matches sit at argmin-stable points.
MATCH_TRACE: list | None = None


def fmt_match(fl: np.ndarray, fh: np.ndarray) -> FmtMatch:
    """Nearest low channel per high channel; ties go to the lowest index."""
    if fl.shape[:2] != fh.shape[:2]:
        raise ValueError(
            f"spatial shapes differ: {fl.shape[:2]} vs {fh.shape[:2]}"
        )
    flm = fl.reshape(-1, fl.shape[2]).T  # (C_L, S)
    fhm = fh.reshape(-1, fh.shape[2]).T  # (C_H, S)
    ll = np.einsum("ls,ls->l", flm, flm)
    hh = np.einsum("hs,hs->h", fhm, fhm)
    cross = fhm @ flm.T  # (C_H, C_L)
    d2 = hh[:, None] + ll[None, :] - 2.0 * cross
    indices = np.argmin(d2, axis=1)  # first minimum wins ties
    d2min = np.maximum(d2[np.arange(d2.shape[0]), indices], 0.0)
    return FmtMatch(indices.astype(np.intp), np.sqrt(d2min))


@dataclass
class FmtWeights:
    attn_point: ConvParams  # 2C -> 2C (1x1), sigmoid branch
    conv: ConvParams  # 2C -> 2C (3x3 dense)
    out_point: ConvParams  # 2C -> C (1x1)


@dataclass
class FmtaWeights:
    qkv_point: ConvParams  # C -> 3C (1x1)
    qkv_depth: ConvParams  # depth-wise 3x3 on 3C
    alpha: ad.Var  # (heads,) learnable logit scale
    fmt: FmtWeights
    out_proj: ConvParams  # C -> C (1x1)


@dataclass
class FcfnWeights:
    point: ConvParams  # C -> C (1x1)
    depth: ConvParams  # depth-wise 3x3 on C
    fmt: FmtWeights


@dataclass
class HfeWeights:
    norm1: LayerNormParams
    fmta: FmtaWeights
    norm2: LayerNormParams
    fcfn: FcfnWeights
    heads: int


@dataclass
class SkffWeights:
    bottleneck: LinearParams  # C -> C/r
    branches: list[LinearParams]  # three C/r -> C


def fmt(fl: ad.Var, fh: ad.Var, w: FmtWeights) -> ad.Var:
    """Match low channels to high channels and fuse the concatenation.

    The matching indices are treated as fixed routing: gradients flow
    through the selected values, never through the argmin itself.
    """
    match = fmt_match(fl.value, fh.value)
    if MATCH_TRACE is not None:
        MATCH_TRACE.append((fl.value.copy(), fh.value.copy(), match.indices))
    selected = ad.channel_select(fl, match.indices)
    y = ad.concat([selected, fh], axis=2)
    gate = ad.sigmoid(w.attn_point(y))
    return w.out_point(ad.mul(gate, w.conv(y)))


def fmta(fh: ad.Var, fl_e: ad.Var, w: FmtaWeights, heads: int) -> ad.Var:
    """Transposed (channel) attention with a matched query."""
    h, wd, c = fh.value.shape
    if c % heads:
        raise ValueError(f"heads={heads} does not divide channels={c}")
    s = h * wd
    ch = c // heads
    qkv = w.qkv_depth(w.qkv_point(fh))
    q = fmt(fl_e, ad.narrow(qkv, 2, 0, c), w.fmt)
    k = ad.narrow(qkv, 2, c, c)
    v = ad.narrow(qkv, 2, 2 * c, c)

    def channels_first(t):
        return ad.transpose(ad.reshape(t, (s, c)), (1, 0))

    qn = ad.l2_normalize(channels_first(q), axis=1)
    kn = ad.l2_normalize(channels_first(k), axis=1)
    vm = channels_first(v)
    outs = []
    for i in range(heads):
        kh = ad.narrow(kn, 0, i * ch, ch)
        qh = ad.narrow(qn, 0, i * ch, ch)
        vh = ad.narrow(vm, 0, i * ch, ch)
        alpha = ad.narrow(w.alpha, 0, i, 1)
        logits = ad.div(ad.matmul(kh, ad.transpose(qh, (1, 0))), alpha)
        attn = ad.softmax(logits, axis=-1)
        outs.append(ad.matmul(attn, vh))
    merged = ad.reshape(ad.transpose(ad.concat(outs, axis=0), (1, 0)), (h, wd, c))
    return w.out_proj(merged)


def fcfn(fh_prime: ad.Var, fl_e: ad.Var, w: FcfnWeights) -> ad.Var:
    """Feed-forward stage: project, then match-correct against the low path."""
    return fmt(fl_e, w.depth(w.point(fh_prime)), w.fmt)


def hfe_block(fh: ad.Var, fl_e: ad.Var, w: HfeWeights) -> ad.Var:
    f1 = ad.add(fmta(w.norm1(fh), fl_e, w.fmta, w.heads), fh)
    return ad.add(fcfn(w.norm2(f1), fl_e, w.fcfn), f1)


def skff(b1: ad.Var, b2: ad.Var, b3: ad.Var, w: SkffWeights) -> ad.Var:
    """Softmax-weighted convex fusion of three same-shape bands."""
    if not (b1.value.shape == b2.value.shape == b3.value.shape):
        raise ValueError(
            f"band shapes differ: {b1.value.shape}, {b2.value.shape}, {b3.value.shape}"
        )
    c = b1.value.shape[2]
    pooled = ad.mean_(ad.add(ad.add(b1, b2), b3), axis=(0, 1))  # (C,)
    z = w.bottleneck(ad.reshape(pooled, (1, c)))
    logits = ad.concat([br(z) for br in w.branches], axis=0)  # (3, C)
    weights = ad.softmax(logits, axis=0)
    out = None
    for i, band in enumerate((b1, b2, b3)):
        wk = ad.reshape(ad.narrow(weights, 0, i, 1), (1, 1, c))
        term = ad.mul(band, wk)
        out = term if out is None else ad.add(out, term)
    return out


def skff_weights_of(b1: np.ndarray, b2: np.ndarray, b3: np.ndarray, w: SkffWeights) -> np.ndarray:
    """The (3, C) convex branch weights for given bands (diagnostic helper)."""
    with ad.no_grad():
        c = b1.shape[2]
        pooled = ad.mean_(ad.add(ad.add(ad.as_var(b1), ad.as_var(b2)), ad.as_var(b3)), axis=(0, 1))
        z = w.bottleneck(ad.reshape(pooled, (1, c)))
        logits = ad.concat([br(z) for br in w.branches], axis=0)
        return ad.softmax(logits, axis=0).value


def build_fmt(pb: ParamBuilder, prefix: str, c: int) -> FmtWeights:
    return FmtWeights(
        attn_point=pb.conv(f"{prefix}.attn_point", 1, 2 * c, 2 * c),
        conv=pb.conv(f"{prefix}.conv", 3, 2 * c, 2 * c),
        out_point=pb.conv(f"{prefix}.out_point", 1, 2 * c, c),
    )


def build_hfe(pb: ParamBuilder, prefix: str, c: int, heads: int) -> HfeWeights:
    if c % heads:
        raise ValueError(f"heads={heads} must divide channels={c}")
    return HfeWeights(
        norm1=pb.layer_norm(f"{prefix}.norm1", c),
        fmta=FmtaWeights(
            qkv_point=pb.conv(f"{prefix}.fmta.qkv_point", 1, c, 3 * c),
            qkv_depth=pb.conv(f"{prefix}.fmta.qkv_depth", 3, 3 * c, 3 * c, groups=3 * c),
            alpha=pb.add(f"{prefix}.fmta.alpha", np.full(heads, np.sqrt(c / heads))),
            fmt=build_fmt(pb, f"{prefix}.fmta.fmt", c),
            out_proj=pb.conv(f"{prefix}.fmta.out_proj", 1, c, c),
        ),
        norm2=pb.layer_norm(f"{prefix}.norm2", c),
        fcfn=FcfnWeights(
            point=pb.conv(f"{prefix}.fcfn.point", 1, c, c),
            depth=pb.conv(f"{prefix}.fcfn.depth", 3, c, c, groups=c),
            fmt=build_fmt(pb, f"{prefix}.fcfn.fmt", c),
        ),
        heads=heads,
    )


def build_skff(pb: ParamBuilder, prefix: str, c: int, reduction: int = 4) -> SkffWeights:
    cr = max(c // reduction, 1)
    return SkffWeights(
        bottleneck=pb.linear(f"{prefix}.bottleneck", c, cr),
        branches=[pb.linear(f"{prefix}.branch{i}", cr, c) for i in range(3)],
    )
