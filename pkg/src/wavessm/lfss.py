"""Low-frequency block: gated state-space mixing plus a gated channel MLP.

The block normalizes its input, mixes it spatially with the four-direction
selective scan behind a SiLU gate (the "VSSM" line), adds a per-channel
scaled residual, then does the same with a gated feed-forward stage.
"Linear" layers are realized as 1x1 convolutions, which is the identical
position-wise operation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import scan2d
from .params import ConvParams, LayerNormParams, ParamBuilder


@dataclass
class VssmWeights:
    in_linear: ConvParams  # C -> D (1x1)
    dw_conv: ConvParams  # depth-wise 3x3 on D
    scan: scan2d.Scan2dWeights
    out_norm: LayerNormParams  # on D
    gate_linear: ConvParams  # C -> D (1x1)
    out_linear: ConvParams  # D -> C (1x1)


@dataclass
class GffnWeights:
    expand: ConvParams  # C -> 2C (1x1)
    dw: ConvParams  # depth-wise 3x3 on 2C
    out: ConvParams  # C -> C (1x1)


@dataclass
class LfssWeights:
    norm1: LayerNormParams
    vssm: VssmWeights
    norm2: LayerNormParams
    gffn: GffnWeights
    beta: ad.Var  # (C,) residual scale
    gamma: ad.Var  # (C,) residual scale


def vssm(x: ad.Var, w: VssmWeights) -> ad.Var:
    """Two-branch gated mixer; scan branch modulated by a SiLU gate."""
    t = ad.silu(w.dw_conv(w.in_linear(x)))
    x1 = w.out_norm(scan2d.ssm2d(t, w.scan))
    x2 = ad.silu(w.gate_linear(x))
    return w.out_linear(ad.mul(x1, x2))


def gffn(x: ad.Var, norm: LayerNormParams, w: GffnWeights) -> ad.Var:
    """Gated feed-forward: expand to 2C, split, GELU-gate, project back."""
    c = x.value.shape[2]
    t = w.dw(w.expand(norm(x)))
    f1 = ad.narrow(t, 2, 0, c)
    f2 = ad.narrow(t, 2, c, c)
    return w.out(ad.mul(ad.gelu(f1), f2))


def lfss_block(x: ad.Var, w: LfssWeights) -> ad.Var:
    z = ad.add(vssm(w.norm1(x), w.vssm), ad.mul(x, w.beta))
    return ad.add(gffn(z, w.norm2, w.gffn), ad.mul(z, w.gamma))


def build_scan2d(pb: ParamBuilder, prefix: str, d: int, n: int) -> scan2d.Scan2dWeights:
    """Shared dynamics plus per-direction projections.

    The time-scale projections start at zero so the initial per-token scales
    sit exactly at softplus(bias), i.e. inside [1e-3, 1e-1].
    """
    a_log = pb.state_matrix_log(f"{prefix}.a_log", d, n)
    dskip = pb.scale(f"{prefix}.dskip", d, 1.0)
    dirs = []
    for i in range(len(scan2d.SCAN_ORDER)):
        dirs.append(
            scan2d.DirectionWeights(
                w_b=pb.matrix(f"{prefix}.dir{i}.w_b", d, n),
                w_c=pb.matrix(f"{prefix}.dir{i}.w_c", d, n),
                w_dt=pb.matrix(f"{prefix}.dir{i}.w_dt", d, d, zero=True),
                dt_bias=pb.timescale_bias(f"{prefix}.dir{i}.dt_bias", d),
            )
        )
    return scan2d.Scan2dWeights(a_log=a_log, dskip=dskip, dirs=dirs)


def build_lfss(pb: ParamBuilder, prefix: str, c: int, expand: int, state_size: int) -> LfssWeights:
    d = expand * c
    return LfssWeights(
        norm1=pb.layer_norm(f"{prefix}.norm1", c),
        vssm=VssmWeights(
            in_linear=pb.conv(f"{prefix}.vssm.in_linear", 1, c, d),
            dw_conv=pb.conv(f"{prefix}.vssm.dw_conv", 3, d, d, groups=d),
            scan=build_scan2d(pb, f"{prefix}.vssm.scan", d, state_size),
            out_norm=pb.layer_norm(f"{prefix}.vssm.out_norm", d),
            gate_linear=pb.conv(f"{prefix}.vssm.gate_linear", 1, c, d),
            out_linear=pb.conv(f"{prefix}.vssm.out_linear", 1, d, c),
        ),
        norm2=pb.layer_norm(f"{prefix}.norm2", c),
        gffn=GffnWeights(
            expand=pb.conv(f"{prefix}.gffn.expand", 1, c, 2 * c),
            dw=pb.conv(f"{prefix}.gffn.dw", 3, 2 * c, 2 * c, groups=2 * c),
            out=pb.conv(f"{prefix}.gffn.out", 1, c, c),
        ),
        beta=pb.scale(f"{prefix}.beta", c, 1.0),
        gamma=pb.scale(f"{prefix}.gamma", c, 1.0),
    )
