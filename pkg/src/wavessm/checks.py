"""Finite-difference verification suite covering every differentiable op.

Each entry builds a small float64 instance, projects the op output to a
scalar with a fixed random weighting, and compares analytic gradients
against central differences.  Linear/smooth ops are held to 1e-6, the
scan- and attention-bearing ops to 1e-4.  The matching step is checked at
points where the channel argmin is stable under the probe step.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import hfe as hfe_mod
from . import lfss as lfss_mod
from . import scan2d
from .params import ParamBuilder
from .tensor import ConvSpec

TOL_LINEAR = 1e-6
TOL_SCAN = 1e-4
FD_STEP = 1e-5


def _rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def _projector(shape, rng) -> ad.Var:
    return ad.constant(rng.uniform(-1.0, 1.0, size=shape))


def _scalarize(out: ad.Var, rng) -> ad.Var:
    return ad.sum_(ad.mul(out, _projector(out.value.shape, rng)))


def _leaves(**arrays) -> dict[str, ad.Var]:
    return {k: ad.param(k, np.asarray(v, dtype=np.float64)) for k, v in arrays.items()}


def _check_conv(groups: int, k: int):
    rng = _rng(1)
    cin, cout = (3, 3) if groups > 1 else (2, 3)
    g = cin if groups > 1 else 1
    leaves = _leaves(
        x=rng.normal(size=(4, 5, cin)),
        w=rng.normal(size=(k, k, cin // g, cout)),
        b=rng.normal(size=cout),
    )
    spec = ConvSpec(kernel_size=k, groups=g)
    proj = _rng(2)

    def fn():
        return _scalarize(ad.conv2d(leaves["x"], leaves["w"], leaves["b"], spec), _rng(3))

    del proj
    return fn, leaves


def _check_matmul():
    rng = _rng(4)
    leaves = _leaves(a=rng.normal(size=(3, 4)), b=rng.normal(size=(4, 2)))
    return lambda: _scalarize(ad.matmul(leaves["a"], leaves["b"]), _rng(5)), leaves


def _check_layer_norm():
    rng = _rng(6)
    leaves = _leaves(
        x=rng.normal(size=(3, 4, 5)), gamma=rng.normal(size=5), beta=rng.normal(size=5)
    )
    fn = lambda: _scalarize(
        ad.layer_norm(leaves["x"], leaves["gamma"], leaves["beta"], 1e-6), _rng(7)
    )
    return fn, leaves


def _check_act(kind: str):
    rng = _rng(hash(kind) % 1000)
    leaves = _leaves(x=rng.normal(size=(4, 6)))
    return lambda: _scalarize(ad.act(leaves["x"], kind), _rng(8)), leaves


def _check_softmax():
    rng = _rng(9)
    leaves = _leaves(x=rng.normal(size=(3, 5)))
    return lambda: _scalarize(ad.softmax(leaves["x"], axis=-1), _rng(10)), leaves


def _check_dwt(inverse: bool):
    rng = _rng(11)
    if inverse:
        leaves = _leaves(s=rng.normal(size=(3, 2, 8)))
        return lambda: _scalarize(ad.iwt2(leaves["s"]), _rng(12)), leaves
    leaves = _leaves(x=rng.normal(size=(6, 4, 2)))
    return lambda: _scalarize(ad.dwt2(leaves["x"]), _rng(12)), leaves


def _check_unfold_fold():
    rng = _rng(13)
    leaves = _leaves(x=rng.normal(size=(3, 4, 2)))

    def fn():
        total = None
        for d in scan2d.SCAN_ORDER:
            y = ad.fold(ad.unfold(leaves["x"], d), d, 3, 4)
            s = _scalarize(y, _rng(14))
            total = s if total is None else ad.add(total, s)
        return total

    return fn, leaves


def _check_avg_pool():
    rng = _rng(15)
    leaves = _leaves(x=rng.normal(size=(4, 6, 3)))
    return lambda: _scalarize(ad.avg_pool2(leaves["x"]), _rng(16)), leaves


def _check_channel_select():
    rng = _rng(17)
    leaves = _leaves(x=rng.normal(size=(3, 3, 4)))
    idx = np.array([2, 0, 0, 3])
    return lambda: _scalarize(ad.channel_select(leaves["x"], idx), _rng(18)), leaves


def _check_l1():
    rng = _rng(19)
    x = rng.normal(size=(4, 5))
    # keep |pred - target| well away from the kink at 0
    t = x + rng.choice([-1.0, 1.0], size=x.shape) * rng.uniform(0.5, 1.5, size=x.shape)
    leaves = _leaves(x=x)
    target = ad.constant(t)
    return lambda: ad.l1_loss(leaves["x"], target), leaves


def _check_selective_scan():
    rng = _rng(20)
    l, d, n = 6, 3, 2
    leaves = _leaves(
        u=rng.normal(size=(l, d)),
        a=-rng.uniform(0.5, 1.5, size=(d, n)),
        b=rng.normal(size=(l, n)),
        c=rng.normal(size=(l, n)),
        dskip=rng.normal(size=d),
        delta=rng.uniform(0.05, 0.4, size=(l, d)),
    )

    def fn():
        y = ad.selective_scan(
            leaves["u"], leaves["a"], leaves["b"], leaves["c"],
            leaves["dskip"], leaves["delta"],
        )
        return _scalarize(y, _rng(21))

    return fn, leaves


def _build_with(seed, builder):
    pb = ParamBuilder(_rng(seed), dtype=np.float64)
    w = builder(pb)
    return pb, w


def _check_ssm2d():
    rng = _rng(22)
    pb, w = _build_with(23, lambda pb: lfss_mod.build_scan2d(pb, "scan", 2, 2))
    leaves = dict(pb.params)
    leaves["x"] = ad.param("x", rng.normal(size=(3, 4, 2)))
    return lambda: _scalarize(scan2d.ssm2d(leaves["x"], w), _rng(24)), leaves


def _check_vssm():
    rng = _rng(25)
    pb = ParamBuilder(_rng(26), dtype=np.float64)
    w = lfss_mod.build_lfss(pb, "blk", 4, 2, 2)
    leaves = {k: v for k, v in pb.params.items() if k.startswith("blk.vssm")}
    leaves["x"] = ad.param("x", rng.normal(size=(3, 3, 4)))
    return lambda: _scalarize(lfss_mod.vssm(leaves["x"], w.vssm), _rng(27)), leaves


def _check_gffn():
    rng = _rng(28)
    pb = ParamBuilder(_rng(29), dtype=np.float64)
    w = lfss_mod.build_lfss(pb, "blk", 4, 2, 2)
    keep = ("blk.gffn", "blk.norm2")
    leaves = {k: v for k, v in pb.params.items() if k.startswith(keep)}
    leaves["x"] = ad.param("x", rng.normal(size=(4, 3, 4)))
    return lambda: _scalarize(lfss_mod.gffn(leaves["x"], w.norm2, w.gffn), _rng(30)), leaves


def _check_lfss_block():
    rng = _rng(31)
    pb, w = _build_with(32, lambda pb: lfss_mod.build_lfss(pb, "blk", 4, 2, 2))
    leaves = dict(pb.params)
    leaves["x"] = ad.param("x", rng.normal(size=(4, 4, 4)))
    return lambda: _scalarize(lfss_mod.lfss_block(leaves["x"], w), _rng(33)), leaves


# A match is treated as stable when the gap between best and second-best
# squared distance clears this margin; a +-h probe moves distances by orders
# of magnitude less.
MATCH_MARGIN = 100 * 10 * FD_STEP


def _match_margins_ok(fn, threshold: float = MATCH_MARGIN) -> bool:
    """Run ``fn`` once and verify every fmt site is argmin-stable."""
    trace: list = []
    hfe_mod.MATCH_TRACE = trace
    try:
        with ad.no_grad():
            fn()
    finally:
        hfe_mod.MATCH_TRACE = None
    for fl, fh, _ in trace:
        c = fl.shape[2]
        flm = fl.reshape(-1, c).T
        fhm = fh.reshape(-1, fh.shape[2]).T
        d2 = ((fhm[:, None, :] - flm[None, :, :]) ** 2).sum(axis=2)
        part = np.sort(d2, axis=1)
        if np.min(part[:, 1] - part[:, 0]) <= threshold:
            return False
    return True


def _stable_instance(make, seed0: int):
    """Rebuild ``make(seed)`` until all fmt sites clear the margin."""
    for seed in range(seed0, seed0 + 64):
        fn, leaves = make(seed)
        if _match_margins_ok(fn):
            return fn, leaves
    raise RuntimeError("no argmin-stable instance found (margin too strict)")


def _check_fmt():
    def make(seed):
        rng = _rng(seed)
        pb, w = _build_with(seed + 1000, lambda pb: hfe_mod.build_fmt(pb, "fmt", 4))
        leaves = dict(pb.params)
        leaves["fl"] = ad.param("fl", rng.normal(size=(4, 4, 4)))
        leaves["fh"] = ad.param("fh", rng.normal(size=(4, 4, 4)))
        fn = lambda: _scalarize(hfe_mod.fmt(leaves["fl"], leaves["fh"], w), _rng(36))
        return fn, leaves

    return _stable_instance(make, 34)


def _check_fmta():
    def make(seed):
        rng = _rng(seed)
        pb = ParamBuilder(_rng(seed + 1000), dtype=np.float64)
        w = hfe_mod.build_hfe(pb, "blk", 4, 2)
        leaves = {k: v for k, v in pb.params.items() if k.startswith("blk.fmta")}
        leaves["fl"] = ad.param("fl", rng.normal(size=(3, 3, 4)))
        leaves["fh"] = ad.param("fh", rng.normal(size=(3, 3, 4)))
        fn = lambda: _scalarize(
            hfe_mod.fmta(leaves["fh"], leaves["fl"], w.fmta, 2), _rng(39)
        )
        return fn, leaves

    return _stable_instance(make, 37)


def _check_fcfn():
    def make(seed):
        rng = _rng(seed)
        pb = ParamBuilder(_rng(seed + 1000), dtype=np.float64)
        w = hfe_mod.build_hfe(pb, "blk", 4, 2)
        leaves = {k: v for k, v in pb.params.items() if k.startswith("blk.fcfn")}
        leaves["fl"] = ad.param("fl", rng.normal(size=(3, 3, 4)))
        leaves["fh"] = ad.param("fh", rng.normal(size=(3, 3, 4)))
        fn = lambda: _scalarize(
            hfe_mod.fcfn(leaves["fh"], leaves["fl"], w.fcfn), _rng(42)
        )
        return fn, leaves

    return _stable_instance(make, 40)


def _check_hfe_block():
    def make(seed):
        rng = _rng(seed)
        pb, w = _build_with(seed + 1000, lambda pb: hfe_mod.build_hfe(pb, "blk", 4, 2))
        leaves = dict(pb.params)
        leaves["fl"] = ad.param("fl", rng.normal(size=(3, 3, 4)))
        leaves["fh"] = ad.param("fh", rng.normal(size=(3, 3, 4)))
        fn = lambda: _scalarize(
            hfe_mod.hfe_block(leaves["fh"], leaves["fl"], w), _rng(45)
        )
        return fn, leaves

    return _stable_instance(make, 43)


def _check_skff():
    rng = _rng(46)
    pb, w = _build_with(47, lambda pb: hfe_mod.build_skff(pb, "skff", 4))
    leaves = dict(pb.params)
    for i in range(3):
        leaves[f"b{i}"] = ad.param(f"b{i}", rng.normal(size=(3, 4, 4)))
    fn = lambda: _scalarize(
        hfe_mod.skff(leaves["b0"], leaves["b1"], leaves["b2"], w), _rng(48)
    )
    return fn, leaves


SUITE = {
    "conv2d_1x1": (lambda: _check_conv(1, 1), TOL_LINEAR),
    "conv2d_3x3": (lambda: _check_conv(1, 3), TOL_LINEAR),
    "conv2d_depthwise": (lambda: _check_conv(3, 3), TOL_LINEAR),
    "matmul": (_check_matmul, TOL_LINEAR),
    "layer_norm": (_check_layer_norm, TOL_LINEAR),
    "silu": (lambda: _check_act("silu"), TOL_LINEAR),
    "gelu": (lambda: _check_act("gelu"), TOL_LINEAR),
    "sigmoid": (lambda: _check_act("sigmoid"), TOL_LINEAR),
    "softplus": (lambda: _check_act("softplus"), TOL_LINEAR),
    "softmax": (_check_softmax, TOL_LINEAR),
    "dwt2": (lambda: _check_dwt(False), TOL_LINEAR),
    "iwt2": (lambda: _check_dwt(True), TOL_LINEAR),
    "unfold_fold": (_check_unfold_fold, TOL_LINEAR),
    "avg_pool2": (_check_avg_pool, TOL_LINEAR),
    "channel_select": (_check_channel_select, TOL_LINEAR),
    "l1_loss": (_check_l1, TOL_LINEAR),
    "skff": (_check_skff, TOL_LINEAR),
    "gffn": (_check_gffn, TOL_LINEAR),
    "selective_scan": (_check_selective_scan, TOL_SCAN),
    "ssm2d": (_check_ssm2d, TOL_SCAN),
    "vssm": (_check_vssm, TOL_SCAN),
    "lfss_block": (_check_lfss_block, TOL_SCAN),
    "fmt": (_check_fmt, TOL_SCAN),
    "fmta": (_check_fmta, TOL_SCAN),
    "fcfn": (_check_fcfn, TOL_SCAN),
    "hfe_block": (_check_hfe_block, TOL_SCAN),
}


def run_gradchecks(ops: str = "all") -> list[ad.GradCheck]:
    """Run the suite (or a single named op); returns one result per op."""
    if ops == "all":
        names = list(SUITE)
    elif ops in SUITE:
        names = [ops]
    else:
        raise ValueError(f"unknown op {ops!r}; choose from {sorted(SUITE)} or 'all'")
    results = []
    for name in names:
        build, tol = SUITE[name]
        fn, leaves = build()
        results.append(ad.gradcheck(name, fn, leaves, tol, h=FD_STEP))
    return results
