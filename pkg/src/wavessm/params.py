"""Weight containers and seeded initialization helpers.

Every trainable tensor is created through a :class:`ParamBuilder`, which
registers it in a flat name -> Var dict (the checkpoint view) while the
block modules keep structured dataclass handles to the same Vars.  All
draws come from one PCG64 generator, so a seed fully determines the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tensor import ConvSpec


@dataclass
class ConvParams:
    """A convolution's weight/bias pair plus its shape contract."""

    w: ad.Var
    b: ad.Var
    spec: ConvSpec

    def __call__(self, x: ad.Var) -> ad.Var:
        return ad.conv2d(x, self.w, self.b, self.spec)


@dataclass
class LinearParams:
    w: ad.Var  # (din, dout)
    b: ad.Var  # (dout,)

    def __call__(self, x: ad.Var) -> ad.Var:
        return ad.add(ad.matmul(x, self.w), self.b)


@dataclass
class LayerNormParams:
    gamma: ad.Var
    beta: ad.Var
    eps: float = 1e-6

    def __call__(self, x: ad.Var) -> ad.Var:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class ParamBuilder:
    """Creates named parameters with deterministic, seeded initialization."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, ad.Var] = {}

    def add(self, name: str, value: np.ndarray) -> ad.Var:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        var = ad.param(name, np.asarray(value, dtype=self.dtype))
        self.params[name] = var
        return var

    def _kaiming(self, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
        bound = gain * np.sqrt(6.0 / fan_in)
        return self.rng.uniform(-bound, bound, size=shape)

    def conv(
        self, name: str, k: int, cin: int, cout: int, groups: int = 1, gain: float = 1.0
    ) -> ConvParams:
        spec = ConvSpec(kernel_size=k, groups=groups)
        cin_g = cin // groups
        w = self.add(name + ".w", self._kaiming((k, k, cin_g, cout), k * k * cin_g, gain))
        b = self.add(name + ".b", np.zeros(cout))
        return ConvParams(w, b, spec)

    def linear(self, name: str, din: int, dout: int, zero: bool = False) -> LinearParams:
        init = np.zeros((din, dout)) if zero else self._kaiming((din, dout), din)
        w = self.add(name + ".w", init)
        b = self.add(name + ".b", np.zeros(dout))
        return LinearParams(w, b)

    def layer_norm(self, name: str, c: int) -> LayerNormParams:
        gamma = self.add(name + ".gamma", np.ones(c))
        beta = self.add(name + ".beta", np.zeros(c))
        return LayerNormParams(gamma, beta)

    def matrix(self, name: str, din: int, dout: int, zero: bool = False) -> ad.Var:
        init = np.zeros((din, dout)) if zero else self._kaiming((din, dout), din)
        return self.add(name, init)

    def scale(self, name: str, c: int, value: float = 1.0) -> ad.Var:
        return self.add(name, np.full(c, value))

    def state_matrix_log(self, name: str, d: int, n: int) -> ad.Var:
        """log(1..N) rows per channel; the dynamics are -exp of this."""
        return self.add(name, np.tile(np.log(np.arange(1, n + 1)), (d, 1)))

    def timescale_bias(self, name: str, d: int, lo: float = 1e-3, hi: float = 1e-1) -> ad.Var:
        """Inverse-softplus of a log-uniform draw, so softplus(bias) is in [lo, hi]."""
        dt = np.exp(self.rng.uniform(np.log(lo), np.log(hi), size=d))
        return self.add(name, np.log(np.expm1(dt)))
