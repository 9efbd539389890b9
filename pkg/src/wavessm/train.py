"""Single-pair overfit training: the smallest loop that exercises the
analytic gradients end to end.

Training runs in float64 (the gradients were validated at that precision)
and the model is cast back to float32 before checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import network as net

TOY_LR_MAX = 2e-3
TOY_LR_MIN = 1e-7


def train_pair(
    model: net.Model,
    low: np.ndarray,
    target: np.ndarray,
    steps: int,
    lr_max: float = TOY_LR_MAX,
    lr_min: float = TOY_LR_MIN,
    log_every: int = 0,
) -> tuple[float, float]:
    """AdamW on one (low, target) image pair; returns (initial, final) L1.

    ``low`` and ``target`` are (H, W, 3) arrays in [0, 1] of equal shape.
    """
    if low.shape != target.shape:
        raise ValueError(f"pair shapes differ: {low.shape} vs {target.shape}")
    h, w = low.shape[0], low.shape[1]
    model.astype(np.float64)
    x = ad.constant(net.pad_to_multiple(low.astype(np.float64)))
    t = ad.constant(target.astype(np.float64))

    def loss_fn() -> ad.Var:
        out = net.forward_padded(model, x)
        cropped = ad.narrow(ad.narrow(out, 0, 0, h), 1, 0, w)
        return ad.l1_loss(cropped, t)

    state = ad.OptimState(lr=lr_max)
    initial = float(loss_fn().value)
    for step in range(steps):
        loss = loss_fn()
        grads = ad.backward(loss, model.params)
        lr = ad.cosine_lr(step, steps, lr_max, lr_min)
        ad.adamw_step(model.params, grads, state, lr=lr)
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1:4d}  l1 {float(loss.value):.6f}  lr {lr:.2e}")
    with ad.no_grad():
        final = float(loss_fn().value)
    model.astype(np.float32)
    return initial, final
