"""Adam parameter updates over named tensor collections.

Lives apart from the training loops so both the field trainer and the
embedding/denoiser optimizers share one tested implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter.

    Moments are created lazily on the first update of each parameter and
    always match that parameter's dtype, so checkpointed state stays
    bit-exact through the float32 container format.
    """

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple:
    """One bias-corrected Adam update applied in place.

    ``params`` maps names to leaf Tensors; ``grads`` maps a subset of the
    same names to arrays (parameters without a gradient entry are left
    untouched, including their moments).  Returns ``(params, state)``.

    With a fresh state and zero gradient the update is exactly zero; with
    a fresh state and any nonzero gradient the per-coordinate step is
    lr * g / (|g| + eps), magnitude ~= lr.
    """
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, tensor in params.items():
        if name not in grads:
            continue
        g = np.asarray(grads[name], dtype=tensor.dtype)
        if g.shape != tensor.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {tensor.data.shape}"
            )
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(tensor.dtype)
    return params, state


def zero_like_params(params: dict) -> dict:
    """Zero gradient dict matching a parameter collection's shapes."""
    return {k: np.zeros_like(t.data) for k, t in params.items()}
