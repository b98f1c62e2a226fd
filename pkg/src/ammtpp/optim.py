"""Adam with bias correction, as a pure function over a small state record."""

from dataclasses import dataclass

import numpy as np

from .exceptions import AbortStep


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns ``(new_params, new_state)`` without mutating inputs.

    Raises
    ------
    AbortStep
        If any gradient entry is not finite.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}")
    bad = ~np.isfinite(grads)
    if bad.any():
        raise AbortStep(f"{int(bad.sum())} non-finite gradient entries "
                        f"(first at index {int(np.argmax(bad))})")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads ** 2
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)
