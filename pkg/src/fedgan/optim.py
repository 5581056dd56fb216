"""Adam with bias correction, in functional form plus a stateful wrapper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ParamSet, Tensor

__all__ = ["AdamState", "adam_step", "Adam"]


@dataclass(frozen=True)
class AdamState:
    """First/second moment buffers, compatible with the parameters they track."""

    m: ParamSet
    v: ParamSet

    @staticmethod
    def zeros(params: ParamSet) -> "AdamState":
        return AdamState(m=params.zeros_like(), v=params.zeros_like())


def adam_step(
    params: ParamSet,
    grads: ParamSet,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update; deterministic given inputs.

    t is the 1-based step index used for bias correction.
    """
    params.require_compatible(grads, "adam_step params/grads")
    params.require_compatible(state.m, "adam_step params/state")
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    new_params = []
    new_m = []
    new_v = []
    for (name, p), (_, g), (_, m), (_, v) in zip(params, grads, state.m, state.v):
        m_t = beta1 * m.data + (1.0 - beta1) * g.data
        v_t = beta2 * v.data + (1.0 - beta2) * g.data * g.data
        m_hat = m_t / (1.0 - beta1**t)
        v_hat = v_t / (1.0 - beta2**t)
        step = lr * m_hat / (np.sqrt(v_hat) + eps)
        new_params.append((name, Tensor(p.data - step)))
        new_m.append((name, Tensor(m_t)))
        new_v.append((name, Tensor(v_t)))
    return ParamSet(new_params), AdamState(m=ParamSet(new_m), v=ParamSet(new_v))


class Adam:
    """Stateful convenience wrapper around adam_step."""

    def __init__(
        self,
        params: ParamSet,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = AdamState.zeros(params)

    def step(self, params: ParamSet, grads: ParamSet) -> ParamSet:
        self.t += 1
        new_params, self.state = adam_step(
            params,
            grads,
            self.state,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            t=self.t,
        )
        return new_params
