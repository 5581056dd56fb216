"""User-level differential privacy: clipping, noisy aggregation, accounting.

The accountant tracks Renyi differential privacy of the subsampled
Gaussian mechanism and converts to (epsilon, delta) by minimizing over
orders. Its only inputs are the sampling ratio, the noise multiplier,
the round count and delta; nothing about what the rest of the pipeline
does to model outputs (denoising included) can change its answer.

Client sampling here is fixed-size without replacement but accounted
with the Poisson-subsampling bound at q = m/N, the standard
approximation for federated rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .rng import make_rng
from .tensor import ParamSet

__all__ = [
    "PrivacySpec",
    "RdpCurve",
    "RdpAccountant",
    "DEFAULT_ORDERS",
    "clip_l2",
    "noisy_mean",
    "rdp_subsampled_gaussian",
    "epsilon",
]

# integer orders 2..64 plus a coarse high tail
DEFAULT_ORDERS = tuple(float(a) for a in range(2, 65)) + (128.0, 256.0, 512.0)


@dataclass(frozen=True)
class PrivacySpec:
    """Mechanism parameters: clip norm C, noise multiplier z, m of N, delta."""

    clip_norm: float
    noise_multiplier: float
    clients_per_round: int
    population: int
    delta: float

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")
        if self.clients_per_round < 1:
            raise ValueError("clients_per_round must be positive")
        if self.population < self.clients_per_round:
            raise ValueError(
                f"population {self.population} smaller than "
                f"clients_per_round {self.clients_per_round}"
            )
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")

    @property
    def q(self) -> float:
        """Per-round sampling ratio m/N."""
        return self.clients_per_round / self.population


def clip_l2(delta: ParamSet, clip_norm: float) -> ParamSet:
    """Scale a model delta so its flattened L2 norm is at most clip_norm."""
    if not clip_norm > 0:
        raise ValueError(f"clip norm must be positive, got {clip_norm}")
    norm = delta.l2_norm()
    if norm <= clip_norm:
        return delta
    return delta.scale(clip_norm / norm)


def noisy_mean(deltas: list[ParamSet], spec: PrivacySpec, seed: int) -> ParamSet:
    """Average clipped deltas and add N(0, (z*C/m)^2) per coordinate.

    Summation runs in list order, so callers get bit-exact replay by
    presenting deltas in fixed client-index order.
    """
    if not deltas:
        raise ValueError("noisy_mean of an empty delta list")
    if len(deltas) != spec.clients_per_round:
        raise ValueError(
            f"got {len(deltas)} deltas, spec says {spec.clients_per_round} per round"
        )
    total = deltas[0]
    for d in deltas[1:]:
        total = total.add(d)
    mean = total.scale(1.0 / len(deltas))
    if spec.noise_multiplier == 0.0:
        return mean
    if math.isinf(spec.clip_norm):
        raise ValueError("noise requested with infinite clip norm")
    std = spec.noise_multiplier * spec.clip_norm / spec.clients_per_round
    rng = make_rng(seed)
    return ParamSet(
        (name, t + _noise_like(t, std, rng)) for name, t in mean
    )


def _noise_like(t, std, rng):
    from .tensor import Tensor

    return Tensor(std * rng.standard_normal(t.shape))


@dataclass(frozen=True)
class RdpCurve:
    """RDP epsilon(alpha) sampled at a fixed list of orders."""

    orders: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.orders) != len(self.values):
            raise ValueError("orders and values length mismatch")
        if not self.orders:
            raise ValueError("empty RDP curve")
        if any(v < 0 for v in self.values):
            raise ValueError("negative RDP value")


def rdp_subsampled_gaussian(q: float, z: float, orders=DEFAULT_ORDERS) -> RdpCurve:
    """RDP curve of one subsampled Gaussian mechanism invocation.

    q = 1 uses the exact Gaussian-mechanism value alpha/(2 z^2) at any
    order > 1. q < 1 uses the binomial-sum bound for integer orders,
    evaluated in log space:

        eps(a) = logsumexp_{i=0..a}[ log C(a,i) + i log q
                 + (a-i) log(1-q) + (i^2-i)/(2 z^2) ] / (a-1)
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"sampling ratio must be in (0, 1], got {q}")
    if not z > 0:
        raise ValueError(f"noise multiplier must be positive, got {z}")
    values = []
    for alpha in orders:
        if alpha <= 1:
            raise ValueError(f"RDP order must exceed 1, got {alpha}")
        if q == 1.0:
            values.append(alpha / (2.0 * z * z))
            continue
        if alpha != int(alpha) or alpha < 2:
            raise ValueError(
                f"subsampled branch needs integer orders >= 2, got {alpha}"
            )
        a = int(alpha)
        i = np.arange(a + 1, dtype=np.float64)
        log_binom = gammaln(a + 1) - gammaln(i + 1) - gammaln(a - i + 1)
        log_terms = (
            log_binom
            + i * math.log(q)
            + (a - i) * math.log1p(-q)
            + (i * i - i) / (2.0 * z * z)
        )
        values.append(max(float(logsumexp(log_terms)) / (a - 1), 0.0))
    return RdpCurve(orders=tuple(float(a) for a in orders), values=tuple(values))


def epsilon(curve: RdpCurve, rounds: int, delta: float) -> tuple[float, float]:
    """(epsilon, best_order) after composing the curve over `rounds` rounds.

    epsilon = min over alpha of rounds * eps(alpha) + log(1/delta)/(alpha-1).
    Zero rounds mean the mechanism never ran, so epsilon is exactly 0.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    if rounds == 0:
        return 0.0, math.inf
    log_inv_delta = math.log(1.0 / delta)
    best_eps = math.inf
    best_order = math.nan
    for a, v in zip(curve.orders, curve.values):
        eps = rounds * v + log_inv_delta / (a - 1.0)
        if eps < best_eps:
            best_eps = eps
            best_order = a
    return best_eps, best_order


class RdpAccountant:
    """Per-round composition of the mechanism described by a PrivacySpec.

    With noise_multiplier == 0 the mechanism gives no differential
    privacy at all and epsilon is reported as infinity.
    """

    def __init__(self, spec: PrivacySpec, orders=DEFAULT_ORDERS):
        self.spec = spec
        self.rounds = 0
        if spec.noise_multiplier > 0.0:
            self._curve = rdp_subsampled_gaussian(
                spec.q, spec.noise_multiplier, orders
            )
        else:
            self._curve = None

    def advance(self, rounds: int = 1) -> None:
        if rounds < 0:
            raise ValueError("cannot advance by a negative round count")
        self.rounds += rounds

    def epsilon(self) -> tuple[float, float]:
        if self.rounds == 0:
            return 0.0, math.inf
        if self._curve is None:
            return math.inf, math.nan
        return epsilon(self._curve, self.rounds, self.spec.delta)
