"""Intra-slice allocation: an MVNO splits its bandwidth among its users.

The MVNO maximises ``sum_s ln(x_s * r * alpha_s + 1)`` over fractions ``x`` on
the simplex. The stationary point of the Lagrangian gives

    x_s = (W - 1/alpha_s) / r,   W = (r + sum_{s in A} 1/alpha_s) / |A|

over an active set ``A``. Users join ``A`` in order of decreasing ``alpha``
while their ``1/alpha`` stays below the water level ``W``; the rest are
pinned at zero.
The dual price of the budget constraint is ``lambda = 1 / W``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._validation import check_nonnegative, check_positive, check_probability, check_vector
from .channel import UserChannel, outage_spectral_efficiency


@dataclass(frozen=True)
class UserAllocation:
    fraction: float
    rate: float
    alpha: float


@dataclass(frozen=True)
class LowerLevelResult:
    allocations: tuple[UserAllocation, ...]
    valuation: float
    multiplier: float

    @property
    def fractions(self) -> np.ndarray:
        return np.array([a.fraction for a in self.allocations])

    @property
    def rates(self) -> np.ndarray:
        return np.array([a.rate for a in self.allocations])


def water_fill(r_m: float, alphas: np.ndarray) -> tuple[np.ndarray, float]:
    """Return optimal fractions and the budget multiplier for validated inputs."""
    x = np.zeros(alphas.size)
    positive = alphas > 0
    if not positive.any():
        return x, 0.0
    if r_m == 0:
        # v'(0+) is the best spectral efficiency; any split gives zero utility.
        return x, float(alphas.max())
    inv = np.full(alphas.size, np.inf)
    with np.errstate(divide="ignore", over="ignore"):
        inv[positive] = 1.0 / alphas[positive]
    finite = np.flatnonzero(np.isfinite(inv))
    if finite.size == 0:
        # Efficiencies so small that 1/alpha overflows: the best user takes everything.
        x[int(np.argmax(alphas))] = 1.0
        return x, float(alphas.max() / (1.0 + r_m * alphas.max()))
    # Users enter in order of decreasing alpha; the active set is the longest
    # prefix whose last member still sits below the water level.
    order = finite[np.argsort(inv[finite], kind="stable")]
    # Work in units of the largest term so the prefix sums cannot overflow.
    scale = max(r_m, float(inv[order[-1]]))
    inv_s = inv[order] / scale
    levels = (r_m / scale + np.cumsum(inv_s)) / np.arange(1, order.size + 1)
    below = np.flatnonzero(inv_s < levels)
    k = int(below.max()) + 1 if below.size else 1
    level = levels[k - 1]
    share = np.maximum(level - inv_s[:k], 0.0)
    if share.sum() > 0:
        x[order[:k]] = share / share.sum()
    else:  # r_m below the resolution of 1/alpha
        x[order[0]] = 1.0
    with np.errstate(over="ignore"):
        return x, float(1.0 / (level * scale))


def allocate_fractions(r_m: float, alphas: Sequence[float]) -> LowerLevelResult:
    """Optimal per-user bandwidth fractions for an MVNO holding ``r_m`` Hz."""
    r_m = check_nonnegative(r_m, "r_m")
    a = check_vector(alphas, "alphas")
    x, lam = water_fill(r_m, a)
    rates = x * r_m * a
    allocations = tuple(
        UserAllocation(fraction=float(f), rate=float(rt), alpha=float(al))
        for f, rt, al in zip(x, rates, a)
    )
    return LowerLevelResult(allocations, float(np.log1p(rates).sum()), lam)


def valuation(r_m: float, alphas: Sequence[float]) -> float:
    """MVNO valuation ``v(r_m)``: the optimal sum of ``ln(rate + 1)``."""
    r_m = check_nonnegative(r_m, "r_m")
    a = check_vector(alphas, "alphas")
    x, _ = water_fill(r_m, a)
    return float(np.log1p(x * r_m * a).sum())


def marginal_valuation(r_m: float, alphas: Sequence[float]) -> float:
    """Derivative ``dv/dr`` by the envelope theorem, evaluated at the optimum."""
    r_m = check_positive(r_m, "r_m")
    a = check_vector(alphas, "alphas")
    x, _ = water_fill(r_m, a)
    return float(np.sum(x * a / (x * r_m * a + 1.0)))


def outage_alphas(users: Sequence[UserChannel], epsilon: float) -> np.ndarray:
    check_probability(epsilon)
    return np.array([outage_spectral_efficiency(u, epsilon) for u in users])


def allocate_fractions_outage(
    r_m: float, users: Sequence[UserChannel], epsilon: float
) -> LowerLevelResult:
    """Allocation when only the outage-guaranteed rate of each user is known."""
    return allocate_fractions(r_m, outage_alphas(users, epsilon))
