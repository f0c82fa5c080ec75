"""GKM over several divisible resources (bandwidth and transmit power).

Every resource row of the ``C x M`` bid matrix runs its own proportional
auction with its own penalties and price. MVNOs bid from the partial
derivatives of a joint valuation of their allocation column.

Joint bandwidth-power valuation
-------------------------------
An MVNO holding bandwidth ``r`` and power ``P`` solves

    max  sum_s ln(1 + w_s log2(1 + p_s g_s / w_s))
    s.t. sum_s w_s = r,  sum_s p_s = P,   g_s = h_s / N0.

The objective is jointly concave (the rate is a perspective function). At
an interior optimum the ratio of the two multipliers, ``kappa = lambda / eta``,
fixes every active user's SNR through ``(1+z) ln(1+z) - z = kappa g_s``;
given ``kappa`` the bandwidth split is a closed-form water-fill, and
``kappa`` is found by a 1-D root search on the power budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Protocol, Sequence

import numpy as np
from scipy import optimize, special
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_nonnegative, check_positive, check_vector
from .channel import UserChannel, spectral_efficiency
from .exceptions import DomainError, NumericalError
from .gkm_auction import (
    AuctionRound,
    AuctionTrace,
    GkmConfig,
    _estimate_market_power,
    best_response_bid,
    penalty_update,
    proportional_allocation,
    virtual_price,
)
from .lower_level import marginal_valuation, valuation
from .market import Market

LN2 = math.log(2.0)


@dataclass(frozen=True)
class ResourceKind:
    name: str
    capacity: float

    def __post_init__(self) -> None:
        check_positive(self.capacity, f"capacity of {self.name}")


@dataclass(frozen=True)
class ResourceMatrix:
    entries: np.ndarray
    role: Literal["allocation", "penalty", "bid"]

    def __post_init__(self) -> None:
        arr = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise DomainError(f"{self.role} matrix entries must be finite and non-negative")
        if self.role not in ("allocation", "penalty", "bid"):
            raise DomainError(f"unknown matrix role {self.role!r}")
        object.__setattr__(self, "entries", arr)

    def check_capacities(self, capacities: Sequence[float], rtol: float = 1e-12) -> None:
        sums = self.entries.sum(axis=1)
        caps = np.asarray(capacities, dtype=float)
        if np.any(sums > caps * (1 + rtol)):
            raise DomainError("an allocation row exceeds its resource capacity")


def allocate_resource_row(bids_row: Sequence[float], capacity: float) -> np.ndarray:
    """Proportional split of one resource, scaled to its capacity."""
    return proportional_allocation(bids_row, capacity)


# ---------------------------------------------------------------------------
# joint valuation


def _snr_from_ratio(c: np.ndarray) -> np.ndarray:
    """Solve ``(1+z) ln(1+z) - z = c`` for ``z >= 0``, elementwise."""
    c = np.asarray(c, dtype=float)
    z = np.zeros_like(c)
    pos = c > 0
    small = pos & (c < 1e-4)
    s = np.sqrt(2.0 * c[small])
    z[small] = s + s * s / 6.0
    big = pos & ~small
    z[big] = np.expm1(1.0 + special.lambertw((c[big] - 1.0) / math.e).real)
    for _ in range(3):
        slope = np.log1p(z[pos])
        f = _snr_excess(z[pos]) - c[pos]
        z[pos] = np.maximum(z[pos] - f / slope, 0.0)
    return z


def _snr_excess(z: np.ndarray) -> np.ndarray:
    """``(1+z) ln(1+z) - z`` without cancellation at small ``z``."""
    z = np.asarray(z, dtype=float)
    out = (1.0 + z) * np.log1p(z) - z
    tiny = z < 1e-3
    zt = z[tiny]
    # alternating series sum_k (-1)^k z^k / (k (k-1)), k >= 2
    out[tiny] = zt * zt * (0.5 - zt * (1 / 6 - zt * (1 / 12 - zt * (1 / 20 - zt / 30))))
    return out


@dataclass(frozen=True)
class JointAllocation:
    gains: np.ndarray
    bandwidth: np.ndarray
    power: np.ndarray
    value: float
    bandwidth_price: float
    power_price: float

    @property
    def rates(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            snr = np.where(self.bandwidth > 0, self.power * self.gains / self.bandwidth, 0.0)
        return self.bandwidth * np.log2(1.0 + snr)


def _split_for_ratio(kappa: float, r: float, g: np.ndarray):
    z = _snr_from_ratio(kappa * g)
    L = np.log2(1.0 + z)
    t = g / ((1.0 + z) * LN2)
    active = (g > 0) & (L > 0)
    w = np.zeros_like(g)
    eta_inv = 0.0
    while active.any():
        eta_inv = (r + np.sum(1.0 / L[active])) / np.sum(t[active] / L[active])
        share = np.zeros_like(g)
        share[active] = (t[active] * eta_inv - 1.0) / L[active]
        drop = active & (share <= 0)
        if not drop.any():
            w = share
            break
        active &= ~drop
    p = np.zeros_like(g)
    p[active] = z[active] * w[active] / g[active]
    return w, p, z, eta_inv


def solve_joint(r: float, P: float, gains: Sequence[float]) -> JointAllocation:
    """Optimal per-user bandwidth (Hz) and power (W) for one MVNO.

    ``gains`` are ``h_s / N0`` in 1/(W/Hz), so ``p g / w`` is the user's SNR.
    """
    r = check_nonnegative(r, "bandwidth")
    P = check_nonnegative(P, "power")
    g = check_vector(gains, "gains")
    if r == 0 or P == 0 or not np.any(g > 0):
        zeros = np.zeros_like(g)
        return JointAllocation(g, zeros, zeros.copy(), 0.0, 0.0, 0.0)

    g_mean = float(g[g > 0].mean())
    z0 = P * g_mean / r
    kappa0 = ((1.0 + z0) * math.log1p(z0) - z0) / g_mean

    def excess(log_kappa: float) -> float:
        _, p, _, _ = _split_for_ratio(math.exp(log_kappa), r, g)
        return p.sum() / P - 1.0

    lo = hi = math.log(kappa0) if kappa0 > 0 else -700.0
    step = math.log(10.0)
    for _ in range(200):
        if excess(lo) < 0:
            break
        lo -= step
    else:
        raise NumericalError("cannot bracket the bandwidth/power price ratio from below")
    for _ in range(200):
        if excess(hi) > 0:
            break
        hi += step
    else:
        raise NumericalError("cannot bracket the bandwidth/power price ratio from above")
    log_kappa = optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    kappa = math.exp(log_kappa)
    w, p, z, eta_inv = _split_for_ratio(kappa, r, g)
    # Close the budgets exactly; the corrections are at the root-finder's resolution.
    w *= r / w.sum()
    p *= P / p.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(w > 0, p * g / w, 0.0)
    value = float(np.log1p(w * np.log2(1.0 + snr)).sum())
    eta = 1.0 / eta_inv
    return JointAllocation(g, w, p, value, kappa * eta, eta)


def joint_valuation(alloc_column: Sequence[float], users: Sequence[UserChannel]) -> float:
    """Valuation of a ``(bandwidth Hz, power W)`` column for the given users."""
    col = check_vector(alloc_column, "alloc_column")
    if col.size != 2:
        raise DomainError("the joint valuation expects exactly (bandwidth, power)")
    gains = np.array([u.gain_h / u.noise_density for u in users])
    return solve_joint(col[0], col[1], gains).value


# ---------------------------------------------------------------------------
# valuation models


class ValuationModel(Protocol):
    n_resources: int

    def value(self, amounts: np.ndarray) -> float: ...

    def gradient(self, amounts: np.ndarray) -> np.ndarray: ...


class BandwidthValuation:
    """Single-resource valuation with the analytic envelope marginal."""

    n_resources = 1

    def __init__(self, alphas: Sequence[float]):
        self.alphas = check_vector(alphas, "alphas")

    def value(self, amounts: np.ndarray) -> float:
        return valuation(amounts[0], self.alphas)

    def gradient(self, amounts: np.ndarray) -> np.ndarray:
        return np.array([marginal_valuation(amounts[0], self.alphas)])


class JointValuation:
    """Bandwidth-power valuation; gradients by central differences by default.

    ``gradient_method="envelope"`` returns the solver's multipliers instead,
    which equal the partial derivatives at the optimum.
    """

    n_resources = 2

    def __init__(
        self,
        users: Sequence[UserChannel],
        *,
        fd_step: float = 1e-4,
        gradient_method: Literal["fd", "envelope"] = "fd",
    ):
        self.users = tuple(users)
        self.gains = np.array([u.gain_h / u.noise_density for u in self.users])
        self.fd_step = fd_step
        self.gradient_method = gradient_method

    def solve(self, amounts: np.ndarray) -> JointAllocation:
        return solve_joint(amounts[0], amounts[1], self.gains)

    def value(self, amounts: np.ndarray) -> float:
        return self.solve(amounts).value

    def gradient(self, amounts: np.ndarray) -> np.ndarray:
        amounts = np.asarray(amounts, dtype=float)
        if self.gradient_method == "envelope":
            sol = self.solve(amounts)
            return np.array([sol.bandwidth_price, sol.power_price])
        grad = np.empty(2)
        for c in range(2):
            h = self.fd_step * amounts[c]
            if h <= 0:
                raise DomainError("finite-difference marginals need positive amounts")
            up = amounts.copy()
            down = amounts.copy()
            up[c] += h
            down[c] -= h
            grad[c] = (self.value(up) - self.value(down)) / (2.0 * h)
        return grad


@dataclass(frozen=True)
class MultiResourceMarket:
    resources: tuple[ResourceKind, ...]
    models: tuple[ValuationModel, ...]

    def __post_init__(self) -> None:
        if not self.resources:
            raise DomainError("need at least one resource")
        for model in self.models:
            if model.n_resources != len(self.resources):
                raise DomainError("valuation model and resource list disagree on C")

    @classmethod
    def from_market(
        cls, market: Market, power_watts: float | None = None, **model_kwargs
    ) -> "MultiResourceMarket":
        """Bandwidth-only (C=1) or bandwidth+power (C=2) view of ``market``."""
        bandwidth = ResourceKind("bandwidth", market.capacity)
        if power_watts is None:
            return cls((bandwidth,), tuple(BandwidthValuation(a) for a in market.alphas))
        if market.users is None:
            raise DomainError("the joint valuation needs the user channels")
        models = tuple(JointValuation(group, **model_kwargs) for group in market.users)
        return cls((bandwidth, ResourceKind("power", power_watts)), models)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([res.capacity for res in self.resources])

    @property
    def n_mvnos(self) -> int:
        return len(self.models)


@dataclass(frozen=True)
class MultiRound:
    bids: np.ndarray
    penalties: np.ndarray
    market_power: np.ndarray
    prices: np.ndarray
    allocations: np.ndarray
    valuations: np.ndarray
    marginals: np.ndarray


@dataclass
class MultiAuctionTrace:
    resources: tuple[ResourceKind, ...]
    initial_bids: np.ndarray
    initial_penalties: np.ndarray
    rounds: list[MultiRound] = field(default_factory=list)
    converged: bool = False

    @property
    def rounds_used(self) -> int:
        return len(self.rounds)

    @property
    def final(self) -> MultiRound:
        if not self.rounds:
            raise DomainError("trace has no rounds")
        return self.rounds[-1]

    @property
    def allocations(self) -> np.ndarray:
        return self.final.allocations

    def row_trace(self, c: int) -> AuctionTrace:
        """The rounds of resource ``c`` as a single-resource trace."""
        trace = AuctionTrace(
            self.resources[c].capacity,
            self.initial_bids[c].copy(),
            self.initial_penalties[c].copy(),
            converged=self.converged,
        )
        for rnd in self.rounds:
            trace.rounds.append(
                AuctionRound(
                    bids=rnd.bids[c],
                    penalties=rnd.penalties[c],
                    market_power=rnd.market_power[c],
                    price=float(rnd.prices[c]),
                    allocations=rnd.allocations[c],
                    valuations=rnd.valuations,
                    marginals=rnd.marginals[c],
                )
            )
        return trace


def run_multi_auction(
    market: MultiResourceMarket,
    config: GkmConfig | None = None,
    *,
    initial_bids: np.ndarray | None = None,
    update_penalties: bool = True,
) -> MultiAuctionTrace:
    """Run the GKM row by row with shared MVNO valuations.

    Round structure matches the single-resource auction: market power and
    penalties per row from the previous round, bids from the partial
    derivatives at the previous allocation column, then per-row prices and
    proportional allocations. With ``update_penalties=False`` the penalties
    stay at their initial values (Kelly's mechanism when they are 1).
    """
    config = config or GkmConfig()
    caps = market.capacities
    n_res, m = caps.size, market.n_mvnos
    if update_penalties and m < 2:
        raise DomainError("the GKM needs at least two MVNOs")
    if initial_bids is None:
        bids = np.full((n_res, m), config.b_init)
    else:
        bids = np.array(initial_bids, dtype=float).reshape(n_res, m)
    penalties = np.vstack(
        [np.full(m, cap / m if config.q_init is None else config.q_init) for cap in caps]
    )
    alloc = np.vstack([proportional_allocation(bids[c], caps[c]) for c in range(n_res)])
    trace = MultiAuctionTrace(market.resources, bids.copy(), penalties.copy())

    mu = np.zeros((n_res, m))
    for k in range(1, config.max_iterations + 1):
        marginals = np.column_stack([model.gradient(alloc[:, i]) for i, model in enumerate(market.models)])
        new_bids = np.empty_like(bids)
        new_pen = np.empty_like(penalties)
        new_mu = np.empty_like(mu)
        prices = np.empty(n_res)
        new_alloc = np.empty_like(alloc)
        for c in range(n_res):
            if k > 1:
                prev = trace.rounds[-1]
                row_prev = AuctionRound(
                    prev.bids[c], prev.penalties[c], prev.market_power[c],
                    float(prev.prices[c]), prev.allocations[c], prev.valuations, marginals[c],
                )
                new_mu[c] = _estimate_market_power(
                    config.market_power_rule, row_prev, marginals[c], config.mu_max
                )
            else:
                new_mu[c] = mu[c]
            if update_penalties:
                new_pen[c] = penalty_update(penalties[c], alloc[c], caps[c], config.q_min)
            else:
                new_pen[c] = penalties[c]
            new_bids[c] = np.array(
                [
                    best_response_bid(new_pen[c, i], alloc[c, i], marginals[c, i], new_mu[c, i])
                    for i in range(m)
                ]
            )
            prices[c] = virtual_price(new_bids[c], caps[c])
            new_alloc[c] = allocate_resource_row(new_bids[c], caps[c])
        values = np.array([model.value(new_alloc[:, i]) for i, model in enumerate(market.models)])
        trace.rounds.append(
            MultiRound(new_bids, new_pen.copy(), new_mu.copy(), prices, new_alloc.copy(), values, marginals)
        )
        change = np.max(np.abs(new_bids - bids) / np.maximum(bids, 1e-12))
        bids, penalties, mu, alloc = new_bids, new_pen, new_mu, new_alloc
        if change < config.bid_tolerance:
            trace.converged = True
            break
    return trace


@dataclass(frozen=True)
class MultiEquilibriumReport:
    """Per-resource, per-MVNO residuals (``C x M`` arrays) plus column utilities."""

    stationarity: np.ndarray
    uniqueness: np.ndarray
    capacity: np.ndarray
    utilities: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(max(self.stationarity.max(), self.uniqueness.max(), self.capacity.max()))


def verify_multi_equilibrium(trace: MultiAuctionTrace, market: MultiResourceMarket) -> MultiEquilibriumReport:
    """Best-response conditions of every resource row at the final round."""
    if not trace.converged:
        raise DomainError("cannot verify a trace that did not converge")
    last = trace.final
    caps = market.capacities
    grads = np.column_stack(
        [model.gradient(last.allocations[:, i]) for i, model in enumerate(market.models)]
    )
    B = last.bids.sum(axis=1, keepdims=True)
    beta = last.prices[:, None]
    stationarity = np.abs(grads * (1 - last.market_power) / last.penalties - beta) / beta
    uniqueness = np.abs(
        grads * (caps[:, None] / B - last.bids * caps[:, None] / B**2) / last.penalties - 1.0
    )
    capacity = np.abs(last.allocations.sum(axis=1) - caps) / caps
    utilities = last.valuations - np.sum(last.penalties * last.bids, axis=0)
    return MultiEquilibriumReport(stationarity, uniqueness, capacity, utilities)


class MultiResourceGKM(BaseEstimator):
    """Estimator wrapper: ``fit(MultiResourceMarket)`` exposes ``allocation_`` (C x M)."""

    mechanism_name = "gkm_multi"

    def __init__(self, max_iter: int = 1000, tol: float = 1e-6, b_init: float = 1.0):
        self.max_iter = max_iter
        self.tol = tol
        self.b_init = b_init

    def fit(self, market: MultiResourceMarket, y=None):
        config = GkmConfig(max_iterations=self.max_iter, bid_tolerance=self.tol, b_init=self.b_init)
        trace = run_multi_auction(market, config)
        self.trace_ = trace
        self.allocation_ = trace.final.allocations.copy()
        self.bids_ = trace.final.bids.copy()
        self.valuations_ = trace.final.valuations.copy()
        self.n_iter_ = trace.rounds_used
        self.converged_ = trace.converged
        return self

    def predict(self, market: MultiResourceMarket | None = None) -> np.ndarray:
        check_is_fitted(self, "allocation_")
        return self.allocation_.copy()

    def score(self, market: MultiResourceMarket | None = None, y=None) -> float:
        check_is_fitted(self, "valuations_")
        return float(self.valuations_.sum())


def fixed_power_reference(users: Sequence[UserChannel], bandwidth: float) -> float:
    """Single-resource valuation when power stays fixed per Hz (C=1 reference)."""
    return valuation(bandwidth, [spectral_efficiency(u) for u in users])
