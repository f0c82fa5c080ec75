"""Comparison mechanisms: Equal Sharing, traditional Kelly, and the welfare optimum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive
from .exceptions import DomainError, NumericalError
from .gkm_auction import AuctionTrace, GeneralizedKellyMechanism, GkmConfig, run_auction
from .market import Market


@dataclass(frozen=True)
class MechanismOutcome:
    mechanism: str
    allocations: np.ndarray
    valuations: np.ndarray
    market_id: str = ""
    rounds: int = 0
    converged: bool = True
    trace: AuctionTrace | None = field(default=None, compare=False, repr=False)

    @property
    def welfare(self) -> float:
        return float(np.sum(self.valuations))


def outcome_from_trace(name: str, market: Market, trace: AuctionTrace) -> MechanismOutcome:
    last = trace.final
    return MechanismOutcome(
        mechanism=name,
        allocations=last.allocations.copy(),
        valuations=last.valuations.copy(),
        market_id=market.fingerprint(),
        rounds=trace.rounds_used,
        converged=trace.converged,
        trace=trace,
    )


def equal_share(capacity: float, n_mvnos: int) -> np.ndarray:
    check_positive(capacity, "capacity")
    if n_mvnos < 1:
        raise DomainError("need at least one MVNO")
    return np.full(n_mvnos, capacity / n_mvnos)


def kelly_auction(
    market: Market,
    config: GkmConfig | None = None,
    *,
    price_taking: bool = False,
    initial_bids: Sequence[float] | None = None,
) -> AuctionTrace:
    """Kelly's proportional-share auction: every penalty fixed at 1.

    Bidders still anticipate their price impact unless ``price_taking``.
    """
    config = config or GkmConfig()
    rule = "zero" if price_taking else config.market_power_rule
    config = GkmConfig(
        max_iterations=config.max_iterations,
        bid_tolerance=config.bid_tolerance,
        q_init=1.0,
        b_init=config.b_init,
        q_min=config.q_min,
        mu_max=config.mu_max,
        market_power_rule=rule,
    )
    return run_auction(market, config, initial_bids=initial_bids, update_penalties=False)


def _invert_marginal(market: Market, m: int, rho: float, capacity: float) -> float:
    """Bandwidth at which MVNO ``m``'s marginal valuation equals ``rho``.

    ``v'`` decreases strictly from ``max(alpha)`` at ``0+`` towards zero, so
    the root is unique; the upper bracket is grown geometrically from ``R``.
    """
    alphas = market.alphas[m]
    if alphas.size == 0 or rho >= alphas.max():
        return 0.0
    hi = capacity
    while market.marginal(m, hi) > rho:
        hi *= 2.0
        if hi > 1e12 * capacity:
            raise NumericalError(f"cannot bracket v'_{m}(r) = {rho:g}")
    lo = hi * 1e-15
    if market.marginal(m, lo) <= rho:
        return lo
    return optimize.brentq(
        lambda r: market.marginal(m, r) - rho, lo, hi, xtol=1e-13 * capacity, rtol=1e-15
    )


def optimal_welfare(market: Market, rtol: float = 1e-12) -> MechanismOutcome:
    """Maximise the sum of valuations by bisection on the common marginal value.

    For a trial price ``rho`` every MVNO takes the bandwidth at which its
    marginal valuation equals ``rho``; the price is searched (in log space)
    until the demands exhaust the capacity to relative accuracy ``rtol``.
    """
    R = market.capacity
    m = market.n_mvnos
    ceiling = max(float(a.max()) for a in market.alphas)
    if ceiling <= 0:
        allocs = equal_share(R, m)
        return MechanismOutcome("optimal", allocs, market.valuations(allocs), market.fingerprint())

    def demand(log_rho: float) -> np.ndarray:
        rho = math.exp(log_rho)
        return np.array([_invert_marginal(market, i, rho, R) for i in range(m)])

    lo = math.log(min(market.marginal(i, R) for i in range(m) if market.alphas[i].max() > 0))
    hi = math.log(ceiling)
    excess_lo = demand(lo).sum() - R
    if excess_lo < 0:
        raise NumericalError(
            f"dual bracket failed: total demand at the lowest price is {excess_lo + R:g} < R={R:g}"
        )
    if excess_lo == 0:
        log_rho = lo
    else:
        log_rho = optimize.brentq(
            lambda lr: demand(lr).sum() / R - 1.0, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500
        )
    allocs = demand(log_rho)
    total = allocs.sum()
    if abs(total - R) > max(rtol, 1e-6) * R:
        raise NumericalError(f"dual search ended with total allocation {total:g} vs R={R:g}")
    allocs *= R / total
    return MechanismOutcome("optimal", allocs, market.valuations(allocs), market.fingerprint())


@dataclass(frozen=True)
class EfficiencyRow:
    mechanism: str
    welfare: float
    valuations: np.ndarray
    gap_to_optimal: float | None
    gkm_gain: float | None


def efficiency_report(outcomes: Sequence[MechanismOutcome]) -> list[EfficiencyRow]:
    """Tabulate welfare, relative gap to the optimum and GKM's relative gain.

    ``gap_to_optimal = (W_opt - W) / W_opt`` and ``gkm_gain = (W_gkm - W) / W``
    are ``None`` when the optimum or the GKM outcome is absent.
    """
    if not outcomes:
        return []
    ids = {o.market_id for o in outcomes}
    if len(ids) > 1:
        raise DomainError(f"outcomes come from different markets: {sorted(ids)}")
    by_name = {o.mechanism: o for o in outcomes}
    opt = by_name.get("optimal")
    gkm = by_name.get("gkm")
    rows = []
    for o in outcomes:
        w = o.welfare
        rows.append(
            EfficiencyRow(
                mechanism=o.mechanism,
                welfare=w,
                valuations=o.valuations.copy(),
                gap_to_optimal=None if opt is None else (opt.welfare - w) / opt.welfare,
                gkm_gain=None if gkm is None else (gkm.welfare - w) / w,
            )
        )
    return rows


class EqualSharing(BaseEstimator):
    mechanism_name = "equal"

    def fit(self, market: Market, y=None):
        self.allocation_ = equal_share(market.capacity, market.n_mvnos)
        self.valuations_ = market.valuations(self.allocation_)
        self.market_id_ = market.fingerprint()
        return self

    def predict(self, market: Market | None = None) -> np.ndarray:
        check_is_fitted(self, "allocation_")
        return self.allocation_.copy()

    def score(self, market: Market | None = None, y=None) -> float:
        check_is_fitted(self, "valuations_")
        return float(self.valuations_.sum())


class KellyMechanism(GeneralizedKellyMechanism):
    """Traditional Kelly auction (unit penalties) with the GKM estimator surface."""

    mechanism_name = "kelly"

    def __init__(
        self,
        max_iter: int = 1000,
        tol: float = 1e-6,
        b_init: float = 1.0,
        mu_max: float = 1.0 - 1e-6,
        price_taking: bool = False,
    ):
        self.max_iter = max_iter
        self.tol = tol
        self.b_init = b_init
        self.mu_max = mu_max
        self.price_taking = price_taking

    def _run(self, market: Market, initial_bids) -> AuctionTrace:
        config = GkmConfig(
            max_iterations=self.max_iter,
            bid_tolerance=self.tol,
            b_init=self.b_init,
            mu_max=self.mu_max,
        )
        return kelly_auction(
            market, config, price_taking=self.price_taking, initial_bids=initial_bids
        )


class SocialOptimum(BaseEstimator):
    """Welfare-maximising split, computed with full knowledge of valuations."""

    mechanism_name = "optimal"

    def __init__(self, rtol: float = 1e-12):
        self.rtol = rtol

    def fit(self, market: Market, y=None):
        outcome = optimal_welfare(market, self.rtol)
        self.allocation_ = outcome.allocations
        self.valuations_ = outcome.valuations
        self.market_id_ = outcome.market_id
        return self

    def predict(self, market: Market | None = None) -> np.ndarray:
        check_is_fitted(self, "allocation_")
        return self.allocation_.copy()

    def score(self, market: Market | None = None, y=None) -> float:
        check_is_fitted(self, "valuations_")
        return float(self.valuations_.sum())
