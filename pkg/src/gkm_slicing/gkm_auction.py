"""Upper-level Generalized Kelly Mechanism between the InP and its MVNOs.

Each round the MVNOs estimate their market power, the InP updates per-MVNO
penalties, the MVNOs bid their best response, and the InP splits the
bandwidth in proportion to the bids at the virtual price ``sum(b) / R``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_nonnegative, check_positive, check_vector
from .exceptions import DegenerateAuctionError, DomainError
from .market import Market

logger = logging.getLogger(__name__)

MarketPowerRule = Literal["observed", "inverse", "zero"]


@dataclass(frozen=True)
class GkmConfig:
    """Iteration controls for the auction.

    ``q_init=None`` starts every penalty at ``R / M`` so the penalties sum to
    the capacity; the penalty recursion conserves that sum, and with it the
    first penalty update lands directly on the fixed-point family.

    ``market_power_rule`` selects how an MVNO estimates its influence on the
    price before bidding:

    * ``"observed"`` - its bid share from the previous round, ``b / sum(b)``,
      which it can compute from its own bid and the broadcast price.
    * ``"inverse"`` - the inverted bidding rule
      ``1 - b q / (r v'(r))`` on the previous round. This keeps ``b * q``
      constant along the iteration, so it only makes sense for study.
    * ``"zero"`` - price-taking bidders.
    """

    max_iterations: int = 1000
    bid_tolerance: float = 1e-6
    q_init: float | None = None
    b_init: float = 1.0
    q_min: float = 1e-9
    mu_max: float = 1.0 - 1e-6
    market_power_rule: MarketPowerRule = "observed"

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        check_positive(self.bid_tolerance, "bid_tolerance")
        check_positive(self.b_init, "b_init")
        check_positive(self.q_min, "q_min")
        if self.q_init is not None:
            check_positive(self.q_init, "q_init")
        if not 0 <= self.mu_max < 1:
            raise DomainError("mu_max must lie in [0, 1)")
        if self.market_power_rule not in ("observed", "inverse", "zero"):
            raise DomainError(f"unknown market_power_rule {self.market_power_rule!r}")


@dataclass(frozen=True)
class MvnoState:
    bid: float
    penalty: float
    market_power: float
    allocation: float
    valuation: float
    n_users: int


@dataclass(frozen=True)
class AuctionRound:
    """Snapshot after one synchronous round.

    ``marginals`` are ``v'`` at the allocation the bids were computed from,
    i.e. the previous round's allocation.
    """

    bids: np.ndarray
    penalties: np.ndarray
    market_power: np.ndarray
    price: float
    allocations: np.ndarray
    valuations: np.ndarray
    marginals: np.ndarray


@dataclass
class AuctionTrace:
    capacity: float
    initial_bids: np.ndarray
    initial_penalties: np.ndarray
    rounds: list[AuctionRound] = field(default_factory=list)
    converged: bool = False

    @property
    def rounds_used(self) -> int:
        return len(self.rounds)

    @property
    def final(self) -> AuctionRound:
        if not self.rounds:
            raise DomainError("trace has no rounds")
        return self.rounds[-1]

    def series(self, name: str) -> np.ndarray:
        """Stack one per-MVNO field over rounds into a ``(rounds, M)`` array."""
        return np.vstack([getattr(rnd, name) for rnd in self.rounds])

    def states(self, user_counts: Sequence[int] | None = None) -> list[MvnoState]:
        last = self.final
        counts = user_counts if user_counts is not None else [0] * last.bids.size
        return [
            MvnoState(
                bid=float(last.bids[m]),
                penalty=float(last.penalties[m]),
                market_power=float(last.market_power[m]),
                allocation=float(last.allocations[m]),
                valuation=float(last.valuations[m]),
                n_users=int(counts[m]),
            )
            for m in range(last.bids.size)
        ]


def proportional_allocation(bids: Sequence[float], capacity: float) -> np.ndarray:
    """Split ``capacity`` in proportion to ``bids``.

    The last bidder with a positive bid receives the remainder, so the
    allocations add up to ``capacity`` without rounding drift.
    """
    b = check_vector(bids, "bids")
    capacity = check_positive(capacity, "capacity")
    total = b.sum()
    if total <= 0:
        raise DegenerateAuctionError("all bids are zero")
    r = b / total * capacity
    last = int(np.flatnonzero(b > 0)[-1])
    r[last] = 0.0
    r[last] = capacity - r.sum()
    return r


def virtual_price(bids: Sequence[float], capacity: float) -> float:
    """Price per Hz, ``sum(bids) / capacity``; zero for an empty bid vector."""
    b = check_vector(bids, "bids", allow_empty=True)
    return float(b.sum() / check_positive(capacity, "capacity"))


def market_power(bids: Sequence[float]) -> np.ndarray:
    b = check_vector(bids, "bids")
    total = b.sum()
    if total <= 0:
        raise DegenerateAuctionError("market power is undefined when all bids are zero")
    return b / total


def market_power_estimate(
    prev_bid: float,
    prev_penalty: float,
    prev_alloc: float,
    prev_marginal: float,
    mu_max: float = 1.0 - 1e-6,
) -> float:
    """Invert the bidding rule: ``1 - b q / (r v'(r))``, clamped to ``[0, mu_max]``."""
    denom = prev_alloc * prev_marginal
    if not denom > 0:
        raise DomainError("market power estimate needs a positive allocation and marginal")
    raw = 1.0 - prev_bid * prev_penalty / denom
    return min(max(raw, 0.0), mu_max)


def penalty_update(
    prev_penalties: Sequence[float],
    prev_allocs: Sequence[float],
    capacity: float,
    q_min: float = 1e-9,
) -> np.ndarray:
    """One InP penalty step towards ``(R - r_m) / (M - 1) = R q_m / sum(q)``."""
    q = check_vector(prev_penalties, "prev_penalties")
    r = check_vector(prev_allocs, "prev_allocs")
    if q.size < 2:
        raise DomainError("the penalty update needs at least two MVNOs")
    if r.size != q.size:
        raise DomainError("penalties and allocations differ in length")
    if np.any(q <= 0):
        raise DomainError("penalties must be positive")
    m = q.size
    new = q + ((capacity - r) / (m - 1) - capacity * q / q.sum())
    floored = new < q_min
    if floored.any():
        logger.info("penalty floored at q_min for MVNOs %s", np.flatnonzero(floored).tolist())
        new = np.where(floored, q_min, new)
    return new


def best_response_bid(penalty: float, allocation: float, marginal: float, mu: float) -> float:
    """Optimal bid ``r v'(r) (1 - mu) / q`` of a price-anticipating MVNO."""
    if not penalty > 0:
        raise DomainError("penalty must be positive")
    check_nonnegative(allocation, "allocation")
    check_nonnegative(marginal, "marginal")
    if not 0 <= mu < 1:
        raise DomainError("market power must lie in [0, 1)")
    return allocation * marginal * (1.0 - mu) / penalty


def _estimate_market_power(
    rule: MarketPowerRule,
    prev: AuctionRound,
    marginals: np.ndarray,
    mu_max: float,
) -> np.ndarray:
    if rule == "zero":
        return np.zeros(prev.bids.size)
    if rule == "observed":
        return np.minimum(market_power(prev.bids), mu_max)
    return np.array(
        [
            market_power_estimate(b, q, r, v, mu_max)
            for b, q, r, v in zip(prev.bids, prev.penalties, prev.allocations, marginals)
        ]
    )


def run_auction(
    market: Market,
    config: GkmConfig | None = None,
    *,
    initial_bids: Sequence[float] | None = None,
    update_penalties: bool = True,
) -> AuctionTrace:
    """Iterate synchronous GKM rounds until the bids settle.

    A round uses only the previous round's aggregates: market power
    estimate, penalty update, best-response bids at the previous allocation,
    then price, allocation and valuations. The loop stops when the largest
    relative bid change drops below ``config.bid_tolerance``; otherwise the
    trace comes back with ``converged=False``.
    """
    config = config or GkmConfig()
    m = market.n_mvnos
    R = market.capacity
    if update_penalties and m < 2:
        raise DomainError("the GKM needs at least two MVNOs")

    bids = (
        np.full(m, config.b_init)
        if initial_bids is None
        else check_vector(initial_bids, "initial_bids").copy()
    )
    if bids.size != m:
        raise DomainError("initial_bids must have one entry per MVNO")
    q0 = R / m if config.q_init is None else config.q_init
    penalties = np.full(m, q0)
    allocations = proportional_allocation(bids, R)
    trace = AuctionTrace(R, bids.copy(), penalties.copy())

    mu = np.zeros(m)
    for k in range(1, config.max_iterations + 1):
        marginals = np.array([market.marginal(i, allocations[i]) for i in range(m)])
        if k > 1:
            mu = _estimate_market_power(
                config.market_power_rule, trace.rounds[-1], marginals, config.mu_max
            )
        if update_penalties:
            penalties = penalty_update(penalties, allocations, R, config.q_min)
        new_bids = np.array(
            [best_response_bid(penalties[i], allocations[i], marginals[i], mu[i]) for i in range(m)]
        )
        price = virtual_price(new_bids, R)
        allocations = proportional_allocation(new_bids, R)
        trace.rounds.append(
            AuctionRound(
                bids=new_bids,
                penalties=penalties.copy(),
                market_power=mu.copy(),
                price=price,
                allocations=allocations.copy(),
                valuations=market.valuations(allocations),
                marginals=marginals,
            )
        )
        change = np.max(np.abs(new_bids - bids) / np.maximum(bids, 1e-12))
        bids = new_bids
        if change < config.bid_tolerance:
            trace.converged = True
            break
    else:
        logger.warning("auction did not converge in %d rounds", config.max_iterations)
    return trace


def modified_valuation(
    r: float,
    capacity: float,
    q: float,
    valuation_fn: Callable[[float], float],
    integral_fn: Callable[[float], float] | None = None,
) -> float:
    """Surrogate objective whose maximiser is the equilibrium allocation.

    ``(1/q)(1 - r/R) v(r) + (1/(q R)) * integral_0^r v(z) dz``. Pass
    ``integral_fn`` when the antiderivative is known; otherwise the integral
    is computed by adaptive quadrature.
    """
    check_nonnegative(r, "r")
    check_positive(capacity, "capacity")
    check_positive(q, "q")
    if r > capacity:
        raise DomainError("allocation exceeds capacity")
    if r == 0:
        return 0.0
    v_r = valuation_fn(r)
    if integral_fn is not None:
        area = integral_fn(r)
    else:
        area, _ = integrate.quad(valuation_fn, 0.0, r, epsabs=1e-8 * abs(v_r), limit=200)
    return (1.0 - r / capacity) * v_r / q + area / (q * capacity)


@dataclass(frozen=True)
class EquilibriumReport:
    """Relative residuals of the equilibrium conditions, one entry per MVNO.

    ``stationarity``: ``|v'(r)(1-mu)/q - beta| / beta``.
    ``allocation_identity``: ``|r - b q / (v'(r)(1-mu))| / r``.
    ``uniqueness``: the best-response first-order condition with the true bid
    share, ``|(1/q) v'(r) (R/B - b R/B^2) - 1|``, or for a zero bid the excess
    of ``(1/q) v'(0+) R/B`` over 1.
    ``market_power_gap``: ``|mu - b/B|`` between the estimate used for bidding
    and the realised share.
    """

    stationarity: np.ndarray
    allocation_identity: np.ndarray
    capacity: float
    uniqueness: np.ndarray
    market_power_gap: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(
            max(
                self.stationarity.max(),
                self.allocation_identity.max(),
                self.capacity,
                self.uniqueness.max(),
            )
        )

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_residual <= tol


def verify_equilibrium(trace: AuctionTrace, market: Market) -> EquilibriumReport:
    """Check the final round of a converged trace against the Nash conditions."""
    if not trace.converged:
        raise DomainError("cannot verify a trace that did not converge")
    last = trace.final
    R = trace.capacity
    b, q, mu, r = last.bids, last.penalties, last.market_power, last.allocations
    B = b.sum()
    beta = last.price
    m = b.size
    stationarity = np.empty(m)
    identity = np.empty(m)
    uniqueness = np.empty(m)
    for i in range(m):
        if b[i] > 0:
            vp = market.marginal(i, r[i])
            stationarity[i] = abs(vp * (1 - mu[i]) / q[i] - beta) / beta
            identity[i] = abs(r[i] - b[i] * q[i] / (vp * (1 - mu[i]))) / r[i]
            uniqueness[i] = abs(vp * (R / B - b[i] * R / B**2) / q[i] - 1.0)
        else:
            vp0 = market.marginal(i, 1e-6 * R)
            stationarity[i] = 0.0
            identity[i] = 0.0
            uniqueness[i] = max(0.0, vp0 * R / B / q[i] - 1.0)
    return EquilibriumReport(
        stationarity=stationarity,
        allocation_identity=identity,
        capacity=abs(r.sum() - R) / R,
        uniqueness=uniqueness,
        market_power_gap=np.abs(mu - b / B),
    )


class GeneralizedKellyMechanism(BaseEstimator):
    """Estimator-style wrapper around :func:`run_auction`.

    ``fit(market)`` runs the auction and exposes the outcome through fitted
    attributes (``allocation_``, ``bids_``, ``penalties_``, ``valuations_``,
    ``price_``, ``trace_``, ``n_iter_``, ``converged_``).
    """

    mechanism_name = "gkm"

    def __init__(
        self,
        max_iter: int = 1000,
        tol: float = 1e-6,
        q_init: float | None = None,
        b_init: float = 1.0,
        q_min: float = 1e-9,
        mu_max: float = 1.0 - 1e-6,
        market_power_rule: MarketPowerRule = "observed",
    ):
        self.max_iter = max_iter
        self.tol = tol
        self.q_init = q_init
        self.b_init = b_init
        self.q_min = q_min
        self.mu_max = mu_max
        self.market_power_rule = market_power_rule

    def _config(self) -> GkmConfig:
        return GkmConfig(
            max_iterations=self.max_iter,
            bid_tolerance=self.tol,
            q_init=self.q_init,
            b_init=self.b_init,
            q_min=self.q_min,
            mu_max=self.mu_max,
            market_power_rule=self.market_power_rule,
        )

    def _run(self, market: Market, initial_bids) -> AuctionTrace:
        return run_auction(market, self._config(), initial_bids=initial_bids)

    def fit(self, market: Market, y=None, initial_bids: Sequence[float] | None = None):
        if not isinstance(market, Market):
            raise TypeError(f"expected a Market, got {type(market).__name__}")
        trace = self._run(market, initial_bids)
        last = trace.final
        self.trace_ = trace
        self.allocation_ = last.allocations.copy()
        self.bids_ = last.bids.copy()
        self.penalties_ = last.penalties.copy()
        self.market_power_ = last.market_power.copy()
        self.valuations_ = last.valuations.copy()
        self.price_ = last.price
        self.n_iter_ = trace.rounds_used
        self.converged_ = trace.converged
        self.market_id_ = market.fingerprint()
        return self

    def predict(self, market: Market | None = None) -> np.ndarray:
        """Bandwidth allocated to each MVNO at the fitted equilibrium."""
        check_is_fitted(self, "allocation_")
        return self.allocation_.copy()

    def score(self, market: Market | None = None, y=None) -> float:
        """Social welfare, the sum of MVNO valuations."""
        check_is_fitted(self, "valuations_")
        return float(self.valuations_.sum())

    def verify(self, market: Market) -> EquilibriumReport:
        check_is_fitted(self, "trace_")
        return verify_equilibrium(self.trace_, market)


__all__ = [
    "AuctionRound",
    "AuctionTrace",
    "EquilibriumReport",
    "GeneralizedKellyMechanism",
    "GkmConfig",
    "MvnoState",
    "best_response_bid",
    "market_power",
    "market_power_estimate",
    "modified_valuation",
    "penalty_update",
    "proportional_allocation",
    "run_auction",
    "verify_equilibrium",
    "virtual_price",
]
