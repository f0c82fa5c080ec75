"""Seeded Monte Carlo runs of a scenario across mechanisms.

Every trial draws one set of user positions, shadowing and fading samples
per market layout, and all mechanisms (and all outage thresholds) are
evaluated on that same draw. Trials are independent and may be spread over
worker processes; results are always assembled in trial order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .. import __version__
from ..baselines import equal_share, kelly_auction, optimal_welfare
from ..channel import UserChannel, dbm_to_watts, draw_user_channels, place_users
from ..exceptions import ExperimentError
from ..gkm_auction import AuctionTrace, GkmConfig, run_auction
from ..lower_level import allocate_fractions
from ..market import Market
from ..multi_resource import MultiAuctionTrace, MultiResourceMarket, run_multi_auction
from .scenario import MECHANISMS, Scenario, SweepPoint

logger = logging.getLogger(__name__)

FAILURE_THRESHOLD = 0.10


@dataclass
class MechanismRecord:
    """Outcome of one mechanism on one market; arrays are ``(C, M)`` or ``(M,)``."""

    mechanism: str
    allocations: np.ndarray
    valuations: np.ndarray
    rates: np.ndarray
    rounds: int
    converged: bool
    trace: dict[str, np.ndarray] | None = None

    @property
    def welfare(self) -> float:
        return float(self.valuations.sum())


@dataclass
class TrialRecord:
    trial: int
    point: str
    user_counts: tuple[int, ...]
    market_id: str
    outcomes: dict[str, MechanismRecord] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return bool(self.errors)


@dataclass
class ExperimentResult:
    scenario: Scenario
    scenario_hash: str
    tool_version: str
    trials: int
    mechanisms: tuple[str, ...]
    records: list[TrialRecord]

    @property
    def failed_trials(self) -> list[int]:
        return sorted({r.trial for r in self.records if r.failed})

    @property
    def points(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.point, None)
        return list(seen)

    def select(self, point: str | None = None) -> list[TrialRecord]:
        if point is None:
            point = self.points[0]
        return [r for r in self.records if r.point == point]

    def aggregates(self) -> dict[str, Any]:
        return {p: aggregate_point(self.select(p), self.mechanisms) for p in self.points}


# ---------------------------------------------------------------------------
# market construction


def trial_seed(seed: int, trial: int, user_counts: Sequence[int]) -> np.random.SeedSequence:
    """Seed for one trial of one market layout; independent of scheduling."""
    return np.random.SeedSequence([seed, trial, *user_counts])


def draw_users(scenario: Scenario, point: SweepPoint, trial: int) -> list[list[UserChannel]]:
    rng = np.random.default_rng(trial_seed(scenario.seed, trial, point.user_counts))
    power = dbm_to_watts(scenario.max_power_dbm)
    noise = dbm_to_watts(scenario.noise_density_dbm_hz)
    groups = []
    for spec in point.mvnos:
        if spec.distances_m is not None:
            distances = np.asarray(spec.distances_m, dtype=float)
        else:
            pos = place_users(rng, spec.users, scenario.cell_radius_m, scenario.exclusion_radius_m)
            distances = np.hypot(pos[:, 0], pos[:, 1])
        groups.append(
            draw_user_channels(
                rng,
                distances,
                scenario.path_loss,
                power_per_hz=power / scenario.bandwidth_hz,
                noise_density=noise,
                fading=scenario.fading,
                outage_sigma_scale=scenario.outage.sigma_scale,
            )
        )
    return groups


def gkm_config(scenario: Scenario, **changes) -> GkmConfig:
    a = scenario.auction
    params = dict(
        max_iterations=a.max_iterations,
        bid_tolerance=a.bid_tolerance,
        b_init=a.b_init,
        market_power_rule=a.market_power_rule,
    )
    params.update(changes)
    return GkmConfig(**params)


def _single_trace_series(trace: AuctionTrace) -> dict[str, np.ndarray]:
    return {
        "initial_bids": trace.initial_bids[None, :].copy(),
        "bids": trace.series("bids")[:, None, :],
        "penalties": trace.series("penalties")[:, None, :],
        "market_power": trace.series("market_power")[:, None, :],
        "prices": trace.series("price").reshape(-1, 1),
        "allocations": trace.series("allocations")[:, None, :],
        "valuations": trace.series("valuations"),
    }


def _multi_trace_series(trace: MultiAuctionTrace) -> dict[str, np.ndarray]:
    rounds = trace.rounds
    return {
        "initial_bids": trace.initial_bids.copy(),
        "bids": np.array([r.bids for r in rounds]),
        "penalties": np.array([r.penalties for r in rounds]),
        "market_power": np.array([r.market_power for r in rounds]),
        "prices": np.array([r.prices for r in rounds]),
        "allocations": np.array([r.allocations for r in rounds]),
        "valuations": np.array([r.valuations for r in rounds]),
    }


def _single_rates(market: Market, allocations: np.ndarray) -> np.ndarray:
    return np.array(
        [allocate_fractions(r, a).rates.sum() for r, a in zip(allocations, market.alphas)]
    )


def run_single_mechanism(name: str, market: Market, scenario: Scenario) -> MechanismRecord:
    if name == "gkm":
        trace = run_auction(market, gkm_config(scenario))
    elif name == "kelly":
        trace = kelly_auction(market, gkm_config(scenario))
    elif name == "equal":
        alloc = equal_share(market.capacity, market.n_mvnos)
        return MechanismRecord(
            name, alloc[None, :], market.valuations(alloc), _single_rates(market, alloc), 0, True
        )
    elif name == "optimal":
        out = optimal_welfare(market)
        return MechanismRecord(
            name, out.allocations[None, :], out.valuations,
            _single_rates(market, out.allocations), 0, True,
        )
    else:
        raise ExperimentError(f"unknown mechanism {name!r}")
    last = trace.final
    return MechanismRecord(
        name,
        last.allocations[None, :].copy(),
        last.valuations.copy(),
        _single_rates(market, last.allocations),
        trace.rounds_used,
        trace.converged,
        _single_trace_series(trace),
    )


def run_multi_mechanism(name: str, market: Market, scenario: Scenario) -> MechanismRecord:
    power = dbm_to_watts(scenario.max_power_dbm)
    mm = MultiResourceMarket.from_market(market, power, gradient_method=scenario.auction.gradient)
    if name == "equal":
        alloc = np.vstack([equal_share(cap, mm.n_mvnos) for cap in mm.capacities])
        rounds, converged, series = 0, True, None
    else:
        if name == "gkm":
            trace = run_multi_auction(mm, gkm_config(scenario))
        elif name == "kelly":
            trace = run_multi_auction(mm, gkm_config(scenario, q_init=1.0), update_penalties=False)
        elif name == "optimal":
            # Price-taking bidders with unit penalties settle where every
            # MVNO's partial derivatives equal the resource prices.
            exact = MultiResourceMarket.from_market(market, power, gradient_method="envelope")
            config = gkm_config(scenario, q_init=1.0, market_power_rule="zero", bid_tolerance=1e-10)
            trace = run_multi_auction(exact, config, update_penalties=False)
        else:
            raise ExperimentError(f"unknown mechanism {name!r}")
        alloc = trace.final.allocations.copy()
        rounds, converged, series = trace.rounds_used, trace.converged, _multi_trace_series(trace)
    values = np.array([model.value(alloc[:, i]) for i, model in enumerate(mm.models)])
    rates = np.array([model.solve(alloc[:, i]).rates.sum() for i, model in enumerate(mm.models)])
    return MechanismRecord(name, alloc, values, rates, rounds, converged, series)


def run_trial(scenario: Scenario, trial: int, mechanisms: Sequence[str]) -> list[TrialRecord]:
    """All layouts, outage thresholds and mechanisms of one trial."""
    records = []
    for point in scenario.points():
        groups = draw_users(scenario, point, trial)
        for eps in point.epsilons:
            label = point.label if eps is None else ",".join(
                filter(None, [point.label, f"epsilon={eps:g}"])
            )
            market = Market.from_users(scenario.bandwidth_hz, groups, eps)
            record = TrialRecord(trial, label, point.user_counts, market.fingerprint())
            for name in mechanisms:
                try:
                    if scenario.n_resources == 1:
                        record.outcomes[name] = run_single_mechanism(name, market, scenario)
                    else:
                        record.outcomes[name] = run_multi_mechanism(name, market, scenario)
                except ExperimentError:
                    raise
                except Exception as exc:  # a failed mechanism fails the trial, not the run
                    logger.warning("trial %d %s %s failed: %s", trial, label, name, exc)
                    record.errors[name] = f"{type(exc).__name__}: {exc}"
            records.append(record)
    return records


def _run_trial_packed(args) -> list[TrialRecord]:
    return run_trial(*args)


def run_experiment(
    scenario: Scenario,
    trials: int | None = None,
    mechanisms: Sequence[str] | None = None,
    *,
    jobs: int = 1,
) -> ExperimentResult:
    """Run ``trials`` paired trials; raise if more than 10% of them fail."""
    trials = scenario.trials if trials is None else trials
    if trials < 1:
        raise ExperimentError("need at least one trial")
    mechanisms = tuple(scenario.mechanisms if mechanisms is None else mechanisms)
    unknown = [m for m in mechanisms if m not in MECHANISMS]
    if unknown or not mechanisms:
        raise ExperimentError(f"unknown or empty mechanism list: {unknown or mechanisms}")
    work = [(scenario, t, mechanisms) for t in range(trials)]
    if jobs > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_trial_packed, work, chunksize=max(1, trials // (4 * jobs))))
    else:
        chunks = [_run_trial_packed(w) for w in work]
    records = [r for chunk in chunks for r in chunk]
    result = ExperimentResult(
        scenario, scenario.fingerprint(), __version__, trials, mechanisms, records
    )
    failed = result.failed_trials
    if len(failed) > FAILURE_THRESHOLD * trials:
        first = next(r for r in records if r.failed)
        raise ExperimentError(
            f"{len(failed)} of {trials} trials failed (first: trial {first.trial}, {first.errors})"
        )
    return result


# ---------------------------------------------------------------------------
# aggregates


def _stats(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=float)
    return {"median": float(np.median(arr)), "min": float(arr.min()), "max": float(arr.max())}


def aggregate_point(records: Sequence[TrialRecord], mechanisms: Sequence[str]) -> dict[str, Any]:
    """Medians and ranges over successful trials of one layout.

    Gaps to the optimum and gains of the GKM are computed per trial on the
    paired draw, then summarised.
    """
    ok = [r for r in records if not r.failed]
    out: dict[str, Any] = {"trials": len(records), "failed": len(records) - len(ok)}
    if not ok:
        return out
    for name in mechanisms:
        outs = [r.outcomes[name] for r in ok]
        vals = np.array([o.valuations for o in outs])
        entry: dict[str, Any] = {
            "welfare": _stats([o.welfare for o in outs]),
            "valuation_median": np.median(vals, axis=0).tolist(),
            "valuation_min": vals.min(axis=0).tolist(),
            "valuation_max": vals.max(axis=0).tolist(),
            "allocation_median": np.median([o.allocations for o in outs], axis=0).tolist(),
            "rate_median": np.median([o.rates for o in outs], axis=0).tolist(),
            "rounds": _stats([o.rounds for o in outs]),
            "converged_fraction": float(np.mean([o.converged for o in outs])),
        }
        if "optimal" in mechanisms:
            gaps = [
                (r.outcomes["optimal"].welfare - r.outcomes[name].welfare) / r.outcomes["optimal"].welfare
                for r in ok
            ]
            entry["gap_to_optimal"] = _stats(gaps)
        if "gkm" in mechanisms:
            gains = [
                (r.outcomes["gkm"].welfare - r.outcomes[name].welfare) / r.outcomes[name].welfare
                for r in ok
            ]
            entry["gkm_gain"] = _stats(gains)
        out[name] = entry
    return out
