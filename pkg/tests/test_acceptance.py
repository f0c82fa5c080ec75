"""Acceptance gate: every criterion at its stated tolerance.

Each test records one PASS/FAIL line (shown in the terminal summary) and
then asserts, so a failing criterion fails the suite.
"""

import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gkm_slicing.baselines import kelly_auction, optimal_welfare
from gkm_slicing.channel import dbm_to_watts
from gkm_slicing.experiment_io import emit, runner
from gkm_slicing.experiment_io.scenario import load_preset
from gkm_slicing.gkm_auction import GkmConfig, run_auction, verify_equilibrium
from gkm_slicing.lower_level import allocate_fractions
from gkm_slicing.market import Market
from gkm_slicing.multi_resource import MultiResourceMarket, run_multi_auction, verify_multi_equilibrium

JOBS = os.cpu_count() or 1


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def market_for(scenario, trial, point=None, epsilon=None):
    point = point or scenario.points()[0]
    return Market.from_users(scenario.bandwidth_hz, runner.draw_users(scenario, point, trial), epsilon)


@pytest.fixture(scope="module")
def sec6_result(sec6):
    return runner.run_experiment(sec6, jobs=JOBS)


@pytest.fixture(scope="module")
def multi():
    return load_preset("paper_multi")


@pytest.fixture(scope="module")
def multi_result(multi):
    return runner.run_experiment(multi, mechanisms=("gkm",), jobs=JOBS)


def test_criterion_01_single_draw_allocations(sec6):
    start = time.perf_counter()
    trace = run_auction(market_for(sec6, 0), runner.gkm_config(sec6))
    elapsed = time.perf_counter() - start
    target = np.array([4.5455, 2.2727, 1.8182, 1.3636])
    got = trace.final.allocations / 1e6
    rel = np.abs(got - target) / target
    ok = bool(np.all(rel <= 0.10)) and elapsed <= 10.0
    report(1, ok, f"allocations {np.round(got, 4).tolist()} MHz, max rel dev {rel.max():.2e}, {elapsed:.3f} s")


def test_criterion_02_convergence_speed(sec6_result, multi_result):
    single = [r.outcomes["gkm"] for r in sec6_result.records]
    multi = [r.outcomes["gkm"] for r in multi_result.records]
    worst_single = max(o.rounds for o in single)
    worst_multi = max(o.rounds for o in multi)
    ok = all(o.converged for o in single + multi) and worst_single <= 10 and worst_multi <= 15
    report(2, ok, f"max rounds single {worst_single} (<= 10), two-resource {worst_multi} (<= 15)")


def test_criterion_03_mechanism_ordering(sec6_result):
    agg = sec6_result.aggregates()[""]
    med = {m: agg[m]["welfare"]["median"] for m in ("equal", "kelly", "gkm", "optimal")}
    ordered = med["equal"] <= med["kelly"] <= med["gkm"] <= med["optimal"] * (1 + 1e-12)
    gap = agg["gkm"]["gap_to_optimal"]["median"]
    gain_equal = agg["equal"]["gkm_gain"]["max"]
    gain_kelly = agg["kelly"]["gkm_gain"]["max"]
    checks = {
        "ordering": ordered,
        "gap<=5%": gap <= 0.05,
        "gain_vs_equal in [8%,18%]": 0.08 <= gain_equal <= 0.18,
        "gain_vs_kelly in [4%,14%]": 0.04 <= gain_kelly <= 0.14,
    }
    failed = [k for k, v in checks.items() if not v]
    report(
        3,
        not failed,
        f"medians E/K/G/O {med['equal']:.3f}/{med['kelly']:.3f}/{med['gkm']:.3f}/{med['optimal']:.3f}, "
        f"gap {gap:.2e}, max gain vs equal {gain_equal:.2%}, vs kelly {gain_kelly:.2%}"
        + (f"; failed: {', '.join(failed)}" if failed else ""),
    )


def test_criterion_04_valuation_magnitude(sec6_result):
    v1 = np.median([r.outcomes["gkm"].valuations[0] for r in sec6_result.records])
    ok = 106 <= v1 <= 133.5 and abs(v1 - 119) <= 0.10 * 119
    report(4, ok, f"MVNO-1 median GKM valuation {v1:.3f}")


def _simplex_projection(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.flatnonzero(u - css / np.arange(1, v.size + 1) > 0)[-1]
    return np.maximum(v - css[k] / (k + 1), 0.0)


def _projected_gradient(r, alphas, iters=20000):
    """Independent oracle: projected gradient ascent on the simplex."""
    x = np.full(alphas.size, 1.0 / alphas.size)
    step = 1.0 / (r * alphas.max()) ** 2
    for _ in range(iters):
        grad = r * alphas / (1.0 + x * r * alphas)
        x = _simplex_projection(x + step * grad)
    return float(np.log1p(x * r * alphas).sum())


def test_criterion_05_lower_level_oracle():
    rng = np.random.default_rng(5)
    instances = [(rng.uniform(0.5, 20.0), rng.uniform(0.05, 3.0, rng.integers(1, 6))) for _ in range(100)]
    start = time.perf_counter()
    results = [allocate_fractions(r, a) for r, a in instances]
    elapsed = time.perf_counter() - start
    worst_rel, worst_cs = 0.0, 0.0
    for (r, a), res in zip(instances, results):
        oracle = _projected_gradient(r, a)
        worst_rel = max(worst_rel, abs(res.valuation - oracle) / abs(oracle))
        x, lam = res.fractions, res.multiplier
        marg = a / (1.0 + x * r * a)
        worst_cs = max(worst_cs, float(np.max(x * np.abs(marg - lam) / lam)), float(np.max(marg - lam) / lam))
    ok = worst_rel <= 1e-6 and worst_cs <= 1e-8 and elapsed <= 5.0
    report(5, ok, f"max rel dev {worst_rel:.2e}, slackness residual {worst_cs:.2e}, {elapsed:.3f} s")


def test_criterion_06_equilibrium_residuals(sec6, sec6_result, multi, multi_result):
    worst = {"stationarity": 0.0, "identity": 0.0, "capacity": 0.0, "best_response": 0.0}
    checked = 0
    for rec in sec6_result.records:
        if not rec.outcomes["gkm"].converged:
            continue
        market = market_for(sec6, rec.trial)
        rep = verify_equilibrium(run_auction(market, runner.gkm_config(sec6)), market)
        worst["stationarity"] = max(worst["stationarity"], rep.stationarity.max())
        worst["identity"] = max(worst["identity"], rep.allocation_identity.max())
        worst["capacity"] = max(worst["capacity"], rep.capacity)
        worst["best_response"] = max(worst["best_response"], rep.uniqueness.max())
        checked += 1
    power = dbm_to_watts(multi.max_power_dbm)
    for rec in multi_result.records:
        mm = MultiResourceMarket.from_market(market_for(multi, rec.trial), power, gradient_method=multi.auction.gradient)
        trace = run_multi_auction(mm, runner.gkm_config(multi))
        if not trace.converged:
            continue
        rep = verify_multi_equilibrium(trace, mm)
        worst["stationarity"] = max(worst["stationarity"], rep.stationarity.max())
        worst["capacity"] = max(worst["capacity"], rep.capacity.max())
        worst["best_response"] = max(worst["best_response"], rep.uniqueness.max())
        checked += 1
    ok = max(worst.values()) <= 1e-4
    report(6, ok, f"{checked} traces, worst " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_07_restart_invariance(sec6):
    market = market_for(sec6, 0)
    rng = np.random.default_rng(7)
    finals = []
    for _ in range(10):
        trace = run_auction(market, runner.gkm_config(sec6), initial_bids=rng.uniform(0.1, 10.0, market.n_mvnos))
        assert trace.converged
        finals.append(trace.final.allocations)
    finals = np.array(finals)
    spread = float(np.max(np.abs(finals - finals[0]) / finals[0]))
    report(7, spread <= 1e-3, f"max rel spread over 10 starts {spread:.2e}")


def test_criterion_08_price_taking_kelly(sec6):
    worst = 0.0
    for trial in range(10):
        market = market_for(sec6, trial)
        trace = kelly_auction(market, GkmConfig(bid_tolerance=1e-10), price_taking=True)
        opt = optimal_welfare(market).allocations
        worst = max(worst, float(np.max(np.abs(trace.final.allocations - opt) / opt)))
    report(8, worst <= 1e-3, f"max rel dev from optimum over 10 draws {worst:.2e}")


def test_criterion_09_outage_monotonicity():
    scenario = load_preset("paper_outage")
    result = runner.run_experiment(scenario, jobs=JOBS)
    eps = scenario.outage.epsilons
    rates = np.array(
        [[result.select(f"epsilon={e:g}")[t].outcomes["gkm"].rates for e in eps] for t in range(result.trials)]
    )  # (trials, eps, M)
    steps = np.diff(rates, axis=1)
    monotone = bool(np.all(steps >= 0))
    totals = rates.sum(axis=2).mean(axis=0)
    inc = np.diff(totals)
    larger_at_top = inc[-1] > inc.mean()
    report(
        9,
        monotone and larger_at_top,
        f"min per-MVNO step {steps.min():.3e} bps, mean total increments {np.round(inc / 1e3).astype(int).tolist()} kbps",
    )


def test_criterion_10_scaling_in_mvnos():
    scenario = load_preset("scaling_mvnos")
    result = runner.run_experiment(scenario, mechanisms=("gkm", "kelly", "optimal"), jobs=JOBS)
    agg = result.aggregates()
    gaps = [agg[p]["gkm"]["gap_to_optimal"]["median"] for p in result.points]
    kelly = [agg[p]["kelly"]["gap_to_optimal"]["median"] for p in result.points]
    ok = all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
    report(
        10,
        ok,
        "median GKM gap " + ", ".join(f"{p}: {g:.1e}" for p, g in zip(result.points, gaps))
        + " (kelly " + ", ".join(f"{g:.1e}" for g in kelly) + ")",
    )


def test_criterion_11_two_resource_sanity(sec6, multi_result):
    med = np.median([r.outcomes["gkm"].allocations for r in multi_result.records], axis=0)
    ordered = bool(np.all(np.diff(med, axis=1) < 0))
    market = market_for(sec6, 0)
    single = run_auction(market, runner.gkm_config(sec6))
    row = run_multi_auction(MultiResourceMarket.from_market(market), runner.gkm_config(sec6)).row_trace(0)
    identical = single.rounds_used == row.rounds_used and all(
        np.array_equal(getattr(a, f), getattr(b, f))
        for a, b in zip(single.rounds, row.rounds)
        for f in ("bids", "penalties", "market_power", "allocations", "valuations", "marginals")
    ) and all(a.price == b.price for a, b in zip(single.rounds, row.rounds))
    report(
        11,
        ordered and identical,
        f"median bandwidth {np.round(med[0] / 1e6, 3).tolist()} MHz, power {np.round(med[1], 3).tolist()} W, "
        f"one-resource trace identical: {identical}",
    )


def test_criterion_12_determinism(sec6):
    scenario = sec6.with_overrides(trials=6)
    a = runner.run_experiment(scenario, jobs=1)
    b = runner.run_experiment(scenario, jobs=1)
    c = runner.run_experiment(scenario, jobs=3)
    same = all(
        emit.to_csv(x) == emit.to_csv(a) and emit.to_json(x) == emit.to_json(a) for x in (b, c)
    )
    report(12, same, "CSV and JSON bytes identical across repeated runs and 1 vs 3 workers")
