import csv
import io
import json

import numpy as np
import pytest

from gkm_slicing.exceptions import ExperimentError
from gkm_slicing.experiment_io import emit, runner
from gkm_slicing.experiment_io.scenario import load_preset, parse_scenario
from gkm_slicing.gkm_auction import run_auction
from gkm_slicing.market import Market

SMALL = """
name = "small"
seed = 11
trials = 4

[path_loss]
antenna_gain_db = -54.5

[[mvnos]]
users = 3

[[mvnos]]
users = 2

[[mvnos]]
users = 1
"""


@pytest.fixture(scope="module")
def small():
    return parse_scenario(SMALL)


@pytest.fixture(scope="module")
def small_result(small):
    return runner.run_experiment(small)


def test_smoke_run_shapes(small_result):
    assert small_result.failed_trials == []
    assert len(small_result.records) == 4
    for rec in small_result.records:
        assert set(rec.outcomes) == {"gkm", "kelly", "equal", "optimal"}
        for out in rec.outcomes.values():
            assert out.allocations.shape == (1, 3)
            assert out.allocations.sum() == pytest.approx(1e7)


def test_mechanisms_share_one_draw(small, small_result):
    rec = small_result.records[2]
    groups = runner.draw_users(small, small.points()[0], 2)
    market = Market.from_users(small.bandwidth_hz, groups)
    assert rec.market_id == market.fingerprint()
    np.testing.assert_array_equal(rec.outcomes["gkm"].allocations[0], run_auction(market).final.allocations)


def test_trial_draws_do_not_depend_on_order(small):
    point = small.points()[0]
    a = runner.draw_users(small, point, 3)
    runner.draw_users(small, point, 0)
    b = runner.draw_users(small, point, 3)
    assert [[u.distance for u in g] for g in a] == [[u.distance for u in g] for g in b]
    c = runner.draw_users(small, point, 1)
    assert a[0][0].distance != c[0][0].distance


def test_runs_are_byte_identical_across_jobs(small, small_result):
    again = runner.run_experiment(small, jobs=2)
    assert emit.to_csv(again) == emit.to_csv(small_result)
    assert emit.to_json(again) == emit.to_json(small_result)


def test_csv_layout(small_result):
    rows = list(csv.reader(io.StringIO(emit.to_csv(small_result))))
    assert tuple(rows[0]) == emit.CSV_HEADER
    assert rows[0] == ["trial", "point", "mechanism", "mvno", "users", "allocation_hz", "power_w",
                       "valuation", "rate_bps", "rounds", "converged", "scenario_hash", "tool_version"]
    body = rows[1:]
    assert len(body) == 4 * 4 * 3
    first = body[0]
    assert first[:5] == ["0", "", "gkm", "1", "3"] and first[6] == ""
    rec = small_result.records[0].outcomes["gkm"]
    assert float(first[5]) == rec.allocations[0, 0]
    assert float(first[7]) == rec.valuations[0]
    assert first[11] == small_result.scenario_hash


def test_json_round_trip(small_result):
    text = emit.to_json(small_result)
    back = emit.from_dict(json.loads(text))
    assert emit.to_json(back) == text
    assert emit.to_csv(back) == emit.to_csv(small_result)


def test_json_rejects_foreign_documents():
    with pytest.raises(ExperimentError):
        emit.from_dict({"format": "other"})


def test_aggregates(small_result):
    agg = small_result.aggregates()[""]
    assert agg["trials"] == 4 and agg["failed"] == 0
    assert agg["optimal"]["gap_to_optimal"]["median"] == 0.0
    assert agg["gkm"]["gkm_gain"]["max"] == 0.0
    assert agg["equal"]["gkm_gain"]["min"] >= 0.0
    assert agg["gkm"]["converged_fraction"] == 1.0


def test_trace_csv_matches_the_run(small, small_result):
    out = small_result.records[0].outcomes["gkm"]
    rows = list(csv.reader(io.StringIO(emit.trace_csv(out))))
    assert tuple(rows[0]) == emit.TRACE_HEADER
    assert len(rows) - 1 == out.rounds * 3
    groups = runner.draw_users(small, small.points()[0], 0)
    trace = run_auction(Market.from_users(small.bandwidth_hz, groups))
    last = rows[-3:]
    np.testing.assert_array_equal([float(r[3]) for r in last], trace.final.allocations)
    np.testing.assert_array_equal([float(r[5]) for r in last], trace.final.bids)
    assert float(last[0][8]) == trace.final.price
    with pytest.raises(ExperimentError):
        emit.trace_csv(small_result.records[0].outcomes["equal"])


def test_emit_both_and_write_errors(small_result, tmp_path):
    paths = emit.emit_results(small_result, "both", tmp_path / "out")
    assert [p.suffix for p in paths] == [".csv", ".json"] and all(p.exists() for p in paths)
    with pytest.raises(ExperimentError, match="cannot write"):
        emit.write_text(tmp_path / "missing" / "x.csv", "x")


def _flaky_optimal(bad_trials):
    real = runner.optimal_welfare

    def wrapped(market):
        if market.fingerprint() in bad_trials:
            raise RuntimeError("solver blew up")
        return real(market)

    return wrapped


def _market_ids(scenario, trials):
    point = scenario.points()[0]
    return [
        Market.from_users(scenario.bandwidth_hz, runner.draw_users(scenario, point, t)).fingerprint()
        for t in trials
    ]


def test_failed_trials_are_tolerated_up_to_ten_percent(monkeypatch, small):
    scenario = small.with_overrides(trials=10)
    monkeypatch.setattr(runner, "optimal_welfare", _flaky_optimal(set(_market_ids(scenario, [4]))))
    result = runner.run_experiment(scenario, mechanisms=("equal", "optimal"))
    assert result.failed_trials == [4]
    assert "RuntimeError" in result.records[4].errors["optimal"]
    assert all(row[0] != "4" or row[2] != "optimal" for row in emit.csv_rows(result))
    assert json.loads(emit.to_json(result))["failed_trials"] == [4]


def test_too_many_failures_abort(monkeypatch, small):
    scenario = small.with_overrides(trials=10)
    monkeypatch.setattr(runner, "optimal_welfare", _flaky_optimal(set(_market_ids(scenario, [1, 7]))))
    with pytest.raises(ExperimentError, match="2 of 10 trials failed"):
        runner.run_experiment(scenario, mechanisms=("optimal",))


def test_bad_arguments(small):
    with pytest.raises(ExperimentError):
        runner.run_experiment(small, trials=0)
    with pytest.raises(ExperimentError):
        runner.run_experiment(small, mechanisms=("vcg",))


def test_outage_points_share_the_draw():
    scenario = load_preset("paper_outage")
    records = runner.run_trial(scenario, 0, ("gkm",))
    assert [r.point for r in records] == [f"epsilon={e:g}" for e in scenario.outage.epsilons]
    rates = [r.outcomes["gkm"].rates.sum() for r in records]
    assert np.all(np.diff(rates) > 0)


def test_multi_resource_records():
    scenario = load_preset("paper_multi")
    [rec] = runner.run_trial(scenario, 0, ("gkm", "equal", "optimal"))
    gkm, optimal = rec.outcomes["gkm"], rec.outcomes["optimal"]
    assert gkm.allocations.shape == (2, 4)
    assert gkm.welfare <= optimal.welfare * (1 + 1e-9)
    assert rec.outcomes["equal"].welfare <= gkm.welfare
    row = next(emit.csv_rows(runner.ExperimentResult(scenario, "h", "v", 1, ("gkm",), [rec])))
    assert row[6] == repr(float(gkm.allocations[1, 0]))
