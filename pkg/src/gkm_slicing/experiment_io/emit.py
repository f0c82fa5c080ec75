"""Result files: flat CSV for tables, nested JSON for full records.

CSV columns (fixed order)::

    trial, point, mechanism, mvno, users, allocation_hz, power_w,
    valuation, rate_bps, rounds, converged, scenario_hash, tool_version

One row per (trial, point, mechanism, MVNO). ``point`` labels the sweep
value and outage threshold (empty for a plain scenario), ``mvno`` counts
from 1, ``power_w`` is empty for bandwidth-only scenarios and floats are
written with ``repr`` so values survive a round trip exactly. Trials whose
mechanism raised are left out of the CSV and listed in the JSON.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from ..exceptions import ExperimentError
from .runner import ExperimentResult, MechanismRecord, TrialRecord
from .scenario import scenario_from_dict

CSV_HEADER = (
    "trial",
    "point",
    "mechanism",
    "mvno",
    "users",
    "allocation_hz",
    "power_w",
    "valuation",
    "rate_bps",
    "rounds",
    "converged",
    "scenario_hash",
    "tool_version",
)

TRACE_HEADER = (
    "iteration",
    "mvno",
    "valuation",
    "allocation_hz",
    "power_w",
    "bid",
    "penalty",
    "market_power",
    "price",
)

JSON_FORMAT = "gkm-slicing-result"


def csv_rows(result: ExperimentResult) -> Iterable[list[str]]:
    for rec in result.records:
        for name in result.mechanisms:
            out = rec.outcomes.get(name)
            if out is None:
                continue
            for m in range(out.valuations.size):
                yield [
                    str(rec.trial),
                    rec.point,
                    name,
                    str(m + 1),
                    str(rec.user_counts[m]),
                    repr(float(out.allocations[0, m])),
                    repr(float(out.allocations[1, m])) if out.allocations.shape[0] > 1 else "",
                    repr(float(out.valuations[m])),
                    repr(float(out.rates[m])),
                    str(out.rounds),
                    "true" if out.converged else "false",
                    result.scenario_hash,
                    result.tool_version,
                ]


def to_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(csv_rows(result))
    return buf.getvalue()


def _record_to_dict(rec: MechanismRecord) -> dict[str, Any]:
    return {
        "allocations": rec.allocations.tolist(),
        "valuations": rec.valuations.tolist(),
        "rates": rec.rates.tolist(),
        "rounds": rec.rounds,
        "converged": rec.converged,
        "trace": None if rec.trace is None else {k: v.tolist() for k, v in rec.trace.items()},
    }


def _trial_to_dict(rec: TrialRecord) -> dict[str, Any]:
    return {
        "trial": rec.trial,
        "point": rec.point,
        "user_counts": list(rec.user_counts),
        "market_id": rec.market_id,
        "outcomes": {k: _record_to_dict(v) for k, v in rec.outcomes.items()},
        "errors": dict(rec.errors),
    }


def to_dict(result: ExperimentResult) -> dict[str, Any]:
    return {
        "format": JSON_FORMAT,
        "tool_version": result.tool_version,
        "scenario_hash": result.scenario_hash,
        "scenario": result.scenario.to_dict(),
        "trials": result.trials,
        "mechanisms": list(result.mechanisms),
        "failed_trials": result.failed_trials,
        "records": [_trial_to_dict(r) for r in result.records],
        "aggregates": result.aggregates(),
    }


def to_json(result: ExperimentResult) -> str:
    return json.dumps(to_dict(result), indent=1, allow_nan=False) + "\n"


def from_dict(d: dict[str, Any]) -> ExperimentResult:
    """Rebuild a result from its JSON form; aggregates are recomputed."""
    if d.get("format") != JSON_FORMAT:
        raise ExperimentError(f"not a {JSON_FORMAT} document")
    records = []
    for t in d["records"]:
        rec = TrialRecord(t["trial"], t["point"], tuple(t["user_counts"]), t["market_id"])
        for name, o in t["outcomes"].items():
            rec.outcomes[name] = MechanismRecord(
                name,
                np.array(o["allocations"], dtype=float),
                np.array(o["valuations"], dtype=float),
                np.array(o["rates"], dtype=float),
                o["rounds"],
                o["converged"],
                None if o["trace"] is None else {k: np.array(v, dtype=float) for k, v in o["trace"].items()},
            )
        rec.errors.update(t["errors"])
        records.append(rec)
    return ExperimentResult(
        scenario_from_dict(d["scenario"]),
        d["scenario_hash"],
        d["tool_version"],
        d["trials"],
        tuple(d["mechanisms"]),
        records,
    )


def trace_rows(record: MechanismRecord) -> list[list[str]]:
    """Per-iteration series of one auction run, for convergence plots."""
    if record.trace is None:
        raise ExperimentError(f"mechanism {record.mechanism!r} has no iteration trace")
    tr = record.trace
    rows = []
    n_rounds, n_res, n_mvnos = tr["bids"].shape
    for k in range(n_rounds):
        for m in range(n_mvnos):
            rows.append(
                [
                    str(k + 1),
                    str(m + 1),
                    repr(float(tr["valuations"][k, m])),
                    repr(float(tr["allocations"][k, 0, m])),
                    repr(float(tr["allocations"][k, 1, m])) if n_res > 1 else "",
                    ";".join(repr(float(x)) for x in tr["bids"][k, :, m]),
                    ";".join(repr(float(x)) for x in tr["penalties"][k, :, m]),
                    ";".join(repr(float(x)) for x in tr["market_power"][k, :, m]),
                    ";".join(repr(float(x)) for x in tr["prices"][k]),
                ]
            )
    return rows


def trace_csv(record: MechanismRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    writer.writerows(trace_rows(record))
    return buf.getvalue()


def write_text(path: str | Path, text: str) -> Path:
    p = Path(path)
    try:
        p.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ExperimentError(f"{p}: cannot write results: {exc.strerror or exc}") from None
    return p


def emit_results(result: ExperimentResult, fmt: str, path: str | Path) -> list[Path]:
    """Write ``path`` in ``fmt`` (csv or json); ``both`` writes ``path``.csv and .json."""
    path = Path(path)
    if fmt == "csv":
        return [write_text(path, to_csv(result))]
    if fmt == "json":
        return [write_text(path, to_json(result))]
    if fmt == "both":
        return [
            write_text(path.with_suffix(".csv"), to_csv(result)),
            write_text(path.with_suffix(".json"), to_json(result)),
        ]
    raise ExperimentError(f"unknown output format {fmt!r}")
