"""Scenario files, Monte Carlo experiment runs and result emission."""

from .emit import CSV_HEADER, TRACE_HEADER, emit_results, from_dict, to_csv, to_dict, to_json, trace_csv
from .runner import ExperimentResult, MechanismRecord, TrialRecord, run_experiment, run_trial
from .scenario import Scenario, list_presets, load_preset, load_scenario, parse_scenario

__all__ = [
    "CSV_HEADER",
    "TRACE_HEADER",
    "ExperimentResult",
    "MechanismRecord",
    "Scenario",
    "TrialRecord",
    "emit_results",
    "from_dict",
    "list_presets",
    "load_preset",
    "load_scenario",
    "parse_scenario",
    "run_experiment",
    "run_trial",
    "to_csv",
    "to_dict",
    "to_json",
    "trace_csv",
]
