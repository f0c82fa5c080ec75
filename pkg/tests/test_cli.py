import csv
import io
import json
import subprocess
import sys

import pytest

from gkm_slicing.cli import main
from gkm_slicing.experiment_io import emit

TINY = """
name = "tiny"
seed = 3
trials = 2

[path_loss]
antenna_gain_db = -54.5

[[mvnos]]
users = 3

[[mvnos]]
users = 1
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return str(path)


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "paper_sec6" in out and "scaling_mvnos" in out


def test_run_to_stdout(capsys, tiny):
    assert main(["run", tiny, "--mechanisms", "gkm,equal"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert tuple(rows[0]) == emit.CSV_HEADER
    assert len(rows) == 1 + 2 * 2 * 2


def test_run_to_files(tmp_path, tiny):
    out = tmp_path / "res"
    assert main(["run", tiny, "--format", "both", "--output", str(out), "--trials", "1"]) == 0
    doc = json.loads((tmp_path / "res.json").read_text())
    assert doc["trials"] == 1 and doc["failed_trials"] == []
    assert (tmp_path / "res.csv").read_text().startswith("trial,point,mechanism")


def test_seed_override_changes_results(capsys, tiny):
    main(["run", tiny, "--trials", "1", "--mechanisms", "equal"])
    a = capsys.readouterr().out
    main(["run", tiny, "--trials", "1", "--mechanisms", "equal", "--seed", "4"])
    b = capsys.readouterr().out
    assert a != b


def test_verify_and_its_tolerance(capsys, tiny):
    assert main(["verify", tiny]) == 0
    assert "ok" in capsys.readouterr().out
    assert main(["verify", tiny, "--tol", "1e-300"]) == 3
    assert "FAILED" in capsys.readouterr().out


def test_compare_csv(capsys, tiny):
    assert main(["compare", tiny, "--format", "csv"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0][:3] == ["point", "mechanism", "median_welfare"]
    by_name = {r[1]: r for r in rows[1:]}
    assert float(by_name["optimal"][3]) == 0.0
    assert float(by_name["gkm"][4]) == 0.0


def test_trace(capsys, tiny):
    assert main(["trace", tiny, "--trial", "1"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert tuple(rows[0]) == emit.TRACE_HEADER and len(rows) > 2


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["run"],
        ["run", "paper_sec6", "--trials", "0"],
        ["run", "paper_sec6", "--mechanisms", "vcg"],
        ["run", "paper_sec6", "--format", "both"],
        ["trace", "paper_outage", "--point", "nowhere"],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_scenario_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[[mvnos]]\nusers = 0\n")
    assert main(["run", str(bad)]) == 2
    assert "bad.toml" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "absent.toml")]) == 2


def test_experiment_errors_exit_3(tmp_path, tiny, capsys):
    target = tmp_path / "no" / "such" / "dir.csv"
    assert main(["run", tiny, "--output", str(target), "--trials", "1"]) == 3
    assert "cannot write" in capsys.readouterr().err


def test_installed_entry_point(tiny):
    proc = subprocess.run(
        [sys.executable, "-m", "gkm_slicing.cli", "run", tiny, "--trials", "1", "--mechanisms", "equal"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0 and proc.stdout.startswith("trial,")
    proc = subprocess.run([sys.executable, "-m", "gkm_slicing.cli", "run", "nope.toml"], capture_output=True)
    assert proc.returncode == 2
