import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

import commands.boundary_commands
from app import create_app
from services.errors import NotSectorial
from settings import VERSION


SCALAR = {"task": "analyze", "problem": {"type": "form", "form": [[[2, 1]]], "jmap": [[1]]}}
GRID = {"type": "grid", "dim": 1, "lengths": [1.0], "cells": [16]}


@pytest.fixture
def invoke(tmp_path):
    runner = CliRunner()
    cli = create_app()

    def run(*args):
        return runner.invoke(cli, [*args, "--out", str(tmp_path / "out")])
    return run


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.reader(handle))


#analyze / extract------------------------------------------------------------------------------------------------------

def test_analyze_scalar_form(invoke, write_config, tmp_path):
    result = invoke("analyze", "--config", write_config(SCALAR))
    assert result.exit_code == 0
    assert "gamma=0 tan(theta)=0.5" in result.output

    cert = json.loads((tmp_path / "out" / "certificate.json").read_text())
    assert cert["tan_theta"] == pytest.approx(0.5)
    assert cert["dim_ker_j"] == 0
    assert len(cert["angle_witness"]) == 1
    assert len(cert["vertex_witness"]) == 1
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["task"] == "analyze"
    assert "certificate.json" in manifest["artifacts"]

def test_extract_writes_operator(invoke, write_config, tmp_path):
    doc = {"task": "extract", "problem": {"type": "form", "form": [[1, 0], [0, 1]], "jmap": [[1, 0]]}}
    result = invoke("extract", "--config", write_config(doc), "--samples", "50")
    assert result.exit_code == 0
    rows = read_rows(tmp_path / "out" / "operator.csv")
    assert rows[0] == ["i", "j", "re", "im"]
    assert float(rows[1][2]) == pytest.approx(1.0)

def test_extract_refusal_writes_document(invoke, write_config, tmp_path):
    doc = {"task": "extract", "problem": {"type": "form", "form": [[0]], "jmap": [[0]]}}
    result = invoke("extract", "--config", write_config(doc))
    assert result.exit_code == 3
    refusal = json.loads((tmp_path / "out" / "refusal.json").read_text())
    assert refusal["error"] == "RangeNotDense"
    assert refusal["message"]
    assert refusal["witness"] == [[1.0, 0.0]]


#exit codes-------------------------------------------------------------------------------------------------------------

def test_unknown_key_is_schema_error(invoke, write_config):
    result = invoke("analyze", "--config", write_config({**SCALAR, "extra": 1}))
    assert result.exit_code == 2
    assert "error:" in result.output

def test_task_mismatch_is_schema_error(invoke, write_config):
    result = invoke("extract", "--config", write_config(SCALAR))
    assert result.exit_code == 2
    assert "does not match" in result.output

def test_unknown_functional_is_schema_error(invoke, write_config):
    doc = {"task": "evolve", "problem": SCALAR["problem"], "params": {"functionals": ["energy"]}}
    assert invoke("evolve", "--config", write_config(doc)).exit_code == 2

def test_internal_error_exit_code(invoke, write_config, mocker):
    # Patch where it's USED: commands.analysis_commands
    mocker.patch("commands.analysis_commands.sector_fit", side_effect=RuntimeError("boom"))
    result = invoke("analyze", "--config", write_config(SCALAR))
    assert result.exit_code == 1
    assert "boom" in result.output

def test_refusal_carries_witness(invoke, write_config, mocker, tmp_path):
    mocker.patch("commands.analysis_commands.sector_fit",
                 side_effect=NotSectorial("no sector", witness=np.array([1.0])))
    result = invoke("analyze", "--config", write_config(SCALAR))
    assert result.exit_code == 3
    refusal = json.loads((tmp_path / "out" / "refusal.json").read_text())
    assert refusal == {"error": "NotSectorial", "message": "no sector", "witness": [[1.0, 0.0]]}

def test_missing_config_file_is_a_usage_error(invoke):
    assert invoke("analyze", "--config", "does-not-exist.json").exit_code == 2


#run and grid tasks-----------------------------------------------------------------------------------------------------

def test_run_uses_task_from_config(invoke, write_config, tmp_path):
    result = invoke("run", "--config", write_config(SCALAR))
    assert result.exit_code == 0
    assert (tmp_path / "out" / "certificate.json").exists()

def test_run_needs_a_task(invoke, write_config):
    assert invoke("run", "--config", write_config({"problem": SCALAR["problem"]})).exit_code == 2

def test_dtn_at_zero(invoke, write_config, tmp_path):
    result = invoke("dtn", "--config", write_config({"task": "dtn", "problem": GRID}), "--lambda", "0")
    assert result.exit_code == 0
    assert "lambda=0" in result.output
    rows = read_rows(tmp_path / "out" / "dtn.csv")
    assert len(rows) == 5
    assert float(rows[1][2]) == pytest.approx(1.0, rel=1e-6)

def test_evolve_on_grid(invoke, write_config, tmp_path):
    result = invoke("evolve", "--config", write_config({"task": "evolve", "problem": GRID}), "--t", "0:0.1:3")
    assert result.exit_code == 0
    rows = read_rows(tmp_path / "out" / "trajectory.csv")
    assert rows[0] == ["t_re", "t_im", "mass", "l1", "sup", "l2"]
    assert len(rows) == 4

def test_regularize_scalar_form(invoke, write_config, tmp_path):
    doc = {"task": "regularize", "problem": {"type": "form", "form": [[1]]}, "params": {"b": [[1]], "lambda": 1.0}}
    result = invoke("regularize", "--config", write_config(doc), "--n-max", "4")
    assert result.exit_code == 0
    rows = read_rows(tmp_path / "out" / "convergence.csv")
    assert [row[0] for row in rows[1:]] == ["1", "2", "4"]
    assert float(rows[1][1]) == pytest.approx(1 / 6)

def test_regularize_form_needs_b(invoke, write_config):
    doc = {"task": "regularize", "problem": {"type": "form", "form": [[1]]}}
    assert invoke("regularize", "--config", write_config(doc)).exit_code == 2

def test_grid_task_refuses_form_problem(invoke, write_config):
    assert invoke("gaffney", "--config", write_config({"problem": SCALAR["problem"]})).exit_code == 2

def test_version_flag():
    result = CliRunner().invoke(create_app(), ["--version"])
    assert result.exit_code == 0
    assert VERSION in result.output

def test_gaffney_with_tail(invoke, write_config, tmp_path):
    doc = {"task": "gaffney", "problem": {**GRID, "cells": [64]}, "params": {"R": [0.1, 0.2], "t": "1e-3:1e-2:log4"}}
    result = invoke("gaffney", "--config", write_config(doc))
    assert result.exit_code == 0
    assert "passes=True" in result.output
    assert len(read_rows(tmp_path / "out" / "gaffney.csv")) == 5
    assert read_rows(tmp_path / "out" / "tail.csv")[0] == ["R", "tail", "envelope"]

def test_invariance_on_neumann_heat(invoke, write_config, tmp_path):
    doc = {"task": "invariance", "problem": {**GRID, "cells": [8]}, "params": {"samples": 100}}
    result = invoke("invariance", "--config", write_config(doc))
    assert result.exit_code == 0
    assert "all checks pass" in result.output
    checks = [row[0] for row in read_rows(tmp_path / "out" / "invariance.csv")[1:]]
    assert "criterion_weighted_box" in checks
    assert "markov_l1_contractive" in checks

def test_multiplicative_rho_d(invoke, write_config, tmp_path):
    problem = {**GRID, "bc": {"kind": "dirichlet"}}
    doc = {"task": "multiplicative", "problem": problem, "params": {"mode": "rhoD"}}
    result = invoke("multiplicative", "--config", write_config(doc))
    assert result.exit_code == 0
    rows = read_rows(tmp_path / "out" / "multiplicative.csv")
    assert rows[1][0] == "self_adjoint_defect"
    assert float(rows[1][1]) <= 1e-9

def test_wentzell_task(invoke, write_config, tmp_path):
    problem = {**GRID, "cells": [4], "bc": {"kind": "wentzell", "alpha": [0.0, 0.0], "B": [[1, 0], [0, 2]]}}
    result = invoke("wentzell", "--config", write_config({"task": "wentzell", "problem": problem}))
    assert result.exit_code == 0
    assert "lattice=True positive=True" in result.output

def test_wentzell_task_assembles_once(invoke, write_config, mocker):
    spy = mocker.spy(commands.boundary_commands, "wentzell_assemble")
    problem = {**GRID, "cells": [4], "bc": {"kind": "wentzell", "alpha": [0.5, 0.5], "B": [[1, 0], [0, 1]]}}
    assert invoke("wentzell", "--config", write_config({"task": "wentzell", "problem": problem})).exit_code == 0
    assert spy.call_count == 1

def test_same_seed_gives_identical_files(write_config, tmp_path):
    doc = {"task": "invariance", "problem": {**GRID, "cells": [8]}, "params": {"samples": 30}}
    config = write_config(doc)
    runner = CliRunner()
    for name in ("first", "second"):
        result = runner.invoke(create_app(), ["invariance", "--config", config, "--seed", "7",
                                              "--out", str(tmp_path / name)])
        assert result.exit_code == 0
    first = (tmp_path / "first" / "invariance.csv").read_bytes()
    assert first == (tmp_path / "second" / "invariance.csv").read_bytes()

def test_dtn_logs_monotonicity_when_asked(invoke, write_config, mocker):
    spy = mocker.spy(commands.boundary_commands, "dtn_monotonicity_log")
    doc = {"task": "dtn", "problem": GRID, "params": {"monotonicity_lambdas": [-1.0, 0.0, 1.0]}}
    assert invoke("dtn", "--config", write_config(doc)).exit_code == 0
    assert spy.call_count == 1
    assert spy.spy_return is True
