"""End-to-end command-line workflows."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from wbipm.cli import main
from wbipm.fileio import read_bundle, read_run_record, read_vector_mm


def run_cli(*args):
    return main([str(a) for a in args])


TINY = ["--set", "grid.nx=10", "--set", "grid.ny=10", "--set", "grid.nz=5",
        "--set", "layout.detectors_x=5", "--set", "layout.detectors_y=5",
        "--set", "layout.sources_x=2", "--set", "layout.sources_y=2"]


@pytest.fixture(scope="module")
def tiny_bundle(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundles") / "tiny"
    assert run_cli("generate", "--out", path, *TINY) == 0
    return path


def test_generate_default_desk_dimensions(tmp_path):
    out = tmp_path / "desk"
    assert run_cli("generate", "--out", out) == 0
    bundle = read_bundle(out)
    assert bundle.operator.shape == (576, 2048)
    assert bundle.config["derived.M"] == "576"
    assert bundle.config["derived.N"] == "2048"


def test_generate_is_bitwise_reproducible(tmp_path):
    a, b = tmp_path / "one", tmp_path / "two"
    for out in (a, b):
        assert run_cli("generate", "--out", out, *TINY) == 0
    for name in ("A.mtx", "x_star.mtx", "b_clean.mtx", "b_noisy.mtx",
                 "eta.mtx", "bundle.cfg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_generate_zero_noise(tmp_path):
    out = tmp_path / "clean"
    assert run_cli("generate", "--out", out, *TINY, "--set", "noise.sigma=0") == 0
    bundle = read_bundle(out)
    assert np.array_equal(bundle.b_noisy, bundle.b_clean)
    assert not np.any(bundle.eta)


def test_generate_rejects_unknown_keys(tmp_path, capsys):
    rc = run_cli("generate", "--out", tmp_path / "x", "--set", "grid.qq=1")
    assert rc == 2
    assert "grid.qq" in capsys.readouterr().err


def test_solve_exact_prior_noiseless(tmp_path):
    bundle = tmp_path / "clean"
    assert run_cli("generate", "--out", bundle, *TINY, "--set", "noise.sigma=0") == 0
    rec_path = tmp_path / "rec.json"
    assert run_cli("solve", "--bundle", bundle, "--method", "wbipm",
                   "--warm-basis", "exact", "--alpha", "0", "--out", rec_path) == 0
    record = read_run_record(rec_path)
    assert record["final"]["rel_error"] <= 1e-6
    assert (tmp_path / "rec_history.csv").exists()


def test_solve_history_row_contract(tmp_path):
    # needs M >= 121 so the data-side basis can grow for 120 iterations
    bundle = tmp_path / "tall"
    assert run_cli("generate", "--out", bundle, *TINY,
                   "--set", "layout.sources_x=3", "--set", "layout.sources_y=3") == 0
    rec_path = tmp_path / "fhybr.json"
    assert run_cli("solve", "--bundle", bundle, "--method", "fhybr",
                   "--max-outer", "120", "--stagnation-tol", "1e-300",
                   "--out", rec_path) == 0
    record = read_run_record(rec_path)
    assert len(record["history"]) == 120
    assert [row["k"] for row in record["history"]] == list(range(1, 121))


def test_solve_requires_warm_basis(tiny_bundle, tmp_path, capsys):
    rc = run_cli("solve", "--bundle", tiny_bundle, "--method", "wbipm",
                 "--out", tmp_path / "r.json")
    assert rc == 2
    assert "warm-basis" in capsys.readouterr().err


def test_solve_wrong_length_warm_basis_file(tiny_bundle, tmp_path, capsys):
    from wbipm.warmbasis import save_warm_basis
    wb_file = tmp_path / "wb.mtx"
    save_warm_basis(wb_file, np.ones(7))
    rc = run_cli("solve", "--bundle", tiny_bundle, "--method", "warmstart",
                 "--warm-basis", f"file:{wb_file}", "--out", tmp_path / "r.json")
    assert rc == 2
    assert "length" in capsys.readouterr().err


def test_solve_reruns_are_byte_identical(tiny_bundle, tmp_path):
    recs = []
    for name in ("a.json", "b.json"):
        rec_path = tmp_path / name
        assert run_cli("solve", "--bundle", tiny_bundle, "--method", "wbipm",
                       "--warm-basis", "angle:20", "--wb-seed", "3",
                       "--max-outer", "25", "--out", rec_path) == 0
        recs.append(json.dumps(read_run_record(rec_path)["history"]))
    assert recs[0] == recs[1]


def test_solve_dump_basis(tiny_bundle, tmp_path):
    rec_path = tmp_path / "rec.json"
    dump = tmp_path / "basis"
    assert run_cli("solve", "--bundle", tiny_bundle, "--method", "wbipm",
                   "--warm-basis", "angle:20", "--max-outer", "8",
                   "--stagnation-tol", "1e-300",
                   "--dump-basis", dump, "--out", rec_path) == 0
    from wbipm.fileio import read_matrix_mm
    u = read_matrix_mm(dump / "U.mtx")
    g = read_matrix_mm(dump / "G.mtx")
    z = read_matrix_mm(dump / "Z.mtx")
    assert u.shape[1] == g.shape[0] == 9
    assert z.shape == (read_bundle(tiny_bundle).operator.shape[1], 8)


def test_solve_bound_report(tiny_bundle, tmp_path):
    rec_path = tmp_path / "rec.json"
    assert run_cli("solve", "--bundle", tiny_bundle, "--method", "wbipm",
                   "--warm-basis", "angle:10", "--max-outer", "20",
                   "--bound-report", "--out", rec_path) == 0
    report = read_run_record(rec_path)["final"]["bound_report"]
    assert report["certified"] is True
    assert report["observed_error"] <= report["total"]


def test_evaluate_identical_records_zero_improvement(tiny_bundle, tmp_path):
    rec = tmp_path / "rec.json"
    assert run_cli("solve", "--bundle", tiny_bundle, "--method", "fhybr",
                   "--max-outer", "25", "--out", rec) == 0
    out = tmp_path / "eval"
    assert run_cli("evaluate", "--bundle", tiny_bundle, "--out", out,
                   "--at", "20", rec, rec) == 0
    with open(out / "rmse_improvement.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    assert all(float(r["improvement_pct"]) == 0.0 for r in rows)


def test_evaluate_perfect_candidate_hundred_percent(tmp_path):
    bundle = tmp_path / "clean"
    assert run_cli("generate", "--out", bundle, *TINY, "--set", "noise.sigma=0") == 0
    base = tmp_path / "base.json"
    cand = tmp_path / "cand.json"
    assert run_cli("solve", "--bundle", bundle, "--method", "fhybr",
                   "--max-outer", "10", "--snapshots", "10",
                   "--stagnation-tol", "1e-300", "--out", base) == 0
    assert run_cli("solve", "--bundle", bundle, "--method", "wbipm",
                   "--warm-basis", "exact", "--alpha", "0", "--out", cand) == 0
    out = tmp_path / "eval"
    assert run_cli("evaluate", "--bundle", bundle, "--out", out,
                   "--at", "10", base, cand) == 0
    with open(out / "rmse_improvement.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["improvement_pct"]) >= 99.9 for r in rows)
    # the perfect run stopped at iteration 0, so k=10 was clipped
    evaluation = read_run_record(out / "evaluation.json")
    assert evaluation["warnings"]


def test_evaluate_rejects_mismatched_bundle(tiny_bundle, tmp_path, capsys):
    other = tmp_path / "other"
    assert run_cli("generate", "--out", other, *TINY, "--set", "seed=8") == 0
    rec = tmp_path / "rec.json"
    assert run_cli("solve", "--bundle", other, "--method", "fhybr",
                   "--max-outer", "5", "--out", rec) == 0
    rc = run_cli("evaluate", "--bundle", tiny_bundle, "--out", tmp_path / "e",
                 rec, rec)
    assert rc == 2
    assert "different bundle" in capsys.readouterr().err


def test_sweep_single_cell_aggregate_equals_record(tmp_path):
    out = tmp_path / "sweep1"
    assert run_cli("sweep", "--out", out, *TINY, "--noise", "0.1",
                   "--angles", "20", "--methods", "wbipm", "--seeds", "1",
                   "--max-outer", "10", "--jobs", "1") == 0
    cells = list((out / "cells").glob("*.json"))
    assert len(cells) == 1
    cell = read_run_record(cells[0])
    with open(out / "aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert float(rows[0]["mean_final_rel_error"]) == cell["final_rel_error"]


def test_sweep_cell_and_row_arithmetic(tmp_path):
    out = tmp_path / "sweep80"
    assert run_cli("sweep", "--out", out, *TINY,
                   "--noise", "0.05,0.10,0.15,0.20", "--angles", "20",
                   "--methods", "wbipm,fhybr", "--seeds", "10",
                   "--max-outer", "8", "--jobs", "4") == 0
    assert len(list((out / "cells").glob("*.json"))) == 80
    with open(out / "aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert all(int(r["n_failed"]) == 0 for r in rows)


def test_sweep_noise_monotonicity(tmp_path):
    out = tmp_path / "sweepmono"
    assert run_cli("sweep", "--out", out, *TINY, "--noise", "0.05,0.20",
                   "--angles", "20", "--methods", "wbipm,fhybr", "--seeds", "6",
                   "--jobs", "4") == 0
    with open(out / "aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    by_method = {}
    for r in rows:
        by_method.setdefault(r["method"], {})[float(r["sigma"])] = \
            float(r["mean_final_rel_error"])
    for method, errs in by_method.items():
        assert errs[0.20] >= errs[0.05], method


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("--version")
    assert exc.value.code == 0
