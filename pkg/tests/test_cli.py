import csv
import json
import subprocess
import sys

import pytest

from grouptest.adaptive import detect_adaptive_det
from grouptest.cli import main
from grouptest.core import TestOracle, make_rng, random_hidden_set

RECORD_HEADER = "trial,tests_used,rounds_used,status,hits"
SUMMARY_HEADER = (
    "alg,n,d,ell,D,delta,trials,successes,success_rate,wilson_low,wilson_high,mean_tests,"
    "max_tests,max_rounds,bound_lower,bound_upper,lower_asymptotic,upper_asymptotic"
)
ESTIMATE_HEADER = "trial,D,guarantee,tests_used,rounds_used,status"
ESTIMATE_SUMMARY_HEADER = "estimator,n,d,delta,trials,guarantee_rate,zero_defectives,mean_tests,max_tests"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _header(path):
    with open(path, newline="") as fh:
        return fh.readline().rstrip("\r\n")


def test_simulate_single_trial_matches_direct_run(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--n", "512", "--d", "9", "--l", "3", "--alg", "adaptive-det",
                 "--trials", "1", "--seed", "4", "--out", str(out)]) == 0
    (rec,) = _rows(out)
    rng = make_rng(4, 0)
    oracle = TestOracle(512, random_hidden_set(512, 9, rng))
    detect_adaptive_det(oracle, 3)
    assert int(rec["tests_used"]) == oracle.tests_used
    assert rec["status"] == "found" and rec["hits"] == "3"


def test_simulate_schema_and_bound_columns(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--n", "1024", "--d", "16", "--l", "4", "--alg", "adaptive-det",
                 "--trials", "40", "--seed", "1", "--out", str(out)]) == 0
    assert _header(out) == RECORD_HEADER
    summary_path = tmp_path / "sim.summary.csv"
    assert _header(summary_path) == SUMMARY_HEADER
    (s,) = _rows(summary_path)
    assert float(s["bound_upper"]) == 44 and float(s["bound_lower"]) == 24
    assert int(s["max_tests"]) <= float(s["bound_upper"])
    assert 0 <= float(s["wilson_low"]) <= float(s["success_rate"]) <= float(s["wilson_high"]) <= 1


def test_simulate_json_single_object(tmp_path):
    out = tmp_path / "sim.json"
    assert main(["simulate", "--n", "256", "--d", "4", "--l", "1", "--alg", "nonadaptive-rand",
                 "--trials", "3", "--seed", "2", "--format", "json", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert set(payload) == {"config", "records", "summary"}
    assert len(payload["records"]) == 3 and all(r["rounds_used"] == 1 for r in payload["records"])
    assert "wall_time" not in payload["records"][0]


def test_simulate_timing_column(tmp_path):
    out = tmp_path / "sim.csv"
    main(["simulate", "--n", "64", "--d", "2", "--l", "1", "--alg", "adaptive-det",
          "--trials", "2", "--seed", "0", "--timing", "--out", str(out)])
    assert _header(out) == RECORD_HEADER + ",wall_time"


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_simulate_rerun_identical(tmp_path, fmt):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.{fmt}"
        main(["simulate", "--n", "2048", "--d", "64", "--l", "2", "--alg", "adaptive-rand",
              "--trials", "20", "--seed", "9", "--format", fmt, "--out", str(out)])
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_jobs_do_not_change_output(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["simulate", "--n", "1024", "--d", "32", "--l", "2", "--alg", "nonadaptive-rand",
            "--trials", "12", "--seed", "3"]
    main(base + ["--out", str(a)])
    main(base + ["--jobs", "2", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_stdout_output(capsys):
    assert main(["simulate", "--n", "64", "--d", "2", "--l", "1", "--alg", "adaptive-det",
                 "--trials", "2", "--seed", "0"]) == 0
    text = capsys.readouterr().out
    assert text.startswith(RECORD_HEADER) and SUMMARY_HEADER in text


def test_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--n", "64", "--d", "2", "--l", "1", "--alg", "bogus", "--seed", "0"]) == 2
    assert main(["simulate", "--n", "64", "--d", "2", "--l", "1", "--alg", "adaptive-det"]) == 2  # no seed
    assert main(["simulate", "--n", "64", "--d", "2", "--l", "1", "--alg", "adaptive-det",
                 "--seed", "0", "--trials", "0"]) == 2
    bad = tmp_path / "missing" / "x.csv"
    assert main(["simulate", "--n", "64", "--d", "2", "--l", "1", "--alg", "adaptive-det",
                 "--seed", "0", "--out", str(bad)]) == 2


def test_sweep_empty_grid_writes_nothing(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--n", "1024", "--d", "", "--l", "1", "--alg", "adaptive-det",
                 "--seed", "0", "--out", str(out)]) == 2
    assert not out.exists()


def test_sweep_adaptive_envelope(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--n", "1024,4096", "--d", "32", "--l", "1,2,4,8", "--alg", "adaptive-det",
                 "--trials", "30", "--seed", "5", "--out", str(out)]) == 0
    assert _header(out) == SUMMARY_HEADER
    rows = _rows(out)
    assert len(rows) == 8
    for r in rows:
        assert int(r["max_tests"]) <= float(r["bound_upper"])


def test_sweep_nonadaptive_decreasing_in_d(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--n", "65536", "--d", "128,512,2048,8192", "--l", "2", "--alg", "nonadaptive-rand",
                 "--trials", "10", "--seed", "6", "--out", str(out)]) == 0
    means = [float(r["mean_tests"]) for r in _rows(out)]
    assert all(a > b for a, b in zip(means, means[1:]))


def test_genmatrix_verify_roundtrip(tmp_path, capsys):
    passes = 0
    for seed in range(10):
        path = tmp_path / f"m{seed}.txt"
        assert main(["genmatrix", "--n", "30", "--r", "6", "--s", "4", "--seed", str(seed), "--out", str(path)]) == 0
        code = main(["verify-matrix", str(path), "--r", "6", "--s", "4"])
        passes += code == 0
        assert code in (0, 1)
    assert passes >= 9
    assert "PASS r=6 s=4" in capsys.readouterr().out


def test_verify_corrupted_matrix_reports_witness(tmp_path, capsys):
    path = tmp_path / "eye.txt"
    rows = ["".join("1" if i == j else "0" for j in range(5)) for i in range(5)]
    rows[0] = "11000"  # one flipped bit
    path.write_text("5 5\n" + "\n".join(rows) + "\n")
    assert main(["verify-matrix", str(path), "--r", "3", "--s", "3"]) == 1
    out = capsys.readouterr().out
    assert out.startswith("FAIL") and "witness 1 2" in out


def test_verify_malformed_file(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("2 3\n010\n0110\n")
    assert main(["verify-matrix", str(path), "--r", "2", "--s", "1"]) == 3
    assert "line 3" in capsys.readouterr().err


def test_verify_infeasible_and_sampled(tmp_path):
    path = tmp_path / "m.txt"
    main(["genmatrix", "--n", "200", "--r", "8", "--s", "4", "--seed", "1", "--out", str(path)])
    assert main(["verify-matrix", str(path), "--r", "8", "--s", "4"]) == 3
    assert main(["verify-matrix", str(path), "--r", "8", "--s", "4", "--samples", "2000", "--seed", "2"]) == 0


def test_genmatrix_detectone(tmp_path):
    path = tmp_path / "d1.txt"
    assert main(["genmatrix", "--kind", "detectone", "--n", "6", "--out", str(path)]) == 0
    assert path.read_text() == "4 6\n110100\n101010\n011001\n000111\n"


def test_genmatrix_requires_r_and_s(tmp_path):
    assert main(["genmatrix", "--n", "30", "--out", str(tmp_path / "x")]) == 2


def test_estimate_coarse_guarantee(tmp_path):
    out = tmp_path / "est.csv"
    assert main(["estimate", "--n", str(2**20), "--d", str(2**10), "--delta", "0.2", "--estimator", "coarse",
                 "--trials", "200", "--seed", "1", "--out", str(out)]) == 0
    assert _header(out) == ESTIMATE_HEADER
    assert _header(tmp_path / "est.summary.csv") == ESTIMATE_SUMMARY_HEADER
    (s,) = _rows(tmp_path / "est.summary.csv")
    assert float(s["guarantee_rate"]) >= 0.8


def test_estimate_zero_defectives_status(tmp_path):
    out = tmp_path / "est.csv"
    assert main(["estimate", "--n", "1024", "--d", "0", "--estimator", "factor2",
                 "--trials", "3", "--seed", "1", "--out", str(out)]) == 0
    assert {r["status"] for r in _rows(out)} == {"zero-defectives"}
    assert all(r["D"] == "" for r in _rows(out))


def test_estimate_factor2_tests_track_min_d_nd(tmp_path):
    out = tmp_path / "est.json"
    means = {}
    for d in (4, 1024, 2**18):
        main(["estimate", "--n", str(2**20), "--d", str(d), "--delta", "0.2", "--estimator", "factor2",
              "--trials", "3", "--seed", "2", "--format", "json", "--out", str(out)])
        means[d] = json.loads(out.read_text())["summary"][0]["mean_tests"]
    assert means[1024] > means[4] and means[1024] > means[2**18]


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "grouptest.cli", "simulate", "--n", "64", "--d", "2", "--l", "1",
         "--alg", "adaptive-det", "--trials", "1", "--seed", "0"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and proc.stdout.startswith(RECORD_HEADER)
    proc = subprocess.run([sys.executable, "-m", "grouptest.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
