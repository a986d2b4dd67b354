"""Command-line surface: outputs, reproducibility, exit codes."""

import json

import pytest

from exactsens.cli import main

GIRLS_CSV = "# pre-K care x math proficiency\n12,3,0\n18,12,3\n17,25,4\n"


def run(argv):
    return main(argv)


@pytest.fixture
def girls_csv(tmp_path):
    p = tmp_path / "girls.csv"
    p.write_text(GIRLS_CSV)
    return str(p)


def test_analyze_worst_case_grid(girls_csv, tmp_path):
    out = tmp_path / "out.csv"
    summary = tmp_path / "out.json"
    code = run([
        "analyze", girls_csv,
        "--test", "ordinal", "--alpha", "0,0.25,1.5", "--beta", "0,1,1.5",
        "--delta", "0,1,1", "--Gamma-grid", "1,2,3",
        "--out", str(out), "--summary", str(summary),
    ])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("# exactsens ")  # config echo + version
    assert lines[1] == "gamma,Gamma,worst_case_p,argmax_ubar,candidates_scanned"
    ps = [float(line.split(",")[2]) for line in lines[2:]]
    assert [round(p, 3) for p in ps] == [0.006, 0.028, 0.054]
    meta = json.loads(summary.read_text())
    assert meta["command"] == "analyze" and "version" in meta


def test_analyze_fixed_ubar_mode(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("4,6,0\n1,3,6\n")
    out = tmp_path / "o.csv"
    code = run([
        "analyze", str(p),
        "--test", "ordinal", "--alpha", "0,1", "--beta", "0,1,2",
        "--delta", "0,1", "--gamma-grid", "1",
        "--fixed-ubar", "0,1,6", "--out", str(out),
    ])
    assert code == 0
    val = float(out.read_text().strip().splitlines()[2].split(",")[2])
    assert round(val, 2) == 0.05


def test_analyze_gamma_grid_one_is_randomization(girls_csv, tmp_path):
    out = tmp_path / "o.csv"
    code = run([
        "analyze", girls_csv,
        "--test", "ordinal", "--alpha", "0,0.25,1.5", "--beta", "0,1,1.5",
        "--delta", "0,1,1", "--Gamma-grid", "1", "--out", str(out),
    ])
    assert code == 0


def test_byte_identical_reruns(girls_csv, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        code = run([
            "analyze", girls_csv,
            "--test", "ordinal", "--alpha", "0,0.25,1.5", "--beta", "0,1,1.5",
            "--delta", "0,1,1", "--Gamma-grid", "1,2", "--out", str(out),
        ])
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_malformed_input_exits_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\nx,4\n")
    code = run(["analyze", str(bad), "--test", "chi2", "--delta", "0,1"])
    assert code == 2
    code = run(["analyze", str(tmp_path / "missing.csv"), "--test", "chi2",
                "--delta", "0,1"])
    assert code == 2


def test_model_family_mismatch_exits_3(girls_csv):
    # dose model with a permutation-invariant scan is refused
    code = run([
        "analyze", girls_csv, "--test", "chi2", "--phi", "1,2,3",
        "--gamma-grid", "0.5",
    ])
    assert code == 3


def test_stratified_command(tmp_path):
    doc = {
        "strata": [
            {"counts": [[12, 3, 0], [18, 12, 3], [17, 25, 4]],
             "alpha": [0, 0.25, 1.5], "beta": [0, 1, 1.5]},
            {"counts": [[10, 8, 1], [29, 11, 3], [20, 24, 6]],
             "alpha": [0, 0.25, 1.5], "beta": [0, 1, 1.5]},
        ],
        "gamma": 0.0,
        "delta": [0, 1, 1],
        "tau": 0.2,
    }
    inp = tmp_path / "study.json"
    inp.write_text(json.dumps(doc))
    out = tmp_path / "out.csv"
    code = run([
        "stratified", str(inp), "--Gamma-grid", "1", "--iterations", "50000",
        "--out", str(out),
    ])
    assert code == 0
    meta, header, row = out.read_text().strip().splitlines()
    cells = row.split(",")
    assert round(float(cells[2]), 3) == 0.006
    assert round(float(cells[3]), 3) == 0.013
    combined = float(cells[5])
    assert combined == pytest.approx(0.001, abs=0.0015)
    assert cells[6] == "1" and cells[7] == "1"


def test_stratified_malformed_exits_2(tmp_path):
    inp = tmp_path / "bad.json"
    inp.write_text(json.dumps({"strata": [{"counts": [[1, 2], [3, 4]]}]}))
    assert run(["stratified", str(inp)]) == 2


def test_sample_command(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("2,3,0\n0,1,4\n0,1,4\n")
    out = tmp_path / "trace.csv"
    code = run([
        "sample", str(p), "--test", "ordinal", "--alpha", "0,1,2",
        "--beta", "0,1,2", "--delta", "0,1,1", "--gamma-grid", "1",
        "--fixed-ubar", "0,0,3", "--iterations", "400", "--with-exact",
        "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("# exactsens ")
    assert lines[1] == "iteration,sis,snsis,permtreat,exact"
    assert len(lines) == 402
    exact = float(lines[2].split(",")[4])
    assert round(exact, 2) == 0.01


def test_power_command(tmp_path):
    cfg = {
        "lambda_z": [1.0, 0.0, 0.0],
        "lambda_r": [1.0, 0.2, 0.0],
        "w": 1.0,
        "alpha_star": [0.0, 1.7, 2.45],
        "beta_star": [0.0, 1.25, 1.4],
        "treatment_margins": [10, 10, 10],
        "delta": [0, 1, 1],
    }
    cp = tmp_path / "dgp.json"
    cp.write_text(json.dumps(cfg))
    out = tmp_path / "power.csv"
    code = run(["power", str(cp), "--gamma-grid", "0,1", "--iterations", "5",
                "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[1] == "test,gamma,Gamma,rate,mc_sigma"
    assert len(lines) == 4


def test_size_command(tmp_path):
    out = tmp_path / "size.csv"
    code = run([
        "size", "--rows", "20,5,10", "--cols", "10,25", "--delta", "0,0,1",
        "--alpha", "0,1,2", "--gamma-grid", "0.5", "--nominal", "0.05,0.5",
        "--iterations", "100", "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[1] == "method,nominal_alpha,rate,mc_sigma"
    assert len(lines) == 6  # metadata + header + 2 methods x 2 nominal levels


def test_oracle_check_command(capsys):
    code = run(["oracle-check", "--cases", "3", "--nmax", "7"])
    assert code == 0
    assert "oracle battery passed" in capsys.readouterr().out


def test_gamma_grid_validation(girls_csv):
    assert run([
        "analyze", girls_csv, "--test", "chi2", "--delta", "0,1,1",
        "--Gamma-grid", "0.5",
    ]) == 2
    assert run([
        "analyze", girls_csv, "--test", "ordinal", "--alpha", "0,1",
        "--beta", "0,1,2", "--delta", "0,1,1",
    ]) == 2

def test_nonmonotone_scores_fall_back_to_full_scan(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("2,1\n1,2\n1,1\n")
    out = tmp_path / "o.csv"
    code = run([
        "analyze", str(p), "--test", "ordinal", "--alpha", "0,2,1",
        "--beta", "0,1", "--delta", "0,1,1", "--gamma-grid", "0.5",
        "--out", str(out),
    ])
    assert code == 0
    row = out.read_text().strip().splitlines()[2]
    scanned = int(row.split(",")[4])
    assert scanned == 5 * 5  # full per-outcome-class grid, not N + 1
