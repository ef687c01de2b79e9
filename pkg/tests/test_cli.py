"""Command-line interface: exit codes, artifacts, determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from sisimex.cli import main
from sisimex.io import save_dataset
from sisimex.mc import DgpSpec, generate


@pytest.fixture()
def data_csv(tmp_path):
    data, _ = generate(DgpSpec(n=40, sigma_u=0.3), 8)
    path = tmp_path / "data.csv"
    save_dataset(data, path)
    return str(path)


def _fit_args(data_csv, out, extra=()):
    return [
        "fit", "--data", data_csv, "--sigma-u", "0.3,0", "--seed", "7",
        "--b-reps", "2", "--lambda-count", "3", "--out", str(out), *extra,
    ]


def test_fit_json_artifact(data_csv, tmp_path):
    out = tmp_path / "fit.json"
    assert main(_fit_args(data_csv, out)) == 0
    payload = json.loads(out.read_text())
    assert len(payload["beta_simex"]) == 2
    assert len(payload["beta_naive"]) == 2
    assert payload["config"]["seed"] == 7
    assert payload["config"]["bandwidths"]["method"] == "rt"
    assert len(payload["profile"]) == 2
    assert len(payload["profile"][0]) == 3
    norm = float(np.linalg.norm(payload["beta_simex"]))
    assert abs(norm - 1.0) <= 1e-9


def test_fit_rerun_is_byte_identical(data_csv, tmp_path):
    out = tmp_path / "fit.json"
    assert main(_fit_args(data_csv, out)) == 0
    first = out.read_bytes()
    assert main(_fit_args(data_csv, out)) == 0
    assert out.read_bytes() == first


def test_fit_csv_artifact(data_csv, tmp_path):
    out = tmp_path / "fit.csv"
    assert main(_fit_args(data_csv, out)) == 0
    text = out.read_text()
    assert text.startswith("# config: ")
    assert "series,lambda,component,value" in text
    # extension steers the format unless --format overrides it
    out2 = tmp_path / "fit2.json"
    assert main(_fit_args(data_csv, out2, ("--format", "csv"))) == 0
    assert out2.read_text().startswith("# config: ")


def test_fit_manual_bandwidths(data_csv, tmp_path):
    out = tmp_path / "fit.json"
    args = _fit_args(data_csv, out, ("--h", "0.5", "--h1", "0.6", "--h2", "0.6"))
    assert main(args) == 0
    payload = json.loads(out.read_text())
    assert payload["config"]["bandwidths"]["method"] == "manual"
    assert payload["config"]["bandwidths"]["h"] == 0.5
    # an incomplete triple is a configuration error
    bad = _fit_args(data_csv, out, ("--h", "0.5"))
    assert main(bad) == 2


def test_exit_code_config_error(data_csv, tmp_path, capsys):
    out = tmp_path / "x.json"
    # no noise specification at all
    code = main(["fit", "--data", data_csv, "--seed", "1", "--out", str(out)])
    assert code == 2
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "config"
    # wrong sigma-u arity
    code = main(["fit", "--data", data_csv, "--sigma-u", "0.3", "--seed",
                 "1", "--out", str(out)])
    assert code == 2


def test_exit_code_data_error(tmp_path, capsys):
    out = tmp_path / "x.json"
    code = main(["fit", "--data", str(tmp_path / "missing.csv"),
                 "--sigma-u", "0.3,0", "--seed", "1", "--out", str(out)])
    assert code == 3
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "data"


def test_exit_code_estimation_error(data_csv, tmp_path, capsys):
    out = tmp_path / "x.json"
    args = _fit_args(data_csv, out,
                     ("--h", "1e-9", "--h1", "1e-9", "--h2", "1e-9"))
    assert main(args) == 4
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "estimation"
    assert not out.exists()


def test_link_command(data_csv, tmp_path):
    out = tmp_path / "link.json"
    args = [
        "link", "--data", data_csv, "--sigma-u", "0.3,0", "--seed", "7",
        "--b-reps", "2", "--lambda-count", "3", "--grid=-1.0,0.0,1.0",
        "--out", str(out),
    ]
    assert main(args) == 0
    payload = json.loads(out.read_text())
    assert payload["config"]["grid"] == [-1.0, 0.0, 1.0]
    assert len(payload["t0"]) + len(payload["excluded"]) == 3
    assert len(payload["g_simex"]) == len(payload["t0"])


def test_mc_command_csv(tmp_path):
    out = tmp_path / "mc.csv"
    args = [
        "mc", "--cells", "40:0.3", "--reps", "2", "--seed", "5",
        "--b-reps", "2", "--lambda-count", "3", "--out", str(out),
    ]
    assert main(args) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    assert lines[1] == "n,sigma_u,method,component,bias,sd,mc_se,reps,failed_reps"
    body = [line.split(",") for line in lines[2:] if line]
    assert len(body) == 4  # 2 methods x 2 components
    assert {row[2] for row in body} == {"simex", "naive"}
    assert main(["mc", "--cells", "40:bad", "--reps", "2", "--seed", "1",
                 "--out", str(out)]) == 2


def test_cv_command(data_csv, tmp_path):
    out = tmp_path / "cv.json"
    args = [
        "cv", "--data", data_csv, "--sigma-u", "0.3,0", "--seed", "3",
        "--b-reps", "2", "--lambda-count", "3",
        "--cv-candidates", "0.5,0.8", "--cv-folds", "2", "--out", str(out),
    ]
    assert main(args) == 0
    payload = json.loads(out.read_text())
    assert payload["h_opt"] in (0.5, 0.8)
    assert len(payload["scores"]) == 2
    assert payload["config"]["folds"] == 2


def test_module_entry_point(data_csv, tmp_path):
    out = tmp_path / "fit.json"
    cmd = [sys.executable, "-m", "sisimex", *_fit_args(data_csv, out)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["config"]["seed"] == 7
