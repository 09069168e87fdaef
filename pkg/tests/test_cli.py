import json
import os

import pytest
import yaml

from triageq import build_experiment
from triageq.cli import main


@pytest.fixture()
def exp3_config(tmp_path):
    path = tmp_path / "exp3.yaml"
    path.write_text(yaml.safe_dump(build_experiment(3).spec.to_dict()))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_ok(exp3_config, capsys):
    code, out, err = run(["validate", exp3_config], capsys)
    assert code == 0
    assert "ok:" in out
    assert err == ""


def test_validate_reports_all_violations(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(
        yaml.safe_dump(
            {
                "groups": [
                    {"name": "a", "prob": 0.6, "nd_read_time_min": 10},
                    {"name": "b", "prob": 0.6, "nd_read_time_min": 10},
                ],
                "diseases": [],
                "ais": [],
                "arrival": {"rho": 1.4},
                "servers": 1,
            }
        )
    )
    code, out, err = run(["validate", str(cfg)], capsys)
    assert code == 1
    records = [json.loads(line) for line in err.strip().splitlines()]
    assert all(r["error"] == "validation" for r in records)
    messages = " ".join(r["message"] for r in records)
    assert "sum != 1" in messages and "rho" in messages


def test_unreadable_config(capsys, tmp_path):
    code, out, err = run(["validate", str(tmp_path / "missing.yaml")], capsys)
    assert code == 1
    record = json.loads(err.strip().splitlines()[0])
    assert record["error"] == "config"


def test_theory_csv_row_per_disease(exp3_config, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, _, _ = run(
        [
            "theory",
            "--config",
            exp3_config,
            "--discipline",
            "preemptive",
            "--protocol",
            "hierarchical",
            "--out",
            str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    lines = (out_dir / "theory.csv").read_text().splitlines()
    assert lines[0].startswith("scenario,discipline,protocol,method,rho,disease")
    assert len(lines) == 4  # header + LVO, SAH, SDH
    classes = (out_dir / "theory_classes.csv").read_text().splitlines()
    assert len(classes) == 4  # header + AI-LVO, AI-SDH, negative
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["tool"] == "triageq"
    assert {o["path"] for o in manifest["outputs"]} == {"theory.csv", "theory_classes.csv"}


def test_theory_unstable_exit_code(tmp_path, capsys):
    spec = build_experiment(3).spec.to_dict()
    spec["arrival"] = {"lambda_per_min": 0.1}  # rho = 3
    cfg = tmp_path / "unstable.yaml"
    cfg.write_text(yaml.safe_dump(spec))
    code, _, err = run(
        [
            "theory",
            "--config",
            str(cfg),
            "--discipline",
            "nonpreemptive",
            "--protocol",
            "priority",
        ],
        capsys,
    )
    assert code == 2
    record = json.loads(err.strip().splitlines()[0])
    assert record["error"] == "UnstableQueueError"


def test_probe_csv(exp3_config, tmp_path, capsys):
    out_dir = tmp_path / "probe"
    code, _, _ = run(["probe", "--config", exp3_config, "--out", str(out_dir)], capsys)
    assert code == 0
    lines = (out_dir / "probe.csv").read_text().splitlines()
    assert lines[0] == "protocol,quantity,label,component,value"
    quantities = {line.split(",")[1] for line in lines[1:]}
    assert {"p_positive", "p_negative", "composition", "posterior", "class_mass"} <= quantities


def test_simulate_csv_schema(exp3_config, tmp_path, capsys):
    out_dir = tmp_path / "sim"
    code, _, _ = run(
        [
            "simulate",
            "--config",
            exp3_config,
            "--discipline",
            "preemptive",
            "--protocol",
            "priority",
            "--trials",
            "3",
            "--patients",
            "800",
            "--seed",
            "5",
            "--threads",
            "1",
            "--out",
            str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    lines = (out_dir / "simulate.csv").read_text().splitlines()
    assert lines[0] == (
        "scenario,discipline,protocol,rho,disease,mean_wait_fifo,mean_wait_ai,"
        "delta,ci_lo,ci_hi,n"
    )
    assert len(lines) == 4


def test_simulate_writes_per_trial_csv(exp3_config, tmp_path, capsys):
    out_dir = tmp_path / "simtrials"
    code, _, _ = run(
        [
            "simulate",
            "--config",
            exp3_config,
            "--discipline",
            "nonpreemptive",
            "--protocol",
            "hierarchical",
            "--trials",
            "4",
            "--patients",
            "600",
            "--seed",
            "2",
            "--threads",
            "1",
            "--out",
            str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    lines = (out_dir / "simulate_trials.csv").read_text().splitlines()
    assert lines[0] == (
        "scenario,discipline,protocol,rho,trial,disease,mean_wait_fifo,"
        "mean_wait_ai,delta,n"
    )
    assert len(lines) == 1 + 4 * 3  # 4 trials x 3 diseases


def test_compare_end_to_end_agreement(exp3_config, tmp_path, capsys):
    # full desk-scale budget through the CLI: every subgroup with a delta of
    # at least 2 minutes agrees within |RE| <= 0.1
    out_dir = tmp_path / "e2e"
    code, _, _ = run(
        [
            "compare",
            "--config",
            exp3_config,
            "--rho",
            "0.8",
            "--trials",
            "100",
            "--patients",
            "10000",
            "--seed",
            "7",
            "--threads",
            "1",
            "--out",
            str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    lines = (out_dir / "agreement.csv").read_text().splitlines()
    header = lines[0].split(",")
    checked = 0
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        if abs(float(row["theory_delta_min"])) < 2.0:
            continue
        checked += 1
        assert row["flag"] == "ok"
        assert abs(float(row["re"])) <= 0.1, row
    assert checked >= 10


def test_compare_deterministic_output(exp3_config, tmp_path, capsys):
    args = [
        "compare",
        "--config",
        exp3_config,
        "--rho",
        "0.8",
        "--trials",
        "4",
        "--patients",
        "600",
        "--seed",
        "7",
    ]
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run(args + ["--threads", "1", "--out", str(out_a)], capsys)[0] == 0
    assert run(args + ["--threads", "2", "--out", str(out_b)], capsys)[0] == 0
    csv_a = (out_a / "agreement.csv").read_bytes()
    csv_b = (out_b / "agreement.csv").read_bytes()
    assert csv_a == csv_b


def test_outdir_from_environment(exp3_config, tmp_path, capsys, monkeypatch):
    env_dir = tmp_path / "envout"
    monkeypatch.setenv("TRIAGEQ_OUT", str(env_dir))
    code, _, _ = run(["probe", "--config", exp3_config], capsys)
    assert code == 0
    assert (env_dir / "probe.csv").exists()


def test_rho_override(exp3_config, tmp_path, capsys):
    out_dir = tmp_path / "rho"
    code, _, _ = run(
        [
            "theory",
            "--config",
            exp3_config,
            "--discipline",
            "preemptive",
            "--protocol",
            "priority",
            "--rho",
            "0.5",
            "--out",
            str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    line = (out_dir / "theory.csv").read_text().splitlines()[1]
    assert line.split(",")[4] == "0.5"


def test_experiment_subcommand_writes_per_config_files(tmp_path, capsys):
    out_dir = tmp_path / "exp"
    code, _, _ = run(
        [
            "experiment",
            "--id",
            "1",
            "--sweep",
            "traffic",
            "--configs",
            "preemptive:priority,nonpreemptive:priority",
            "--trials",
            "2",
            "--patients",
            "500",
            "--seed",
            "3",
            "--threads",
            "1",
            "--out",
            str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    names = sorted(os.listdir(out_dir))
    assert "agreement.csv" in names
    assert "exp1_traffic_preemptive_priority.csv" in names
    assert "exp1_traffic_nonpreemptive_priority.csv" in names
    assert "manifest.json" in names


def test_bad_configuration_token(exp3_config, capsys):
    code, _, err = run(
        [
            "compare",
            "--config",
            exp3_config,
            "--configs",
            "sideways:priority",
            "--trials",
            "1",
            "--patients",
            "100",
        ],
        capsys,
    )
    assert code == 1
    assert json.loads(err.strip().splitlines()[0])["error"] == "config"
