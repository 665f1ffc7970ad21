import json
import subprocess
import sys

import pytest

from asymvalley import cli
from asymvalley.exceptions import ConfigError
from asymvalley.valley_models import AsymmetrySpec, SeparableValleyND, build_valley_from_spec, save_valley, \
    valley_to_dict


def run(argv):
    return cli.main(argv)


@pytest.fixture
def valley_json(tmp_path):
    v = SeparableValleyND.embed([build_valley_from_spec(AsymmetrySpec(4, 0.1, 5.22, 2))], 3, 1)
    path = tmp_path / "valley.json"
    save_valley(path, valley_to_dict(v, seed=1))
    return str(path)


def strip_volatile(report):
    r = dict(report)
    r.pop("provenance")
    r.pop("files")
    r.pop("config")
    return r


def test_list_protocols_sorted(capsys):
    assert run(["list-protocols"]) == 0
    cat = json.loads(capsys.readouterr().out)
    names = [c["protocol"] for c in cat]
    assert names == sorted(names)
    assert {"report-constants", "theorem1-verify", "theorem2-verify", "simulate-1d", "train",
            "probe.slice", "probe.bn-compare"} <= set(names)
    assert all(c["doc"] and c["reproduces"] for c in cat)


def test_report_constants_top_level(tmp_path):
    out = tmp_path / "c.json"
    assert run(["report-constants", "--nu", "0.02", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["tau"] == 128 and rep["t_min"] == pytest.approx(21.95793281041682)
    assert {"version", "timestamp", "python", "numpy"} <= set(rep["provenance"])


def test_theorem1_exit_zero_and_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["theorem1-verify", "--out", str(a)]) == 0
    assert run(["theorem1-verify", "--out", str(b)]) == 0
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    assert strip_volatile(ra) == strip_volatile(rb)
    assert ra["verdicts"]["gap_ge_bound"] == "pass"


def test_theorem2_reports_round_length_failure(tmp_path):
    out = tmp_path / "t2.json"
    code = run(["theorem2-verify", "--rounds", "500", "--out", str(out)])
    rep = json.loads(out.read_text())
    assert rep["verdicts"]["mean_positive"] == "pass"
    # the closed-form T_max is exceeded by noisy rounds; the corrected one is not
    assert rep["verdicts"]["round_length_bound"] == "fail" and code == 1
    assert rep["metrics"]["supplementary"]["round_length_bound_corrected"]


def test_theorem2_noiseless_exit_zero(tmp_path):
    assert run(["theorem2-verify", "--nu", "0", "--rounds", "200", "--out", str(tmp_path / "r.json")]) == 0


def test_config_errors_exit_two_without_files(tmp_path):
    out = tmp_path / "never.json"
    cfgs = [{"protocol": "nope"}, {"protocol": "theorem1-verify", "params": {"bogus": 1}},
            {"protocol": "theorem1-verify", "seed": -1}, {"protocol": "theorem1-verify", "extra": 1},
            {"protocol": "theorem2-verify", "params": {"nu": 0.5}}]
    for i, cfg in enumerate(cfgs):
        cfg = {**cfg, "out": str(out)}
        path = tmp_path / f"cfg{i}.json"
        path.write_text(json.dumps(cfg))
        assert run(["run", "--config", str(path)]) == 2
    assert run(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert run(["theorem1-verify", "--mode", "fancy"]) == 2
    assert not out.exists()


def test_validate_config_casts():
    cfg = cli.validate_config({"protocol": "theorem1-verify", "params": {"c": 7}})
    assert cfg["params"]["c"] == [7.0] and cfg["seed"] == 0
    with pytest.raises(ConfigError):
        cli.validate_config({"protocol": "theorem1-verify", "params": {"k": "many"}})
    with pytest.raises(ConfigError):
        cli.validate_config([])


def test_run_config_seed_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"protocol": "simulate-1d", "seed": 1, "params": {"steps": 500}}))
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert run(["run", "--config", str(cfg), "--seed", "2", "--out", str(b)]) == 0
    ra = json.loads(a.with_suffix(".json").read_text())
    rb = json.loads(b.with_suffix(".json").read_text())
    assert ra["config"]["seed"] == 1 and rb["config"]["seed"] == 2
    assert ra["metrics"] != rb["metrics"]
    assert a.exists() and (tmp_path / "a_rounds.csv").exists()


def test_stdout_report_when_no_out(capsys):
    assert run(["theorem1-verify", "--k", "2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["metrics"]["gap"] == pytest.approx(0.4)


@pytest.mark.parametrize("probe,extra", [
    ("slice", ["--steps", "11"]),
    ("classify", ["--spec", "4", "0.1", "5.22", "2", "--direction", "axis:0"]),
    ("find-asym", ["--trials", "5"]),
    ("neighborhood", ["--spec", "4", "0.1", "5.22", "2", "--direction", "axis:0", "--radius", "1",
                      "--samples", "10"]),
    ("random-ray", ["--rays", "5"]),
])
def test_valley_probes(tmp_path, valley_json, probe, extra):
    out = tmp_path / probe
    assert run(["probe", probe, "--model", valley_json, "--out", str(out), *extra]) == 0
    rep = json.loads(out.with_suffix(".json").read_text())
    assert rep["protocol"] == f"probe.{probe}"
    assert all(v == "recorded-only" for v in rep["verdicts"].values())


def test_train_and_network_probes(tmp_path):
    tr = tmp_path / "run"
    assert run(["train", "--arch", "2-4-2", "--n-train", "32", "--n-test", "64", "--epochs", "4",
                "--swa-start", "2", "--checkpoint-every", "1", "--out", str(tr)]) == 0
    rep = json.loads((tr / "report.json").read_text())
    ckpts = sorted(str(p) for p in tr.glob("traj_*"))
    assert len(ckpts) == 4 and rep["verdicts"] == {"swa_test_le_sgd_test": "recorded-only"}
    final, swa = str(tr / "final"), str(tr / "swa")
    assert run(["probe", "interpolate", "--a", swa, "--b", final, "--steps", "5",
                "--out", str(tmp_path / "interp")]) == 0
    assert run(["probe", "bn-compare", "--model", final, "--n-seeds", "2",
                "--out", str(tmp_path / "bn")]) == 0
    assert run(["probe", "slice", "--model", final, "--direction", "bn", "--steps", "5",
                "--out", str(tmp_path / "sl")]) == 0
    assert run(["probe", "stability", "--checkpoints", *ckpts, "--steps", "5",
                "--out", str(tmp_path / "st")]) == 0
    st = json.loads((tmp_path / "st.json").read_text())
    assert st["metrics"]["n_checkpoints"] == 4


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "asymvalley.cli", "list-protocols"], capture_output=True, text=True)
    assert res.returncode == 0 and "probe.slice" in res.stdout
