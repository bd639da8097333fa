import json
import subprocess
import sys

import numpy as np
import pytest

from quarl.cli import resolve_config, run, substream_seed
from quarl.errors import ConfigError


def invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out = capsys.readouterr()
    doc = json.loads(out.out) if code == 0 and out.out else None
    err = json.loads(out.err) if code != 0 and out.err.startswith("{") else out.err
    return code, doc, err


def test_validate_example(capsys):
    code, doc, _ = invoke(capsys, "validate", "--model", "ising", "--dims", 4, "--h", 1, "--J", 1)
    assert code == 0 and doc["schema"] == 1 and doc["command"] == "validate"
    res = doc["result"]
    assert res["E0"] == pytest.approx(-5.226251859505502, abs=1e-10)
    assert res["residual"] < 1e-8 and res["n_states"] == 16


def test_solve_agrees_with_validate(capsys):
    _, v, _ = invoke(capsys, "validate", "--dims", 8)
    _, s, _ = invoke(capsys, "solve", "--dims", 8, "--formulation", "infinite")
    assert abs(s["result"]["E0"] - v["result"]["E0"]) < 1e-8


def test_solve_terminal_and_dump(capsys, tmp_path):
    dump = tmp_path / "u.csv"
    code, doc, _ = invoke(capsys, "solve", "--dims", 3, "--formulation", "terminal", "--dump-u", dump)
    assert code == 0 and doc["result"]["residual"] < 1e-8
    rows = dump.read_text().splitlines()
    assert rows[0] == "config,U" and len(rows) == 9


def test_xxz_sector_solve(capsys):
    code, doc, _ = invoke(capsys, "solve", "--model", "xxz", "--J", 1, "--J-perp", 1, "--dims", 4, "--sector", 2)
    assert code == 0 and doc["result"]["E0"] == pytest.approx(-4.0, abs=1e-10)


def test_usage_errors_exit_2(capsys, tmp_path):
    assert run(["validate", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert run(["frobnicate"]) == 2
    capsys.readouterr()
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dims": [4], "colour": "red"}))
    code, _, err = invoke(capsys, "validate", "--config", cfg)
    assert code == 2 and err["error"]["type"] == "ConfigError" and "colour" in err["error"]["message"]
    code, _, err = invoke(capsys, "validate", "--h", -1)
    assert code == 2


def test_runtime_error_exits_1(capsys):
    code, _, err = invoke(capsys, "solve", "--model", "xxz", "--dims", 4, "--formulation", "terminal", "--sector", 2)
    assert code == 1 and err["error"]["type"] == "TerminalUnreachable"


def test_missing_checkpoint_is_a_config_error(capsys):
    code, _, _ = invoke(capsys, "sample", "--dims", 4)
    assert code == 2


def test_identical_runs_are_byte_identical(tmp_path, capsys):
    path = tmp_path / "a.json"
    outputs = []
    for _ in range(2):
        assert run(["fk", "--dims", "4", "--n-traj", "2000", "--seed", "3", "--output", str(path)]) == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
    assert (tmp_path / "a.json.meta.json").exists()
    assert "elapsed" not in path.read_text()


def test_resolved_config_round_trip(tmp_path, capsys):
    first = tmp_path / "first.json"
    run(["fk", "--dims", "3", "--open", "--n-traj", "500", "--T", "0.5", "--seed", "11", "--output", str(first)])
    second = tmp_path / "second.json"
    run(["fk", "--config", str(first), "--output", str(second)])
    d1, d2 = json.loads(first.read_text()), json.loads(second.read_text())
    d1["config"]["output"] = d2["config"]["output"]
    assert d1 == d2


def test_flags_override_config_file(tmp_path):
    cfg = {"dims": [6], "h": 0.5}
    config = resolve_config(cfg, {"h": 2.0})
    assert config["dims"] == [6] and config["h"] == 2.0 and config["model"] == "ising"
    with pytest.raises(ConfigError):
        resolve_config({"episodes": "many"}, {})


def test_substreams_are_distinct():
    seeds = {substream_seed(0, n) for n in ("train", "sample", "fk")}
    assert len(seeds) == 3 and substream_seed(0, "fk") == substream_seed(0, "fk")


def test_optimal_rates_give_exact_estimate(capsys):
    code, doc, _ = invoke(capsys, "fk", "--dims", 4, "--rates", "optimal", "--n-traj", 200, "--s0", "++-+")
    res = doc["result"]
    assert code == 0 and res["estimate"] == pytest.approx(res["exact"], rel=1e-10)


def test_train_then_sample_and_fk(tmp_path, capsys):
    ckpt, log = tmp_path / "net.ckpt", tmp_path / "log.csv"
    code, doc, _ = invoke(
        capsys, "train", "--dims", 6, "--formulation", "infinite", "--episodes", 4, "--batch-size", 16,
        "--buffer-size", 32, "--channels", 4, "--hidden-layers", 1, "--validation-interval", 2,
        "--checkpoint", ckpt, "--log-csv", log,
    )
    assert code == 0 and np.isfinite(doc["result"]["final_energy"])
    assert len(log.read_text().splitlines()) == 5
    series = tmp_path / "series.csv"
    code, doc, _ = invoke(capsys, "sample", "--checkpoint", ckpt, "--proposal", "q1", "--steps", 100,
                          "--n-chains", 4, "--series-csv", series)
    stats = doc["result"]
    assert code == 0 and stats["proposal"] == "q1" and stats["n_samples"] == 400
    assert 0 <= stats["acceptance_rate"] <= 1
    assert series.read_text().splitlines()[0] == "step,chain,local_energy,potential"
    code, doc, _ = invoke(capsys, "fk", "--checkpoint", ckpt, "--rates", "checkpoint", "--n-traj", 500)
    assert code == 0 and np.isfinite(doc["result"]["estimate"])
    code, _, _ = invoke(capsys, "sample", "--checkpoint", ckpt, "--proposal", "wild")
    assert code == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "quarl", "validate", "--dims", "2", "--open"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["result"]["E0"] == pytest.approx(-np.sqrt(5), abs=1e-10)
