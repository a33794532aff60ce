import json

import numpy as np
import pytest

from dopd.cli import main
from dopd.experiment import ExperimentConfig, load_config, run_experiment, time_to_threshold
from dopd.graphnet import GraphSequence, random_graph_sequence, save_graph_sequence


def _config(tmp_path, **kw):
    doc = dict(
        scenario="synthetic",
        problem={"n": 3, "a_center": "random", "a_noise": 0.1, "c": 0.3},
        graph={"q": 2, "base": "ring"},
        penalty={"name": "strict_smooth_max", "mu": 0.001},
        horizon=200,
        seed=7,
        output_dir=str(tmp_path / "run"),
    )
    doc.update(kw)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_config_round_trip(tmp_path):
    cfg = load_config(_config(tmp_path))
    assert ExperimentConfig.loads(cfg.dumps()) == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**cfg.to_dict(), "colour": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**cfg.to_dict(), "scenario": "traffic"})


def test_run_writes_artifacts(tmp_path, capsys):
    assert main(["run", "--config", str(_config(tmp_path))]) == 0
    out = tmp_path / "run"
    assert sorted(p.name for p in out.iterdir()) == ["config.json", "regret.csv", "summary.json", "trajectory.csv"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["horizon"] == 200
    assert summary["empirical"]["max_conservation_error"] <= 1e-10
    assert summary["comparator"]["converged"]
    assert "R(T)/T" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    cfg = load_config(_config(tmp_path))
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    for name in ("trajectory.csv", "regret.csv", "summary.json", "config.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    # overwriting an existing directory replaces it
    run_experiment(cfg, tmp_path / "a")
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_seed_changes_output(tmp_path):
    a = run_experiment(load_config(_config(tmp_path)), tmp_path / "a")
    b = run_experiment(load_config(_config(tmp_path, seed=8)), tmp_path / "b")
    assert (a / "trajectory.csv").read_bytes() != (b / "trajectory.csv").read_bytes()


def test_regret_reingest_matches(tmp_path, capsys):
    assert main(["run", "--config", str(_config(tmp_path))]) == 0
    capsys.readouterr()
    assert main(["regret", str(tmp_path / "run"), "--output", str(tmp_path / "again.csv")]) == 0
    a = np.loadtxt(tmp_path / "run" / "regret.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "again.csv", delimiter=",", skiprows=1)
    assert np.allclose(a[:, :7], b[:, :7], rtol=0, atol=1e-9)
    capsys.readouterr()
    comparator = tmp_path / "x.json"
    comparator.write_text(json.dumps({"x": [[0.3], [0.3], [0.3]]}))
    assert main(["regret", str(tmp_path / "run" / "trajectory.csv"), "--config",
                 str(tmp_path / "run" / "config.json"), "--comparator", str(comparator)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("t,cost,cost_star,R") and len(lines) == 201


def test_regret_needs_config_for_bare_csv(tmp_path):
    assert main(["run", "--config", str(_config(tmp_path))]) == 0
    assert main(["regret", str(tmp_path / "run" / "trajectory.csv")]) == 2


def test_validation_exit_codes(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    bad = _config(tmp_path, penalty={"name": "softplus"})
    assert main(["run", "--config", str(bad)]) == 2
    assert not (tmp_path / "run").exists()


def test_graph_failure_leaves_no_artifacts(tmp_path):
    seq = GraphSequence.explicit([np.eye(3)], eta=0.5)
    save_graph_sequence(seq, tmp_path / "g.json")
    cfg = _config(tmp_path, graph={"q": 1, "base": "file", "path": str(tmp_path / "g.json")})
    assert main(["run", "--config", str(cfg)]) == 2
    assert not (tmp_path / "run").exists()


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_runtime_abort_exit_code(tmp_path):
    cfg = _config(tmp_path, stepsize={"rule": "constant", "scale": 1e308},
                  problem={"n": 3, "a_center": 1.0, "c": 0.0})
    assert main(["run", "--config", str(cfg)]) == 3
    assert not (tmp_path / "run").exists()


def test_check_graph(tmp_path, capsys):
    save_graph_sequence(random_graph_sequence({"n": 5, "base": "ring"}, 0, 3), tmp_path / "ok.json")
    assert main(["check-graph", str(tmp_path / "ok.json"), "--horizon", "500"]) == 0
    save_graph_sequence(GraphSequence.explicit([np.eye(3)], eta=0.5, q=2), tmp_path / "bad.json")
    assert main(["check-graph", str(tmp_path / "bad.json"), "--horizon", "10"]) == 2
    out = capsys.readouterr().out
    assert "connectivity: FAIL at t=1" in out


def test_bounds_command(tmp_path, capsys):
    consts = tmp_path / "c.json"
    consts.write_text(json.dumps({"C_lambda": 1.0}))
    assert main(["bounds", "--eta", "0.1", "--n", "10", "--q", "1", "--constants-file", str(consts)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["A_N"] == pytest.approx(2001.0, abs=0.1)
    assert doc["B1"] == pytest.approx(200120, rel=1e-4)
    consts.write_text(json.dumps({"C_z": 1.0}))
    assert main(["bounds", "--eta", "0.1", "--n", "10", "--q", "1", "--constants-file", str(consts)]) == 2


def test_synthetic_preset(tmp_path, capsys):
    assert main(["preset", "synthetic", "--horizon", "100", "--output", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc["members"]) == {"N5"}
    combined = (tmp_path / "synthetic" / "combined.csv").read_text().splitlines()
    assert combined[0] == "t,R_avg_N5,Rc_avg_N5" and len(combined) == 101


def test_time_to_threshold():
    assert time_to_threshold([0.5, 0.2, 0.05, 0.01], 0.1) == 3
    assert time_to_threshold([0.05, 0.2, 0.05], 0.1) == 3
    assert time_to_threshold([0.01, 0.02], 0.1) == 1
    assert time_to_threshold([0.5, 0.2], 0.1) is None
