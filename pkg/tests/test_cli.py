import json

import pytest

from distequiv.cli import main


def write_config(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"env": "fig1_counterexample", "n_seeds": 2, "n_eval_trajectories": 100, **kw}))
    return str(path)


def test_experiment_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    for run in ("a", "b"):
        assert main(["experiment", "--config", cfg, "--seed", "3", "--out", str(tmp_path / run)]) == 0
    for name in ("results.tsv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["config"]["seed"] == 3


def test_plan_learn_eval_chain(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["learn-model", "--config", cfg, "--regime", "psi2", "--out", str(tmp_path / "m")]) == 0
    model = tmp_path / "m" / "model.json"
    assert json.loads(model.read_text())["provenance"]["sketch"]
    assert main(["plan", "--config", cfg, "--model", str(model), "--out", str(tmp_path / "p")]) == 0
    plan = json.loads((tmp_path / "p" / "plan.json").read_text())
    assert plan["actions"] == [0]
    assert main(["eval", "--config", cfg, "--policy", str(tmp_path / "p" / "plan.json"), "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "eval.json").read_text())["empirical_risk"] == 0.0


def test_export_env(tmp_path):
    assert main(["export-env", "--env", "windy_cliffs", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "mdp.json").read_text())["n_states"] == 49
    assert json.loads((tmp_path / "env.json").read_text())["name"] == "windy_cliffs"


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["plan", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["experiment", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["experiment", "--config", write_config(tmp_path, n_seeds=0), "--out", str(tmp_path)]) == 2
    assert main(["plan", "--env", "fig1_counterexample"]) == 2
    assert "error" in capsys.readouterr().err


def test_check_exit_codes(tmp_path, monkeypatch):
    import distequiv.properties as props

    monkeypatch.setattr(props, "_REGISTRY", [r for r in props._REGISTRY if r[0] == "projection_mass_mean"])
    assert main(["check", "--profile", "fast", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "check.json").read_text())["all_passed"] is True
    assert main(["check", "--mutation", "projection_no_clip"]) == 1


@pytest.mark.parametrize("n", [2, 8])
def test_check_acceptance_subset(n, capsys):
    assert main(["check", "--acceptance", str(n)]) == 0
    assert "[PASS]" in capsys.readouterr().out
