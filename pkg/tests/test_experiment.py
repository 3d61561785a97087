import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distequiv.core import RNG_ALGORITHM
from distequiv.experiment import (
    DEFAULTS,
    ExperimentConfig,
    aggregate,
    results_table,
    run_experiment,
    stream_seed,
)

FIG1 = {"env": "fig1_counterexample", "n_seeds": 3, "n_eval_trajectories": 400}


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"env": "fig1_counterexample", "regimes": []})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"env": "fig1_counterexample", "n_seeds": 0})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"env": "fig1_counterexample", "bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"regimes": ["pve"]})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"env": "fig1_counterexample", "planner": "mean_variance"})


def test_config_round_trip_and_defaults():
    cfg = ExperimentConfig.from_dict({"env": "windy_cliffs", "learn": {"iters": 10}, "regimes": ["psi2", "pve"]})
    assert cfg.regimes == ("pve", "psi2")
    assert cfg.learn["iters"] == 10 and cfg.learn["optimizer"] == DEFAULTS["learn"]["optimizer"]
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_streams_are_distinct():
    seeds = {tuple(stream_seed(0, i, s)) for i in range(3) for s in ("policies", "init", "data", "eval")}
    assert len(seeds) == 12


def test_fig1_experiment_values():
    summary = run_experiment(ExperimentConfig.from_dict({**FIG1, "regimes": ["pve", "psi2"]}))
    agg = summary["aggregates"]
    assert abs(agg["psi2/lowest"]["empirical_risk"]["mean"]) <= 0.05
    assert abs(agg["psi2/adversarial"]["empirical_risk"]["mean"]) <= 0.05
    assert abs(agg["pve/adversarial"]["empirical_risk"]["mean"] + 1.0) <= 0.05
    assert abs(agg["pve/adversarial"]["exact_risk"]["mean"] + 1.0) <= 0.02
    assert abs(agg["true/lowest"]["empirical_risk"]["mean"]) <= 1e-12


def test_results_are_self_describing(tmp_path):
    cfg = ExperimentConfig.from_dict(FIG1)
    summary = run_experiment(cfg, tmp_path)
    assert summary["rng"] == RNG_ALGORITHM
    assert summary["config"] == cfg.to_dict()
    assert summary["defaults"] == DEFAULTS
    assert "version" in summary and "grid" in summary
    tsv = (tmp_path / "results.tsv").read_text()
    assert "env=fig1_counterexample" in tsv
    n_rows = sum(1 for line in tsv.splitlines() if line and not line.startswith("#")) - 1
    assert n_rows == 2 * (1 + 3 * len(cfg.regimes))


def test_byte_identical_reruns(tmp_path):
    cfg = ExperimentConfig.from_dict({**FIG1, "seed": 4})
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("results.tsv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_different_seed_changes_results(tmp_path):
    a = run_experiment(ExperimentConfig.from_dict({**FIG1, "seed": 1}))
    b = run_experiment(ExperimentConfig.from_dict({**FIG1, "seed": 2}))
    assert results_table(ExperimentConfig.from_dict(FIG1), a["rows"]) != results_table(
        ExperimentConfig.from_dict(FIG1), b["rows"]
    )


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.randoms())
def test_aggregation_order_independent(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert aggregate(values) == aggregate(shuffled)


def test_aggregate_values():
    agg = aggregate([1.0, 2.0, 3.0])
    assert agg["mean"] == 2.0 and agg["std"] == 1.0
    assert agg["ci_high"] - agg["mean"] == pytest.approx(1.959963984540054 / math.sqrt(3))
    assert aggregate([5.0])["ci_low"] == 5.0
    assert np.isfinite(aggregate([0.0] * 4)["ci_high"])
