import numpy as np
import pytest

from distequiv.core import DiscreteDistribution, TabularMDP, enumerate_deterministic_policies, random_mdp
from distequiv.distdp import CategoricalGrid, return_distribution
from distequiv.envs import fig1_counterexample, pve_model_of_fig1
from distequiv.planning import cvar_greedy_vi, cvar_vi, mean_variance_vi, plan
from distequiv.risk import RiskSpec, risk_value, risk_values_on_grid
from distequiv.sketch import exact_moments


def neutral_optimum(mdp, margin=1e-3):
    """Enumerated risk-neutral optimum, or None when it is not unique."""
    pols = list(enumerate_deterministic_policies(mdp.n_states, mdp.n_actions))
    v = exact_moments(mdp, pols, 1)[..., 0]
    best = int(np.argmax(v.sum(axis=1)))
    totals = np.sort(v.sum(axis=1))
    if not np.all(v[best] >= v.max(axis=0) - 1e-12) or totals[-1] - totals[-2] < margin:
        return None
    return pols[best].greedy_actions()


def unique_instances(n, n_states=5, n_actions=3):
    out, seed = [], 0
    while len(out) < n:
        mdp = random_mdp(n_states, n_actions, [77, seed])
        seed += 1
        target = neutral_optimum(mdp)
        if target is not None:
            out.append((mdp, target))
    return out


def test_mean_variance_fig1():
    res = mean_variance_vi(fig1_counterexample(), 0.1)
    assert res.actions().tolist() == [0]
    assert res.values[0] == pytest.approx(0.0, abs=1e-8)
    model = mean_variance_vi(pve_model_of_fig1(), 0.1)
    assert model.actions().tolist() == [0]
    assert abs(model.action_values[0, 0] - model.action_values[0, 1]) <= 1e-10
    assert model.tied_actions(0).tolist() == [0, 1]


def test_mean_variance_small_lambda_is_risk_neutral():
    for mdp, target in unique_instances(10):
        assert np.array_equal(mean_variance_vi(mdp, 1e-12).actions(), target)


def test_cvar_vi_fig1():
    mdp = fig1_counterexample()
    grid = CategoricalGrid.for_mdp(mdp, 401)
    res = cvar_vi(mdp, 0.5, grid)
    assert res.actions().tolist() == [0]
    assert abs(res.values[0]) <= grid.spacing


def test_cvar_vi_level_one_is_risk_neutral():
    for mdp, target in unique_instances(10):
        grid = CategoricalGrid.for_mdp(mdp, 201)
        assert np.array_equal(cvar_vi(mdp, 1.0, grid).actions(), target)


def deterministic_chain():
    """0 -> {1, 2}; 1 and 2 each pick between two terminal lotteries; 3 is the sink."""
    t = np.zeros((4, 2, 4))
    t[0, 0, 1] = t[0, 1, 2] = 1.0
    t[1:, :, 3] = 1.0
    d = DiscreteDistribution
    reward = [
        [d.dirac(0.0), d.dirac(0.0)],
        [d.dirac(0.3), d([-1.0, 1.0], [0.3, 0.7])],
        [d([-0.2, 0.9], [0.5, 0.5]), d([-0.6, 0.6], [0.1, 0.9])],
        [d.dirac(0.0), d.dirac(0.0)],
    ]
    return TabularMDP(t, reward, 0.9, 1.0)


@pytest.mark.parametrize("tau", [0.2, 0.5, 0.9])
def test_cvar_vi_matches_enumeration(tau):
    mdp = deterministic_chain()
    grid = CategoricalGrid.for_mdp(mdp, 401)
    risk = RiskSpec.cvar(tau)
    best = max(
        risk_values_on_grid(risk, return_distribution(mdp, p, grid).probs, grid.atoms)[0]
        for p in enumerate_deterministic_policies(4, 2)
    )
    res = cvar_vi(mdp, tau, grid, n_budget=201)
    got = risk_values_on_grid(risk, return_distribution(mdp, res.policy, grid).probs, grid.atoms)[0]
    assert got >= best - grid.spacing
    assert abs(res.values[0] - got) <= grid.spacing


def test_cvar_greedy_fig1_and_model():
    grid = CategoricalGrid(-4, 4, 401)
    assert cvar_greedy_vi(fig1_counterexample(), 0.5, grid).actions().tolist() == [0]
    res = cvar_greedy_vi(pve_model_of_fig1(), 0.5, grid)
    assert res.actions().tolist() == [0]
    assert abs(res.action_values[0, 0] - res.action_values[0, 1]) <= 1e-10


def test_cvar_greedy_bandit():
    d = DiscreteDistribution
    reward = [
        [d.dirac(0.1), d([-1.0, 1.0], [0.2, 0.8])],
        [d.dirac(-0.5), d([-0.4, 1.0], [0.5, 0.5])],
        [d([-1.0, 1.0], [0.5, 0.5]), d.dirac(-0.1)],
    ]
    t = np.full((3, 2, 3), 1 / 3)
    mdp = TabularMDP(t, reward, 0.0, 1.0)
    grid = CategoricalGrid(-1, 1, 201)
    res = cvar_greedy_vi(mdp, 0.5, grid)
    direct = [int(np.argmax([risk_value(RiskSpec.cvar(0.5), r) for r in row])) for row in reward]
    assert res.actions().tolist() == direct


def test_planners_return_deterministic_policies():
    mdp = random_mdp(3, 2, 4)
    grid = CategoricalGrid.for_mdp(mdp, 101)
    for res in (mean_variance_vi(mdp, 0.5), cvar_vi(mdp, 0.5, grid, n_budget=33), cvar_greedy_vi(mdp, 0.5, grid)):
        assert res.policy.is_deterministic()


def test_plan_dispatch_errors():
    mdp = fig1_counterexample()
    with pytest.raises(ValueError):
        plan(mdp, "mean_variance", RiskSpec.cvar(0.5))
    with pytest.raises(ValueError):
        plan(mdp, "nope", RiskSpec.cvar(0.5))
    with pytest.raises(ValueError):
        mean_variance_vi(mdp, -1.0)
