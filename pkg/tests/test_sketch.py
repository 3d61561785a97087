import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distequiv.core import DiscreteDistribution, Policy, TabularMDP, random_mdp
from distequiv.distdp import CategoricalGrid, ReturnFunction, distributional_backup, return_distribution
from distequiv.envs import ENV_NAMES, EnvSpec, build_env, fig1_counterexample
from distequiv.sketch import (
    ImputationSpec,
    SketchSpec,
    apply_sketch,
    apply_sketch_rows,
    impute,
    moment_backup,
    sf_dp,
    stats_from_dict,
    stats_to_dict,
)

RISKY = Policy.deterministic([1], 2)
M2 = SketchSpec.moments(2)


def test_apply_sketch_examples():
    assert apply_sketch(M2, DiscreteDistribution.dirac(3.0)).tolist() == [3.0, 9.0]
    d = DiscreteDistribution([-1.0, 1.0], [0.5, 0.5])
    assert apply_sketch(SketchSpec.mean_variance(), d).tolist() == [0.0, 1.0]
    grid = CategoricalGrid(-4, 4, 401)
    eta = return_distribution(fig1_counterexample(), RISKY, grid)[0]
    mu1, mu2 = apply_sketch(M2, eta)
    assert abs(mu1) <= 0.02 and abs(mu2 - 4 / 3) <= 0.02


def test_impute_examples():
    d = impute(ImputationSpec("two_point"), M2, [0.0, 1.0])
    assert d.atoms.tolist() == [-1.0, 1.0] and d.probs.tolist() == [0.5, 0.5]
    d = impute(ImputationSpec("two_point"), M2, [3.0, 9.0])
    assert d.atoms.tolist() == [3.0]
    with pytest.raises(ValueError):
        impute(ImputationSpec(), M2, [1.0, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 4), st.sampled_from(["two_point", "normal_clipped"]),
       st.sampled_from(["moments", "mean_variance"]))
def test_imputation_round_trip(mu, var, kind, sketch_kind):
    sketch = M2 if sketch_kind == "moments" else SketchSpec.mean_variance()
    s = sketch.from_moments(np.array([mu, var + mu * mu]))
    back = apply_sketch(sketch, impute(ImputationSpec(kind), sketch, s))
    assert np.max(np.abs(back - s)) <= 1e-10


def test_moment_backup_examples():
    t = np.ones((2, 1, 2)) / 2
    zero = TabularMDP(t, [[DiscreteDistribution.dirac(0.0)]] * 2, 0.9, 1.0)
    assert np.allclose(moment_backup(zero, Policy.uniform(2, 1), np.zeros((2, 2)), 2), 0)
    out = moment_backup(fig1_counterexample(), RISKY, np.zeros((1, 2)), 2)
    assert out.tolist() == [[0.0, 1.0]]
    with pytest.raises(ValueError):
        moment_backup(zero, Policy.uniform(2, 1), np.zeros((2, 3)), 3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_bellman_closedness_commutation(seed):
    mdp = random_mdp(4, 2, seed)
    grid = CategoricalGrid.for_mdp(mdp, 201)
    rng = np.random.default_rng(seed)
    pi = Policy(rng.dirichlet(np.ones(2), size=4))
    eta = ReturnFunction(grid, rng.dirichlet(np.full(201, 0.1), size=4))
    lhs = apply_sketch_rows(M2, distributional_backup(mdp, pi, eta))
    rhs = moment_backup(mdp, pi, apply_sketch_rows(M2, eta), 2)
    assert np.max(np.abs(lhs - rhs)) <= 2 * grid.spacing


def test_verbatim_recursion_breaks_commutation():
    worst = 0.0
    for seed in range(5):
        mdp = random_mdp(4, 2, seed)
        grid = CategoricalGrid.for_mdp(mdp, 201)
        rng = np.random.default_rng(seed)
        pi = Policy.uniform(4, 2)
        eta = ReturnFunction(grid, rng.dirichlet(np.full(201, 0.1), size=4))
        lhs = apply_sketch_rows(M2, distributional_backup(mdp, pi, eta))
        rhs = moment_backup(mdp, pi, apply_sketch_rows(M2, eta), 2, verbatim=True)
        worst = max(worst, np.max(np.abs(lhs - rhs)) / grid.spacing)
    assert worst > 2.0


def test_sf_dp_examples():
    one = TabularMDP(np.ones((1, 1, 1)), [[DiscreteDistribution.dirac(1.0)]], 0.5, 1.0)
    assert np.allclose(sf_dp(one, Policy.uniform(1, 1), tol=1e-12), [[2.0, 4.0]], atol=1e-10)
    assert np.allclose(sf_dp(fig1_counterexample(), RISKY, tol=1e-12), [[0.0, 4 / 3]], atol=1e-6)


def test_sf_dp_modes_agree():
    for seed in range(10):
        mdp = random_mdp(4, 2, seed)
        pi = Policy(np.random.default_rng(seed).dirichlet(np.ones(2), size=4))
        a = sf_dp(mdp, pi, M2, mode="closed_form", tol=1e-12)
        b = sf_dp(mdp, pi, M2, ImputationSpec("two_point"), mode="impute_backup", tol=1e-12)
        assert np.max(np.abs(a - b)) <= 1e-8


def test_sf_dp_matches_distributions_on_envs():
    for name in ENV_NAMES:
        env = build_env(EnvSpec(name))
        grid = CategoricalGrid(*env.return_bounds, 401)
        pi = Policy.uniform(env.mdp.n_states, env.mdp.n_actions)
        s = sf_dp(env.mdp, pi, tol=1e-10)
        eta = return_distribution(env.mdp, pi, grid, check_bounds=False)
        assert np.max(np.abs(apply_sketch_rows(M2, eta) - s)) <= 2 * grid.spacing, name


def test_stats_serialization_round_trip():
    values = np.arange(6.0).reshape(3, 2)
    sketch, back = stats_from_dict(stats_to_dict(M2, values))
    assert sketch == M2 and np.array_equal(back, values)
