import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distequiv.core import (
    DiscreteDistribution,
    Policy,
    TabularMDP,
    default_horizon,
    enumerate_deterministic_policies,
    make_rng,
    random_mdp,
    sample_returns,
    sample_trajectory,
    validate_mdp,
)
from distequiv.envs import fig1_counterexample


def one_state_mdp(reward=1.0, gamma=0.5):
    return TabularMDP(np.ones((1, 1, 1)), [[DiscreteDistribution.dirac(reward)]], gamma, abs(reward) or 1.0)


def test_distribution_validation():
    with pytest.raises(ValueError):
        DiscreteDistribution([1.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        DiscreteDistribution([0.0, 1.0], [0.5, 0.6])
    d = DiscreteDistribution.from_unsorted([1.0, -1.0, 1.0], [0.25, 0.5, 0.25])
    assert d.atoms.tolist() == [-1.0, 1.0]
    assert d.probs.tolist() == [0.5, 0.5]
    assert d.mean() == 0.0 and d.variance() == 1.0


def test_validate_well_formed():
    mdp = random_mdp(2, 2, 0)
    assert validate_mdp(mdp) == []


def test_validate_bad_row():
    t = np.full((2, 1, 2), 0.5)
    t[1, 0] = [0.5, 0.4]
    mdp = TabularMDP(t, [[DiscreteDistribution.dirac(0.0)]] * 2, 0.9, 1.0)
    problems = validate_mdp(mdp)
    assert len(problems) == 1 and "state=1, action=0" in problems[0]


def test_validate_reward_bound():
    t = np.ones((1, 1, 1))
    mdp = TabularMDP(t, [[DiscreteDistribution.dirac(5.0)]], 0.9, 1.0)
    problems = validate_mdp(mdp)
    assert len(problems) == 1 and "r_max" in problems[0]


def test_geometric_return():
    traj = sample_trajectory(one_state_mdp(), Policy.uniform(1, 1), 0, 20, 0)
    assert traj.discounted_return == pytest.approx(sum(0.5**t for t in range(20)), abs=1e-12)
    assert len(traj.steps) == 20


def test_fig1_safe_action_returns_zero():
    mdp = fig1_counterexample()
    for seed in range(5):
        traj = sample_trajectory(mdp, Policy.deterministic([0], 2), 0, 30, seed)
        assert traj.discounted_return == 0.0
        assert all(r == 0.0 for _, _, r, _ in traj.steps)


def test_fig1_risky_action_monte_carlo():
    mdp = fig1_counterexample()
    g = sample_returns(mdp, Policy.deterministic([1], 2), 0, 40, 100_000, 1)
    assert abs(g.mean()) <= 0.02
    assert g.min() < -1.99 and g.max() > 1.99


def test_start_state_out_of_range():
    with pytest.raises(ValueError):
        sample_trajectory(one_state_mdp(), Policy.uniform(1, 1), 3, 5, 0)


def test_default_horizon_bounds_truncation():
    h = default_horizon(0.9, 1.0)
    assert 0.9**h * 1.0 / 0.1 <= 1e-6


def test_rng_reproducible_and_list_seeds():
    assert make_rng([1, 2, 3]).random() == make_rng([1, 2, 3]).random()
    assert make_rng([1, 2, 3]).random() != make_rng([1, 2, 4]).random()


def test_enumerate_policies_count():
    pols = list(enumerate_deterministic_policies(3, 2))
    assert len(pols) == 8 and all(p.is_deterministic() for p in pols)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 50))
def test_trajectory_bitwise_reproducible(seed, horizon):
    mdp = random_mdp(3, 2, seed % 97)
    pi = Policy.uniform(3, 2)
    a = sample_trajectory(mdp, pi, 0, horizon, seed)
    b = sample_trajectory(mdp, pi, 0, horizon, seed)
    assert a == b


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_truncation_bound(seed, horizon):
    mdp = random_mdp(3, 2, seed)
    pi = Policy.uniform(3, 2)
    short = sample_trajectory(mdp, pi, 0, horizon, seed).discounted_return
    long = sample_trajectory(mdp, pi, 0, horizon + 300, seed).discounted_return
    assert abs(long - short) <= mdp.gamma**horizon * mdp.r_max / (1 - mdp.gamma) + 1e-12
