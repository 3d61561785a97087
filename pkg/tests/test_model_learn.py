import numpy as np
import pytest

from distequiv.core import DiscreteDistribution, Policy, TabularMDP, random_mdp
from distequiv.envs import fig1_counterexample, pve_model_of_fig1
from distequiv.model_learn import (
    ApproxModel,
    Criterion,
    TransitionDataset,
    collect_dataset,
    equivalence_loss,
    expected_sample_based_loss,
    learn_model,
    membership_check,
    mle_model,
    sample_based_loss,
    sample_policies,
    true_statistics,
)
from distequiv.planning import mean_variance_vi
from distequiv.sketch import SketchSpec

M1, M2 = SketchSpec.moments(1), SketchSpec.moments(2)
RISKY = Policy.deterministic([1], 2)


def test_sample_policies():
    one = sample_policies(random_mdp(3, 1, 0), 1, 0)
    assert np.array_equal(one[0].action_probs, np.ones((3, 1)))
    mdp = random_mdp(3, 4, 0)
    many = sample_policies(mdp, 1000, 5).stack()
    stderr = np.sqrt(0.25 * 0.75 / 4 / 1000)  # Dirichlet(1,1,1,1) marginal variance is 3/80
    assert np.all(np.abs(many.mean(axis=0) - 0.25) <= 3 * np.sqrt(3 / 80 / 1000) + stderr)
    assert np.array_equal(sample_policies(mdp, 5, 9).stack(), sample_policies(mdp, 5, 9).stack())


def deterministic_mdp():
    t = np.zeros((3, 2, 3))
    t[0, 0, 1] = t[0, 1, 2] = t[1, :, 2] = t[2, :, 0] = 1.0
    d = DiscreteDistribution.dirac
    return TabularMDP(t, [[d(0.0), d(1.0)], [d(0.5), d(-0.5)], [d(0.0), d(0.0)]], 0.9, 1.0)


def test_mle_recovers_deterministic_mdp():
    mdp = deterministic_mdp()
    model = mle_model(mdp, collect_dataset(mdp, 3, 0), smoothing=0.0)
    assert np.array_equal(model.transition, mdp.transition)
    assert model.reward[0][1].atoms.tolist() == [1.0]


def test_mle_empty_dataset():
    mdp = deterministic_mdp()
    model = mle_model(mdp, TransitionDataset.from_tuples([]))
    assert np.allclose(model.transition, 1 / 3)
    assert all(r.atoms.tolist() == [0.0] for row in model.reward for r in row)


def test_mle_concentration():
    mdp = random_mdp(4, 2, 3)
    model = mle_model(mdp, collect_dataset(mdp, 10_000, 4))
    assert np.max(np.abs(model.transition - mdp.transition).sum(axis=2)) <= 0.05


def test_dataset_validation():
    with pytest.raises(ValueError):
        mle_model(deterministic_mdp(), TransitionDataset.from_tuples([(0, 5, 0.0, 1)]))


def test_zero_loss_for_true_model():
    mdp = random_mdp(4, 2, 0)
    pols = sample_policies(mdp, 5, 0)
    model = ApproxModel.from_mdp(mdp)
    for sketch in (M1, M2, SketchSpec.mean_variance()):
        stats = true_statistics(mdp, pols, sketch)
        for k in (1, 2, 3):
            for p in (1.0, 2.0):
                assert equivalence_loss(stats, model, pols, sketch, k, p) <= 1e-12


def test_fig1_losses():
    true, model = fig1_counterexample(), ApproxModel.from_mdp(pve_model_of_fig1())
    pols = [RISKY]
    assert equivalence_loss(true_statistics(true, pols, M1), model, pols, M1, 1, 2) <= 1e-15
    assert equivalence_loss(true_statistics(true, pols, M2), model, pols, M2, 1, 2) == pytest.approx(1.0, abs=1e-12)
    for k in range(1, 5):
        assert equivalence_loss(true_statistics(true, pols, M2), model, pols, M2, k, 2) > 0.1


def test_learn_value_equivalent_fig1():
    true = fig1_counterexample()
    pols = [Policy.deterministic([0], 2), RISKY, Policy.uniform(1, 2)]
    model = learn_model(true, pols, M1, iters=200, seed=0)
    assert model.provenance["final_loss"] <= 1e-8


def test_learn_second_moment_transfers_mean_variance_plan():
    mdp = random_mdp(4, 2, 12)
    pols = sample_policies(mdp, 50, 1)
    model = learn_model(mdp, pols, M2, seed=2, iters=3000)
    assert model.provenance["final_loss"] <= 1e-6
    assert np.array_equal(mean_variance_vi(model, 0.5).actions(), mean_variance_vi(mdp, 0.5).actions())


def test_learn_gd_optimizer_runs():
    mdp = random_mdp(3, 2, 1)
    pols = sample_policies(mdp, 5, 1)
    model = learn_model(mdp, pols, M2, optimizer="gd", step=0.05, iters=50, seed=0)
    first = equivalence_loss(true_statistics(mdp, pols, M2), learn_model(mdp, pols, M2, optimizer="gd", iters=1, seed=0), pols, M2)
    assert model.provenance["final_loss"] <= first


def rank_two_mdp(seed=0, n_states=5):
    rng = np.random.default_rng(seed)
    base = rng.dirichlet(np.ones(n_states), size=2)
    weights = rng.dirichlet(np.ones(2), size=(n_states, 2))
    mdp = random_mdp(n_states, 2, seed)
    return mdp.with_transition(weights @ base)


def test_low_rank_capacity_gap():
    mdp = rank_two_mdp()
    pols = sample_policies(mdp, 20, 0)
    full = learn_model(mdp, pols, M2, seed=0, iters=2000)
    low = learn_model(mdp, pols, M2, rank=1, seed=0, iters=2000)
    assert low.rank == 1
    assert low.provenance["final_loss"] > full.provenance["final_loss"]


def test_sample_based_loss_examples():
    mdp = deterministic_mdp()
    data = collect_dataset(mdp, 5, 0)
    stat = np.array([0.3, -1.0, 2.0])
    assert sample_based_loss(ApproxModel.from_mdp(mdp), data, stat, draws=10) == 0.0
    t = np.zeros((3, 2, 3))
    t[:, :, 0] = 1.0
    d = 1.7
    data = TransitionDataset.from_tuples([(0, 0, 0.0, 1), (1, 1, 0.0, 2), (2, 0, 0.0, 1)])
    model = ApproxModel.from_mdp(mdp.with_transition(t))
    assert sample_based_loss(model, data, np.array([d, 0.0, 0.0]), draws=3) == pytest.approx(d * d)
    with pytest.raises(ValueError):
        sample_based_loss(model, TransitionDataset.from_tuples([]), stat)


def test_sample_based_loss_matches_closed_form():
    mdp = random_mdp(4, 2, 8)
    model = ApproxModel.from_mdp(random_mdp(4, 2, 9).with_reward(mdp.reward))
    data = collect_dataset(mdp, 20, 1)
    stat = np.random.default_rng(0).normal(size=4)
    draws = 10_000
    exact = expected_sample_based_loss(model, data, stat)
    trans = model.transition[data.states, data.actions]
    sq = (stat[data.next_states][:, None] - stat[None, :]) ** 2
    per_row_var = np.sum(trans * sq**2, axis=1) - np.sum(trans * sq, axis=1) ** 2
    stderr = np.sqrt(per_row_var.sum() / draws) / len(data)
    assert abs(sample_based_loss(model, data, stat, draws=draws, seed=3) - exact) <= 3 * stderr


def test_membership_true_model_passes_everything():
    mdp = random_mdp(3, 2, 4)
    pols = sample_policies(mdp, 3, 0)
    for crit in (Criterion.dist(1), Criterion.dist(2), Criterion.dist_proper(), Criterion.psi(M2, 2), Criterion.psi_proper(M2)):
        rep = membership_check(mdp, mdp, pols, crit, 1e-12)
        assert rep.all_passed and rep.max_deviation <= 1e-12


def test_membership_fig1():
    true, model = fig1_counterexample(), pve_model_of_fig1()
    pols = [Policy.deterministic([0], 2), RISKY]
    assert membership_check(model, true, pols, Criterion.psi_proper(M1), 1e-8).all_passed
    rep = membership_check(model, true, pols, Criterion.psi_proper(M2), 1e-8)
    assert not rep.all_passed and rep.max_deviation == pytest.approx(4 / 3, abs=1e-6)


def test_membership_k_nesting():
    mdp = random_mdp(4, 2, 6)
    pols = sample_policies(mdp, 20, 0)
    model = learn_model(mdp, pols, M2, seed=0, iters=3000)
    tol = 1e-6
    if membership_check(model, mdp, pols, Criterion.psi(M2, 1), tol).all_passed:
        assert membership_check(model, mdp, pols, Criterion.psi(M2, 2), 2 * tol).all_passed


def test_model_serialization_shapes():
    mdp = random_mdp(3, 2, 0)
    model = ApproxModel.from_mdp(mdp)
    assert np.allclose(model.transition, mdp.transition)
    assert model.rank is None
    pve = model.with_expected_rewards()
    assert all(len(r.atoms) == 1 for row in pve.reward for r in row)
