import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distequiv.core import DiscreteDistribution, Policy, make_rng
from distequiv.distdp import CategoricalGrid, pushforward, return_distribution
from distequiv.envs import fig1_counterexample, pve_model_of_fig1
from distequiv.risk import (
    RiskSpec,
    UniformDistribution,
    dominates,
    empirical_cvar,
    quantile,
    risk_value,
    strictly_dominates,
)

U = UniformDistribution(-2.0, 2.0)
SAFE, RISKY = Policy.deterministic([0], 2), Policy.deterministic([1], 2)


def dists():
    return st.integers(1, 8).flatmap(
        lambda n: st.tuples(
            st.lists(st.floats(-5, 5), min_size=n, max_size=n),
            st.lists(st.floats(0.01, 1), min_size=n, max_size=n),
        )
    ).map(lambda t: DiscreteDistribution.from_unsorted(t[0], np.array(t[1]) / np.sum(t[1])))


def test_quantile_examples():
    assert quantile(DiscreteDistribution.dirac(3.0), 0.3) == 3.0
    d = DiscreteDistribution([-1.0, 1.0], [0.5, 0.5])
    assert quantile(d, 0.5) == -1.0 and quantile(d, 0.75) == 1.0
    grid = CategoricalGrid(-4, 4, 401)
    eta = return_distribution(fig1_counterexample(), RISKY, grid)[0]
    assert abs(quantile(eta, 0.25) + 1.0) <= grid.spacing
    with pytest.raises(ValueError):
        quantile(d, 0.0)


def test_risk_value_examples():
    assert risk_value(RiskSpec.cvar(0.5), DiscreteDistribution.dirac(0.0)) == 0.0
    assert risk_value(RiskSpec.cvar(0.5), U) == pytest.approx(-1.0, abs=1e-12)
    assert risk_value(RiskSpec.neutral(), U) == 0.0
    assert risk_value(RiskSpec.mean_variance(0.5), U) == pytest.approx(-2 / 3)


def test_spectral_step_equals_cvar():
    rng = make_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        d = DiscreteDistribution.from_unsorted(rng.normal(size=n), rng.dirichlet(np.ones(n)))
        tau = float(rng.uniform(0.05, 1.0))
        spec = RiskSpec.spectral([0.0, tau, 1.0], [1 / tau, 0.0]) if tau < 1 else RiskSpec.spectral([0, 1], [1.0])
        assert abs(risk_value(spec, d) - risk_value(RiskSpec.cvar(tau), d)) <= 1e-10


def test_spectral_validation():
    with pytest.raises(ValueError):
        RiskSpec.spectral([0.0, 0.5, 1.0], [0.5, 1.5])
    with pytest.raises(ValueError):
        RiskSpec.spectral([0.0, 1.0], [2.0])


def test_empirical_cvar_examples():
    assert empirical_cvar([1, 2, 3, 4], 0.5) == 1.5
    assert empirical_cvar([2.5] * 7, 0.3) == 2.5
    draws = make_rng(1).uniform(-2, 2, size=100_000)
    assert abs(empirical_cvar(draws, 0.5) + 1.0) <= 0.02
    with pytest.raises(ValueError):
        empirical_cvar([], 0.5)


def test_dominance_examples():
    grid = CategoricalGrid(-4, 4, 401)
    risk = RiskSpec.cvar(0.5)
    true = fig1_counterexample()
    ea, eb = return_distribution(true, SAFE, grid), return_distribution(true, RISKY, grid)
    assert dominates(risk, ea, ea)
    assert dominates(risk, ea, eb) and not dominates(risk, eb, ea)
    assert strictly_dominates(risk, ea, eb)
    model = pve_model_of_fig1()
    ma, mb = return_distribution(model, SAFE, grid), return_distribution(model, RISKY, grid)
    assert dominates(risk, ma, mb) and dominates(risk, mb, ma)


def test_strict_risk_sensitivity():
    assert RiskSpec.cvar(0.5).strictly_risk_sensitive(0.6, 0.0)
    assert not RiskSpec.neutral().strictly_risk_sensitive(0.5, 0.5)


@settings(max_examples=60, deadline=None)
@given(dists(), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_cvar_monotone_in_tau(d, t1, t2):
    lo, hi = sorted((t1, t2))
    assert risk_value(RiskSpec.cvar(lo), d) <= risk_value(RiskSpec.cvar(hi), d) + 1e-12


@settings(max_examples=60, deadline=None)
@given(dists())
def test_cvar_one_and_flat_spectral_are_mean(d):
    assert abs(risk_value(RiskSpec.cvar(1.0), d) - d.mean()) <= 1e-10
    assert abs(risk_value(RiskSpec.spectral([0, 1], [1.0]), d) - d.mean()) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(dists(), st.floats(-10, 10))
def test_translation_equivariance(d, c):
    shifted = pushforward(d, c, 1.0)
    for spec in (RiskSpec.cvar(0.3), RiskSpec.mean_variance(0.7), RiskSpec.spectral([0, 0.2, 1], [3.0, 0.5])):
        assert abs(risk_value(spec, shifted) - risk_value(spec, d) - c) <= 1e-9


def test_spec_round_trip():
    for spec in (RiskSpec.neutral(), RiskSpec.cvar(0.25), RiskSpec.mean_variance(2.0), RiskSpec.spectral([0, 0.5, 1], [1.5, 0.5])):
        assert RiskSpec.from_dict(spec.to_dict()) == spec
