"""Invariant checks for every module, runnable as one suite with a pass/fail report.

``mutation`` switches on a deliberate fault so the suite can show it is
sensitive to it: ``"projection_no_clip"`` drops projected mass that falls
outside the grid, ``"verbatim_second_moment"`` uses the second-moment
recursion without the reward factor in the cross term.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    DiscreteDistribution,
    Policy,
    enumerate_deterministic_policies,
    make_rng,
    random_mdp,
    sample_trajectory,
)
from .distdp import (
    CategoricalGrid,
    ReturnFunction,
    categorical_project,
    distributional_backup,
    pushforward,
    return_distribution,
)
from .envs import ENV_NAMES, EnvSpec, build_env, fig1_counterexample
from .model_learn import ApproxModel, equivalence_loss, mle_model, collect_dataset, sample_policies, true_statistics
from .planning import cvar_greedy_vi, cvar_vi, mean_variance_vi
from .risk import RiskSpec, risk_value, risk_values_on_grid
from .sketch import ImputationSpec, SketchSpec, apply_sketch_rows, exact_moments, moment_backup, sf_dp

MUTATIONS = ("projection_no_clip", "verbatim_second_moment")
PROFILES = {
    "fast": {"instances": 10, "mle_seeds": 5, "accept_instances": 1},
    "full": {"instances": 50, "mle_seeds": 20, "accept_instances": 10},
}


@dataclass
class PropertyResult:
    name: str
    module: str
    basis: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.module}.{self.name} ({self.seconds:.2f}s): {self.detail}"


@dataclass
class PropertyReport:
    profile: str
    mutation: str | None
    results: list

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed(self) -> list:
        return [r for r in self.results if not r.passed]

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "mutation": self.mutation,
            "all_passed": self.all_passed,
            "results": [
                {"name": r.name, "module": r.module, "basis": r.basis, "passed": r.passed, "detail": r.detail}
                for r in self.results
            ],
        }


class _Ctx:
    def __init__(self, profile: str, mutation: str | None):
        self.profile = profile
        self.sizes = PROFILES[profile]
        self.clip = mutation != "projection_no_clip"
        self.verbatim = mutation == "verbatim_second_moment"

    def mdps(self, seed: int, n: int | None = None, max_states: int = 5, max_actions: int = 3):
        rng = make_rng([seed, 999])
        for i in range(n or self.sizes["instances"]):
            yield random_mdp(int(rng.integers(2, max_states + 1)), int(rng.integers(1, max_actions + 1)), [seed, i])


_REGISTRY = []


def prop(module: str, basis: str):
    def wrap(fn):
        _REGISTRY.append((fn.__name__, module, basis, fn))
        return fn

    return wrap


def _random_policy(rng, mdp):
    return Policy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))


# core ------------------------------------------------------------------------
@prop("core", "reproducibility contract: a trajectory is a function of its arguments and seed")
def trajectory_reproducible(ctx):
    for mdp in ctx.mdps(1):
        pi = Policy.uniform(mdp.n_states, mdp.n_actions)
        a, b = sample_trajectory(mdp, pi, 0, 30, 5), sample_trajectory(mdp, pi, 0, 30, 5)
        if a != b:
            return False, "two identical calls differ"
    return True, "identical trajectories"


@prop("core", "geometric tail bound on the truncated discounted return")
def truncation_bound(ctx):
    for i, mdp in enumerate(ctx.mdps(2)):
        pi = Policy.uniform(mdp.n_states, mdp.n_actions)
        for h in (5, 20):
            short = sample_trajectory(mdp, pi, 0, h, i).discounted_return
            long = sample_trajectory(mdp, pi, 0, h + 200, i).discounted_return
            bound = mdp.gamma**h * mdp.r_max / (1 - mdp.gamma) + 1e-12
            if abs(long - short) > bound:
                return False, f"horizon {h}: delta {abs(long - short):.3g} > bound {bound:.3g}"
    return True, "extending the horizon moves the return by less than the tail bound"


# distdp ----------------------------------------------------------------------
@prop("distdp", "projection keeps total mass, and keeps the mean for atoms inside the grid")
def projection_mass_mean(ctx):
    rng = make_rng(3)
    grid = CategoricalGrid(-3.0, 3.0, 61)
    worst_mass, worst_mean = 0.0, 0.0
    for _ in range(ctx.sizes["instances"] * 5):
        n = int(rng.integers(1, 10))
        atoms = rng.uniform(-4.0, 4.0, size=n)
        probs = rng.dirichlet(np.ones(n))
        proj = categorical_project(atoms, probs, grid, clip=ctx.clip)
        worst_mass = max(worst_mass, abs(proj.probs.sum() - 1.0))
        inside = np.clip(atoms, -3.0, 3.0)
        inner = categorical_project(inside, probs, grid, clip=ctx.clip)
        worst_mean = max(worst_mean, abs(inner.mean() - inside @ probs))
    ok = worst_mass <= 1e-12 and worst_mean <= 1e-12
    return ok, f"mass error {worst_mass:.2e}, mean error {worst_mean:.2e}"


@prop("distdp", "projected backup is a non-expansion in per-state L1 on a fixed grid")
def backup_nonexpansion(ctx):
    rng = make_rng(4)
    for mdp in ctx.mdps(4):
        grid = CategoricalGrid.for_mdp(mdp, 101)
        pi = _random_policy(rng, mdp)
        a = ReturnFunction(grid, rng.dirichlet(np.ones(grid.n_atoms), size=mdp.n_states))
        b = ReturnFunction(grid, rng.dirichlet(np.ones(grid.n_atoms), size=mdp.n_states))
        before = np.max(np.abs(a.probs - b.probs).sum(axis=1))
        ta = distributional_backup(mdp, pi, a, clip=ctx.clip)
        tb = distributional_backup(mdp, pi, b, clip=ctx.clip)
        after = np.max(np.abs(ta.probs - tb.probs).sum(axis=1))
        if after > before + 1e-10:
            return False, f"distance grew from {before:.4f} to {after:.4f}"
    return True, "no expansion observed"


@prop("distdp", "grid consistency: doubling the atoms moves CVaR by at most one old spacing")
def grid_consistency(ctx):
    mdp = fig1_counterexample()
    pi = Policy.deterministic([1], 2)
    coarse, fine = CategoricalGrid(-2, 2, 201), CategoricalGrid(-2, 2, 401)
    risk = RiskSpec.cvar(0.5)
    vc = risk_values_on_grid(risk, return_distribution(mdp, pi, coarse).probs, coarse.atoms)[0]
    vf = risk_values_on_grid(risk, return_distribution(mdp, pi, fine).probs, fine.atoms)[0]
    return abs(vc - vf) <= coarse.spacing, f"CVaR change {abs(vc - vf):.2e} vs spacing {coarse.spacing}"


@prop("distdp", "return laws on every grid row are probability vectors after a backup")
def backup_mass(ctx):
    rng = make_rng(5)
    worst = 0.0
    for mdp in ctx.mdps(5):
        # deliberately narrow grid so shifted atoms leave it
        grid = CategoricalGrid(-1.0, 1.0, 41)
        pi = _random_policy(rng, mdp)
        eta = ReturnFunction(grid, rng.dirichlet(np.ones(grid.n_atoms), size=mdp.n_states))
        out = distributional_backup(mdp, pi, eta, check_bounds=False, clip=ctx.clip)
        worst = max(worst, float(np.max(np.abs(out.probs.sum(axis=1) - 1.0))))
    return worst <= 1e-12, f"max mass error {worst:.2e}"


# sketch ----------------------------------------------------------------------
@prop("sketch", "imputation is exact: sketch of the imputed law returns the statistic")
def imputation_exact(ctx):
    from .acceptance import imputation_exactness

    ok, measured, _, _ = imputation_exactness(ctx.sizes["instances"] * 10, seed=6)
    return ok, measured


@prop("sketch", "moment sketch commutes with the projected distributional backup")
def bellman_closed(ctx):
    from .acceptance import bellman_closedness

    ok, measured, _, _ = bellman_closedness(ctx.sizes["instances"], seed=7, verbatim=ctx.verbatim, clip=ctx.clip)
    return ok, measured


@prop("sketch", "both fixed-point modes agree (closed-form backup vs impute-then-backup)")
def sf_dp_modes_agree(ctx):
    rng = make_rng(8)
    worst = 0.0
    for mdp in ctx.mdps(8, max_states=4):
        pi = _random_policy(rng, mdp)
        a = sf_dp(mdp, pi, mode="closed_form", tol=1e-12, verbatim=ctx.verbatim)
        b = sf_dp(mdp, pi, SketchSpec.moments(2), ImputationSpec("two_point"), mode="impute_backup", tol=1e-12)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst <= 1e-8, f"max disagreement {worst:.2e}"


@prop("sketch", "fixed-point iteration contracts: mean error at rate gamma, second-moment error within O(k gamma^k)")
def sf_dp_contraction(ctx):
    rng = make_rng(9)
    for mdp in ctx.mdps(9, max_states=4):
        pi = _random_policy(rng, mdp)
        target = exact_moments(mdp, pi, 2)
        s = np.zeros_like(target)
        errs = []
        for _ in range(40):
            s = moment_backup(mdp, pi, s, 2)
            errs.append(np.max(np.abs(s - target), axis=0))
        errs = np.array(errs)
        # the second moment inherits a k * gamma^k cross term from the mean error
        for j, rate in ((0, mdp.gamma), (1, mdp.gamma * 1.1)):
            e = errs[10:35, j]
            e = e[e > 1e-11]
            if e.size > 5:
                fitted = np.exp(np.polyfit(np.arange(e.size), np.log(e), 1)[0])
                if fitted > rate + 1e-3:
                    return False, f"component {j + 1}: fitted rate {fitted:.4f} > {rate}"
    return True, "geometric contraction within the expected rates"


@prop("sketch", "moment fixed point matches the moments of the categorical fixed point on every environment")
def sketch_matches_distributions(ctx):
    worst = 0.0
    for name in ENV_NAMES:
        env = build_env(EnvSpec(name))
        mdp = env.mdp
        grid = CategoricalGrid(*env.return_bounds, 401)
        pi = Policy.uniform(mdp.n_states, mdp.n_actions)
        s = sf_dp(mdp, pi, tol=1e-10, verbatim=ctx.verbatim)
        eta = return_distribution(mdp, pi, grid, check_bounds=False)
        dev = np.max(np.abs(apply_sketch_rows(SketchSpec.moments(2), eta) - s))
        worst = max(worst, float(dev / grid.spacing))
    return worst <= 2.0, f"max deviation {worst:.3f} grid spacings"


# risk ------------------------------------------------------------------------
def _random_dists(rng, n):
    for _ in range(n):
        k = int(rng.integers(1, 10))
        yield DiscreteDistribution.from_unsorted(rng.normal(size=k) * 2, rng.dirichlet(np.ones(k)))


@prop("risk", "CVaR is nondecreasing in its level and equals the mean at level one")
def cvar_monotone(ctx):
    rng = make_rng(10)
    for d in _random_dists(rng, ctx.sizes["instances"] * 10):
        taus = np.sort(rng.uniform(0.01, 1.0, size=5))
        vals = [risk_value(RiskSpec.cvar(t), d) for t in taus]
        if np.any(np.diff(vals) < -1e-12):
            return False, "CVaR decreased in tau"
        if abs(risk_value(RiskSpec.cvar(1.0), d) - d.mean()) > 1e-10:
            return False, "CVaR(1) differs from the mean"
    return True, "monotone; CVaR(1) = mean"


@prop("risk", "constant spectral weight gives the mean")
def spectral_flat_is_mean(ctx):
    rng = make_rng(11)
    flat = RiskSpec.spectral([0.0, 1.0], [1.0])
    worst = max(abs(risk_value(flat, d) - d.mean()) for d in _random_dists(rng, ctx.sizes["instances"] * 10))
    return worst <= 1e-10, f"max error {worst:.2e}"


@prop("risk", "translation equivariance under a constant shift of the return")
def translation(ctx):
    rng = make_rng(12)
    specs = (RiskSpec.cvar(0.3), RiskSpec.mean_variance(0.7), RiskSpec.spectral([0, 0.2, 1], [3.0, 0.5]))
    worst = 0.0
    for d in _random_dists(rng, ctx.sizes["instances"] * 5):
        c = float(rng.normal() * 3)
        shifted = pushforward(d, c, 1.0)
        for spec in specs:
            worst = max(worst, abs(risk_value(spec, shifted) - risk_value(spec, d) - c))
    return worst <= 1e-10, f"max error {worst:.2e}"


# planning --------------------------------------------------------------------
def _neutral_optimum(mdp):
    pols = list(enumerate_deterministic_policies(mdp.n_states, mdp.n_actions))
    means = exact_moments(mdp, pols, 1)[..., 0]
    best = int(np.argmax(means.sum(axis=1)))
    if not np.all(means[best] >= means.max(axis=0) - 1e-12):
        return None
    gaps = np.sort(means.sum(axis=1))
    if gaps[-1] - gaps[-2] < 1e-3:
        return None
    return pols[best]


@prop("planning", "level-one CVaR and vanishing variance penalty reproduce the risk-neutral optimum")
def risk_neutral_limit(ctx):
    checked = 0
    for mdp in ctx.mdps(13, max_states=4):
        if mdp.n_actions < 2:
            continue
        opt = _neutral_optimum(mdp)
        if opt is None:
            continue
        checked += 1
        target = opt.greedy_actions()
        grid = CategoricalGrid.for_mdp(mdp, 201)
        plans = {
            "mean_variance": mean_variance_vi(mdp, 1e-12).actions(),
            "cvar_greedy": cvar_greedy_vi(mdp, 1.0, grid).actions(),
        }
        for name, actions in plans.items():
            if not np.array_equal(actions, target):
                return False, f"{name} differs from the risk-neutral optimum"
    return checked > 0, f"{checked} unique-optimum instances agree"


@prop("planning", "planners return deterministic stationary policies")
def deterministic_policies(ctx):
    for mdp in ctx.mdps(14, n=3, max_states=3):
        grid = CategoricalGrid.for_mdp(mdp, 101)
        for res in (mean_variance_vi(mdp, 0.5), cvar_vi(mdp, 0.5, grid, n_budget=33), cvar_greedy_vi(mdp, 0.5, grid)):
            if not res.policy.is_deterministic():
                return False, "non-deterministic policy returned"
    return True, "one-hot rows"


@prop("planning", "reported objectives match an independent evaluation of the returned policy")
def objective_consistency(ctx):
    worst_mv, worst_cvar = 0.0, 0.0
    for mdp in ctx.mdps(15, n=3, max_states=3):
        grid = CategoricalGrid.for_mdp(mdp, 201)
        mv = mean_variance_vi(mdp, 0.5)
        mom = sf_dp(mdp, mv.policy, tol=1e-12)
        worst_mv = max(worst_mv, float(np.max(np.abs(mv.values - (mom[:, 0] - 0.5 * (mom[:, 1] - mom[:, 0] ** 2))))))
        cg = cvar_greedy_vi(mdp, 0.5, grid)
        eta = return_distribution(mdp, cg.policy, grid)
        indep = risk_values_on_grid(RiskSpec.cvar(0.5), eta.probs, grid.atoms)
        worst_cvar = max(worst_cvar, float(np.max(np.abs(cg.values - indep)) / grid.spacing))
    return worst_mv <= 1e-6 and worst_cvar <= 2.0, f"mean-variance {worst_mv:.2e}, CVaR {worst_cvar:.3f} spacings"


@prop("planning", "risk gap of the value-equivalent counterexample equals 2c(1 - tau)")
def counterexample_gap(ctx):
    from .acceptance import risk_gap

    worst = 0.0
    for tau in (0.25, 0.5, 0.75):
        ok, measured, _, _ = risk_gap(1.0, 0.5, tau)
        gap = float(measured.split("=")[1].split(",")[0])
        worst = max(worst, abs(gap - 2 * (1 - tau)))
    return worst <= 0.02, f"max |gap - 2c(1-tau)| = {worst:.4f}"


# model-learn -----------------------------------------------------------------
@prop("model_learn", "the true model has zero equivalence loss for every sketch, k and p")
def zero_loss_identity(ctx):
    worst = 0.0
    for i, mdp in enumerate(ctx.mdps(16)):
        pols = sample_policies(mdp, 5, i)
        model = ApproxModel.from_mdp(mdp)
        for sketch in (SketchSpec.moments(1), SketchSpec.moments(2), SketchSpec.mean_variance()):
            stats = true_statistics(mdp, pols, sketch)
            for k in (1, 3):
                for p in (1.0, 2.0):
                    worst = max(worst, equivalence_loss(stats, model, pols, sketch, k, p))
    return worst <= 1e-12, f"max loss {worst:.2e}"


@prop("model_learn", "second-moment equivalent models transfer the mean-variance plan")
def mv_plan_transfer(ctx):
    from .acceptance import mv_transfer

    ok, measured, _, _ = mv_transfer(ctx.sizes["accept_instances"], seed=17)
    return ok, measured


@prop("model_learn", "distribution-equivalent models transfer the CVaR plan")
def cvar_plan_transfer(ctx):
    from .acceptance import cvar_transfer

    taus = (0.5,) if ctx.profile == "fast" else (0.25, 0.5, 0.75)
    ok, measured, _, _ = cvar_transfer(ctx.sizes["accept_instances"], taus=taus, seed=18)
    return ok, measured


@prop("model_learn", "a value-equivalent model can plan strictly worse for CVaR")
def value_equivalence_insufficient(ctx):
    from .acceptance import value_equivalent_not_sufficient

    ok, measured, _, _ = value_equivalent_not_sufficient()
    return ok, measured


@prop("model_learn", "dominance in a distribution-equivalent model carries over to the true MDP")
def dominance_carries_over(ctx):
    from .acceptance import dominance_transfer

    ok, measured, _, _ = dominance_transfer(ctx.sizes["accept_instances"], pairs_per_mdp=4 if ctx.profile == "fast" else 10, seed=19)
    return ok, measured


@prop("model_learn", "MLE equivalence loss falls as the dataset grows")
def mle_consistency(ctx):
    mdp = random_mdp(4, 2, 20)
    pols = sample_policies(mdp, 20, 20)
    sketch = SketchSpec.moments(2)
    stats = true_statistics(mdp, pols, sketch)
    sizes = (10, 40, 160, 640, 2560)
    means = []
    for n in sizes:
        losses = [
            equivalence_loss(stats, mle_model(mdp, collect_dataset(mdp, n, [20, n, s])).to_mdp().with_reward(mdp.reward),
                             pols, sketch)
            for s in range(ctx.sizes["mle_seeds"])
        ]
        means.append(float(np.mean(losses)))
    ok = all(b < a for a, b in zip(means, means[1:]))
    return ok, "mean loss by size: " + ", ".join(f"{n}:{m:.3g}" for n, m in zip(sizes, means))


# envs ------------------------------------------------------------------------
@prop("envs", "every built environment is a valid MDP")
def envs_valid(ctx):
    from .core import validate_mdp

    bad = {n: validate_mdp(build_env(EnvSpec(n)).mdp) for n in ENV_NAMES}
    bad = {n: v for n, v in bad.items() if v}
    return not bad, "all valid" if not bad else str(bad)


@prop("envs", "terminal cells lead to a zero-reward absorbing sink")
def terminals_absorb(ctx):
    for name in ("windy_cliffs", "frozen_lake_8x8", "four_rooms_risky"):
        env = build_env(EnvSpec(name))
        sink = env.extras["sink_state"]
        mdp = env.mdp
        if not np.allclose(mdp.transition[sink, :, sink], 1.0) or np.any(mdp.reward_second_moment[sink] != 0):
            return False, f"{name}: sink is not a zero-reward absorbing state"
        for x in env.terminal_states:
            if x != sink and not np.allclose(mdp.transition[x, :, sink], 1.0):
                return False, f"{name}: terminal {x} does not move to the sink"
    return True, "terminals absorb"


# experiment ------------------------------------------------------------------
@prop("experiment", "aggregates do not depend on the order of seeds")
def aggregation_order(ctx):
    from .experiment import aggregate

    rng = make_rng(21)
    v = rng.normal(size=20)
    a, b = aggregate(v), aggregate(rng.permutation(v))
    return a == b, "identical aggregates" if a == b else f"{a} != {b}"


@prop("experiment", "results embed the resolved config, version, RNG id and defaults")
def results_self_describing(ctx):
    from .experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.from_dict({"env": "fig1_counterexample", "n_seeds": 2, "n_eval_trajectories": 50})
    summary = run_experiment(cfg)
    missing = [k for k in ("config", "version", "rng", "defaults") if k not in summary]
    return not missing, "all present" if not missing else f"missing {missing}"


def registry() -> list:
    return list(_REGISTRY)


def run_property_suite(profile: str = "fast", mutation: str | None = None, only=None) -> PropertyReport:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {tuple(PROFILES)}")
    if mutation is not None and mutation not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutation!r}; expected one of {MUTATIONS}")
    ctx = _Ctx(profile, mutation)
    results = []
    for name, module, basis, fn in _REGISTRY:
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn(ctx)
        except Exception as err:  # a crash is a failure, reported like one
            passed, detail = False, f"{type(err).__name__}: {err}"
        results.append(PropertyResult(name, module, basis, bool(passed), detail, time.perf_counter() - t0))
    return PropertyReport(profile, mutation, results)
