"""The twelve end-to-end acceptance checks, runnable from tests and from the command line."""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DiscreteDistribution, Policy, TabularMDP, enumerate_deterministic_policies, make_rng, random_mdp
from .distdp import CategoricalGrid, return_distribution, wasserstein1_to_uniform
from .envs import fig1_counterexample, pve_model_of_fig1
from .experiment import ExperimentConfig, adversarial_policy, run_experiment
from .model_learn import ApproxModel, Criterion, collect_dataset, learn_model, membership_check, mle_model, sample_policies
from .planning import cvar_greedy_vi, cvar_vi, mean_variance_vi
from .risk import RiskSpec, UniformDistribution, dominates, risk_value, risk_values_on_grid
from .sketch import ImputationSpec, SketchSpec, apply_sketch, apply_sketch_rows, exact_moments, impute, moment_backup


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d} {self.name}: {self.measured} (target {self.tolerance}, {self.seconds:.1f}s)"


def _timed(number, name, fn, *args, **kwargs) -> CheckResult:
    t0 = time.perf_counter()
    passed, measured, tolerance, detail = fn(*args, **kwargs)
    return CheckResult(number, name, bool(passed), measured, tolerance, time.perf_counter() - t0, detail)


# 1 ---------------------------------------------------------------------------
def uniform_return_law():
    mdp = fig1_counterexample(1.0, 0.5)
    grid = CategoricalGrid.for_mdp(mdp, 401)
    eta = return_distribution(mdp, Policy.deterministic([1], 2), grid)
    w1 = wasserstein1_to_uniform(eta[0], -2.0, 2.0)
    return w1 <= 0.02, f"W1={w1:.5f}", "<= 0.02", ""


# 2 ---------------------------------------------------------------------------
def cvar_closed_form():
    v = risk_value(RiskSpec.cvar(0.5), UniformDistribution(-2.0, 2.0))
    c, tau = 1.0, 0.5
    target = 2 * c * tau - 2 * c
    return abs(v - target) <= 1e-9, f"CVaR={v:.12f}", f"{target} +- 1e-9", ""


# 3 ---------------------------------------------------------------------------
def risk_gap(c: float = 1.0, gamma: float = 0.5, tau: float = 0.5):
    true = fig1_counterexample(c, gamma)
    grid = CategoricalGrid.for_mdp(true, 401)
    risk = RiskSpec.cvar(tau)
    best = cvar_vi(true, tau, grid)
    model_plan = cvar_greedy_vi(pve_model_of_fig1(c, gamma), tau, grid)
    worst = adversarial_policy(model_plan, true, risk, grid, 1e-10)
    v_best = float(risk_values_on_grid(risk, return_distribution(true, best.policy, grid).probs, grid.atoms)[0])
    v_adv = float(risk_values_on_grid(risk, return_distribution(true, worst, grid).probs, grid.atoms)[0])
    gap = v_best - v_adv
    eps, delta = 1 - tau, 0.0
    bound = (true.r_max / (1 - gamma)) * eps * (1 - delta * (1 - eps))
    ok = abs(gap - 1.0) <= 0.02 and gap >= bound - 0.02
    detail = f"true-optimal action {best.actions()[0]}, adversarial model action {worst.greedy_actions()[0]}"
    return ok, f"gap={gap:.5f}, bound={bound:.5f}", "1.0 +- 0.02 and >= bound", detail


# 4 ---------------------------------------------------------------------------
def value_equivalent_not_sufficient():
    true, model = fig1_counterexample(), pve_model_of_fig1()
    policies = [Policy.deterministic([0], 2), Policy.deterministic([1], 2), Policy.uniform(1, 2)]
    r1 = membership_check(model, true, policies, Criterion.psi_proper(SketchSpec.moments(1)), 1e-8)
    r2 = membership_check(model, true, policies, Criterion.psi_proper(SketchSpec.moments(2)), 1e-8)
    ok = r1.all_passed and not r2.all_passed and abs(r2.max_deviation - 4 / 3) <= 1e-6
    return ok, f"mean dev={r1.max_deviation:.2e}, second-moment dev={r2.max_deviation:.9f}", "pass at 1e-8; 4/3 +- 1e-6", ""


# 5 ---------------------------------------------------------------------------
def _mv_objectives(mdp, lam):
    pols = list(enumerate_deterministic_policies(mdp.n_states, mdp.n_actions))
    mom = exact_moments(mdp, pols, 2)
    return pols, mom[..., 0] - lam * (mom[..., 1] - mom[..., 0] ** 2)


def unique_mv_optimum(mdp, lam, margin=1e-6):
    """Deterministic policy best at every state simultaneously, strictly best somewhere against every rival."""
    pols, obj = _mv_objectives(mdp, lam)
    for i, row in enumerate(obj):
        if np.all(row >= obj.max(axis=0) - 1e-12):
            rivals = np.delete(obj, i, axis=0)
            if np.all(np.max(row - rivals, axis=1) > margin):
                return pols[i]
            return None
    return None


def mv_transfer(n_instances: int = 20, lam: float = 0.5, n_policies: int = 50, loss_tol: float = 1e-6, seed: int = 0):
    ok_count, tried, losses = 0, 0, []
    failures = []
    seq = 0
    while tried < n_instances and seq < 50 * n_instances:
        mdp = random_mdp(4, 2, [seed, seq])
        seq += 1
        opt = unique_mv_optimum(mdp, lam)
        if opt is None:
            continue
        vi = mean_variance_vi(mdp, lam)
        if not np.array_equal(vi.actions(), opt.greedy_actions()):
            continue
        tried += 1
        pols = sample_policies(mdp, n_policies, [seed, seq, 1])
        model = learn_model(mdp, pols, SketchSpec.moments(2), seed=[seed, seq, 2], target_loss=1e-14)
        loss = model.provenance["final_loss"]
        losses.append(loss)
        model_plan = mean_variance_vi(model.to_mdp(), lam)
        if loss <= loss_tol and np.array_equal(model_plan.actions(), opt.greedy_actions()):
            ok_count += 1
        else:
            failures.append(f"instance {seq - 1}: loss={loss:.2e}")
    ok = tried == n_instances and ok_count == n_instances
    return ok, f"{ok_count}/{tried} transferred, max loss {max(losses):.2e}", f"{n_instances}/{n_instances}", "; ".join(failures)


# 6 and 11: models with known distribution-equivalence status ------------------
def clone_mdp(n_states: int, n_actions: int, seed) -> TabularMDP:
    """Random MDP whose last two states are identical and ignore the action."""
    base = random_mdp(n_states, n_actions, seed)
    p = base.transition.copy()
    reward = [list(row) for row in base.reward]
    a, b = n_states - 2, n_states - 1
    p[a] = p[a, 0]
    p[b] = p[a]
    reward[a] = [reward[a][0]] * n_actions
    reward[b] = list(reward[a])
    return TabularMDP(p, reward, base.gamma, base.r_max)


def clone_shift_model(mdp: TabularMDP, seed) -> ApproxModel:
    """Reassign mass between the two clone states in every row; distribution-equivalent for every policy."""
    rng = make_rng(seed)
    p = mdp.transition.copy()
    a, b = mdp.n_states - 2, mdp.n_states - 1
    total = p[..., a] + p[..., b]
    frac = rng.random(total.shape)
    p[..., a], p[..., b] = total * frac, total * (1 - frac)
    return ApproxModel.from_transition(p, mdp.reward, mdp.gamma, mdp.r_max, {"loss": "clone_shift"})


def perturbed_model(mdp: TabularMDP, scale: float, seed) -> ApproxModel:
    model = ApproxModel.from_mdp(mdp)
    noise = make_rng(seed).normal(0.0, scale, size=model.logits.shape)
    return ApproxModel(mdp.reward, mdp.gamma, mdp.r_max, logits=model.logits + noise, provenance={"loss": "perturbed"})


def candidate_models(mdp: TabularMDP, seed) -> list:
    models = [("clone_shift", clone_shift_model(mdp, [seed, 1]))]
    for i, scale in enumerate((1e-4, 1e-2, 0.3)):
        models.append((f"perturbed_{scale:g}", perturbed_model(mdp, scale, [seed, 2, i])))
    pols = sample_policies(mdp, 30, [seed, 3])
    models.append(("psi2_learned", learn_model(mdp, pols, SketchSpec.moments(2), seed=[seed, 4], iters=2000)))
    models.append(("mle_1e2", mle_model(mdp, collect_dataset(mdp, 100, [seed, 5]))))
    return models


def equivalence_policy_set(mdp: TabularMDP, seed, n_random: int = 8) -> list:
    """All deterministic policies plus a few random stochastic ones."""
    pols = list(enumerate_deterministic_policies(mdp.n_states, mdp.n_actions))
    return pols + list(sample_policies(mdp, n_random, seed))


def decision_states(mdp: TabularMDP) -> np.ndarray:
    """States where at least two actions differ in dynamics or reward."""
    out = []
    for x in range(mdp.n_states):
        rows = mdp.transition[x]
        differ = any(
            not np.allclose(rows[0], rows[a]) or mdp.reward[x][0].to_dict() != mdp.reward[x][a].to_dict()
            for a in range(1, mdp.n_actions)
        )
        if differ:
            out.append(x)
    return np.array(out, dtype=int)


def cvar_transfer(n_mdps: int = 10, taus=(0.25, 0.5, 0.75), seed: int = 0):
    checked, failures, passing_models, skipped = 0, [], 0, 0
    for i in range(n_mdps):
        mdp = clone_mdp(3, 2, [seed, i])
        grid = CategoricalGrid.for_mdp(mdp)
        pols = equivalence_policy_set(mdp, [seed, i, 9])
        dec = decision_states(mdp)
        true_plans = {tau: cvar_greedy_vi(mdp, tau, grid) for tau in taus}
        for name, model in candidate_models(mdp, [seed, i]):
            report = membership_check(model, mdp, pols, Criterion.dist_proper(), grid.spacing, grid=grid)
            if not report.all_passed:
                continue
            passing_models += 1
            for tau in taus:
                tp = true_plans[tau]
                vals = np.sort(tp.action_values[dec], axis=1)
                if np.any(vals[:, -1] - vals[:, -2] <= 2 * grid.spacing / tau):
                    skipped += 1
                    continue
                mp = cvar_greedy_vi(model.to_mdp(), tau, grid)
                checked += 1
                if not np.array_equal(mp.actions()[dec], tp.actions()[dec]):
                    failures.append(f"mdp {i} model {name} tau {tau}")
    ok = not failures and checked > 0
    measured = f"{checked} transfers checked over {passing_models} passing models, {len(failures)} failures"
    return ok, measured, "0 failures", f"skipped {skipped} near-tie cases; " + "; ".join(failures)


# 7 ---------------------------------------------------------------------------
def bellman_closedness(n_triples: int = 50, seed: int = 0, verbatim: bool = False, clip: bool = True):
    from .distdp import ReturnFunction, distributional_backup

    worst, worst_ratio = 0.0, 0.0
    sketch = SketchSpec.moments(2)
    for i in range(n_triples):
        rng = make_rng([seed, i])
        mdp = random_mdp(int(rng.integers(2, 6)), int(rng.integers(1, 4)), [seed, i, 1])
        grid = CategoricalGrid.for_mdp(mdp, 201)
        policy = Policy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
        # grid spans +-r_max / (1 - gamma), so one backup of any law on it stays in range
        eta = ReturnFunction(grid, rng.dirichlet(np.full(grid.n_atoms, 0.1), size=mdp.n_states))
        lhs = apply_sketch_rows(sketch, distributional_backup(mdp, policy, eta, clip=clip))
        rhs = moment_backup(mdp, policy, apply_sketch_rows(sketch, eta), 2, verbatim=verbatim)
        dev = float(np.max(np.abs(lhs - rhs)))
        worst = max(worst, dev)
        worst_ratio = max(worst_ratio, dev / grid.spacing)
    return worst_ratio <= 2.0, f"max deviation {worst:.2e} = {worst_ratio:.3f} grid spacings", "<= 2 spacings", ""


# 8 ---------------------------------------------------------------------------
def imputation_exactness(n_points: int = 100, seed: int = 0):
    rng = make_rng(seed)
    worst = 0.0
    for kind in ("two_point", "normal_clipped"):
        for sketch in (SketchSpec.moments(2), SketchSpec.mean_variance()):
            for _ in range(n_points):
                mu, var = rng.uniform(-5, 5), rng.uniform(0, 4) * (rng.random() > 0.05)
                s = sketch.from_moments(np.array([mu, var + mu * mu]))
                back = apply_sketch(sketch, impute(ImputationSpec(kind), sketch, s))
                worst = max(worst, float(np.max(np.abs(back - s))))
    return worst <= 1e-10, f"max round-trip error {worst:.2e}", "<= 1e-10", ""


# 9 ---------------------------------------------------------------------------
# the grid-world fits plateau well before this many L-BFGS iterations
ORDERING_LEARN_ITERS = 500


def tabular_ordering(n_seeds: int = 20, out_dir=None, jobs: int = 1, configs: dict | None = None):
    fit = {"learn": {"iters": ORDERING_LEARN_ITERS}}
    configs = configs or {
        "windy_cliffs": {"regimes": ("pve", "psi2"), **fit},
        "four_rooms_risky": {"regimes": ("pve", "psi2"), **fit},
        "frozen_lake_8x8": {"regimes": ("pve",), **fit},
    }
    summaries = {}
    for env, extra in configs.items():
        cfg = ExperimentConfig.from_dict({"env": env, "n_seeds": n_seeds, **extra})
        target = None if out_dir is None else Path(out_dir) / env
        summaries[env] = run_experiment(cfg, target, jobs=jobs)["aggregates"]
    parts, order_ok, separated = [], True, False
    for env in ("windy_cliffs", "four_rooms_risky"):
        psi = summaries[env]["psi2/lowest"]["empirical_risk"]
        pve = summaries[env]["pve/adversarial"]["empirical_risk"]
        order_ok &= psi["mean"] >= pve["mean"]
        separated |= psi["ci_low"] > pve["ci_high"]
        parts.append(
            f"{env}: psi2 {psi['mean']:.4f} [{psi['ci_low']:.4f}, {psi['ci_high']:.4f}] vs "
            f"pve {pve['mean']:.4f} [{pve['ci_low']:.4f}, {pve['ci_high']:.4f}]"
        )
    fl = summaries["frozen_lake_8x8"]["pve/adversarial"]["empirical_risk"]["mean"]
    parts.append(f"frozen_lake_8x8: pve {fl:.4f}")
    ok = order_ok and separated and abs(fl) <= 0.05
    tol = "psi2 >= pve on both, disjoint CIs on one, |frozen lake pve| <= 0.05"
    return ok, "; ".join(parts), tol, f"ordering={order_ok} separated={separated}"


# 10 --------------------------------------------------------------------------
def spectral_consistency(n_dists: int = 100, seed: int = 0):
    rng = make_rng(seed)
    worst = 0.0
    flat = RiskSpec.spectral([0.0, 1.0], [1.0])
    for _ in range(n_dists):
        n = int(rng.integers(1, 12))
        dist = DiscreteDistribution.from_unsorted(rng.normal(size=n) * 3, rng.dirichlet(np.ones(n)))
        tau = float(rng.uniform(0.01, 0.99))
        tail = RiskSpec.spectral([0.0, tau, 1.0], [1 / tau, 0.0])
        worst = max(
            worst,
            abs(risk_value(flat, dist) - dist.mean()),
            abs(risk_value(tail, dist) - risk_value(RiskSpec.cvar(tau), dist)),
        )
    return worst <= 1e-10, f"max error {worst:.2e}", "<= 1e-10", ""


# 11 --------------------------------------------------------------------------
def dominance_transfer(n_mdps: int = 5, pairs_per_mdp: int = 10, seed: int = 0, risks=None):
    risks = risks or (RiskSpec.cvar(0.25), RiskSpec.cvar(0.5), RiskSpec.mean_variance(0.5), RiskSpec.neutral())
    n_pairs, dominance_events, counterexamples, models_used = 0, 0, [], 0
    for i in range(n_mdps):
        mdp = clone_mdp(4, 2, [seed, 100 + i])
        grid = CategoricalGrid.for_mdp(mdp)
        pols = equivalence_policy_set(mdp, [seed, i, 7])
        passing = [
            (name, m) for name, m in candidate_models(mdp, [seed, 100 + i])
            if membership_check(m, mdp, pols, Criterion.dist_proper(), grid.spacing, grid=grid).all_passed
        ]
        models_used += len(passing)
        pair_pols = list(sample_policies(mdp, 2 * pairs_per_mdp, [seed, i, 8]))
        true_eta = [return_distribution(mdp, p, grid, check_bounds=False) for p in pair_pols]
        for name, model in passing:
            mm = model.to_mdp()
            model_eta = [return_distribution(mm, p, grid, check_bounds=False) for p in pair_pols]
            for j in range(pairs_per_mdp):
                a, b = 2 * j, 2 * j + 1
                n_pairs += 1
                for risk in risks:
                    for x, y in ((a, b), (b, a)):
                        if dominates(risk, model_eta[x], model_eta[y]):
                            dominance_events += 1
                            if not dominates(risk, true_eta[x], true_eta[y], tol=2 * grid.spacing):
                                counterexamples.append(f"mdp {i} model {name} pair {j} {risk.kind}")
    ok = not counterexamples and dominance_events > 0
    measured = (
        f"{n_pairs} policy pairs over {models_used} passing models, {dominance_events} dominance events, "
        f"{len(counterexamples)} counterexamples"
    )
    return ok, measured, "0 counterexamples", "; ".join(counterexamples)


# 12 --------------------------------------------------------------------------
def cli_determinism(seed: int = 7):
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "cfg.json"
        cfg.write_text('{"env": "fig1_counterexample", "n_seeds": 3, "n_eval_trajectories": 200}\n')
        outs = []
        for run in ("a", "b"):
            out = Path(tmp) / run
            code = main(["experiment", "--config", str(cfg), "--seed", str(seed), "--out", str(out)])
            if code != 0:
                return False, f"exit code {code}", "identical files", ""
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same = outs[0] == outs[1] and len(outs[0]) > 0
        return same, f"{len(outs[0])} files, identical={same}", "byte-identical", ", ".join(outs[0])


CHECKS = (
    (1, "uniform return law of the risky action", uniform_return_law),
    (2, "CVaR of the uniform law in closed form", cvar_closed_form),
    (3, "risk gap of the value-equivalent model", risk_gap),
    (4, "value equivalence without second-moment equivalence", value_equivalent_not_sufficient),
    (5, "mean-variance plan transfer from second-moment models", mv_transfer),
    (6, "CVaR plan transfer from distribution-equivalent models", cvar_transfer),
    (7, "moment sketch commutes with the categorical backup", bellman_closedness),
    (8, "imputation round trip", imputation_exactness),
    (9, "tabular ordering of second-moment vs value-equivalent models", tabular_ordering),
    (10, "spectral measures reduce to mean and CVaR", spectral_consistency),
    (11, "dominance transfer from distribution-equivalent models", dominance_transfer),
    (12, "CLI determinism", cli_determinism),
)


def run_check(number: int, **kwargs) -> CheckResult:
    num, name, fn = CHECKS[number - 1]
    return _timed(num, name, fn, **kwargs)


def run_all(skip=(), **kwargs) -> list:
    return [run_check(n) for n, _, _ in CHECKS if n not in skip]
