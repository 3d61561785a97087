"""Config-driven experiment: learn models per regime and seed, plan in them, score the plans in the true MDP."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import RNG_ALGORITHM, Policy, sample_returns
from .distdp import CategoricalGrid, action_backups, return_distribution
from .envs import BuiltEnv, EnvSpec, build_env
from .io import model_to_dict, write_json
from .model_learn import ApproxModel, collect_dataset, learn_model, mle_model, sample_policies
from .planning import PLANNERS, cvar_greedy_vi, cvar_vi, mean_variance_vi
from .risk import RiskSpec, empirical_cvar, risk_values_on_grid
from .sketch import SketchSpec

REGIMES = ("mle", "pve", "psi2")
TIE_BREAKS = ("lowest", "adversarial")
CI_Z = 1.959963984540054

DEFAULTS = {
    "regimes": list(REGIMES),
    "planner": "cvar_augmented",
    "risk": {"kind": "cvar", "tau": 0.5},
    "n_policies": 50,
    "n_seeds": 20,
    "n_eval_trajectories": 1000,
    "grid": {"n_atoms": 401, "v_min": None, "v_max": None},
    "n_budget": 201,
    "planner_iters": 1000,
    "learn": {"optimizer": "lbfgs", "iters": 5000, "step": 0.1, "k": 1, "p": 2.0, "init_scale": 0.1},
    "mle_samples_per_pair": 10,
    "mle_smoothing": 1e-3,
    "tie_tol": 1e-6,
    "seed": 0,
}

_STREAMS = {"policies": 1, "init": 2, "data": 3, "eval": 4}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvSpec
    regimes: tuple = tuple(DEFAULTS["regimes"])
    planner: str = DEFAULTS["planner"]
    risk: RiskSpec = RiskSpec.cvar(0.5)
    n_policies: int = DEFAULTS["n_policies"]
    n_seeds: int = DEFAULTS["n_seeds"]
    n_eval_trajectories: int = DEFAULTS["n_eval_trajectories"]
    grid: dict = field(default_factory=lambda: dict(DEFAULTS["grid"]))
    n_budget: int = DEFAULTS["n_budget"]
    planner_iters: int = DEFAULTS["planner_iters"]
    learn: dict = field(default_factory=lambda: dict(DEFAULTS["learn"]))
    mle_samples_per_pair: int = DEFAULTS["mle_samples_per_pair"]
    mle_smoothing: float = DEFAULTS["mle_smoothing"]
    tie_tol: float = DEFAULTS["tie_tol"]
    seed: int = DEFAULTS["seed"]
    output: str | None = None

    def __post_init__(self):
        regimes = tuple(self.regimes)
        if not regimes:
            raise ValueError("regimes must be nonempty")
        bad = set(regimes) - set(REGIMES)
        if bad:
            raise ValueError(f"unknown regimes {sorted(bad)}; expected a subset of {REGIMES}")
        object.__setattr__(self, "regimes", tuple(r for r in REGIMES if r in regimes))
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}; expected one of {PLANNERS}")
        if self.planner == "mean_variance" and self.risk.kind != "mean_variance":
            raise ValueError("mean_variance planner needs a mean_variance risk")
        if self.planner != "mean_variance" and self.risk.kind != "cvar":
            raise ValueError(f"{self.planner} planner needs a cvar risk")
        for name in ("n_policies", "n_seeds", "n_eval_trajectories", "n_budget", "planner_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        object.__setattr__(self, "grid", _merge(DEFAULTS["grid"], self.grid))
        object.__setattr__(self, "learn", _merge(DEFAULTS["learn"], self.learn))
        if self.grid["n_atoms"] < 2:
            raise ValueError("grid needs at least two atoms")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "env" not in d:
            raise ValueError("config needs an 'env' entry")
        env = d.pop("env")
        env = EnvSpec(env) if isinstance(env, str) else EnvSpec.from_dict(env)
        risk = RiskSpec.from_dict(d.pop("risk", DEFAULTS["risk"]))
        known = set(cls.__dataclass_fields__) - {"env", "risk"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        if "regimes" in d:
            d["regimes"] = tuple(d["regimes"])
        return cls(env=env, risk=risk, **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env"] = self.env.to_dict()
        d["risk"] = self.risk.to_dict()
        d["regimes"] = list(self.regimes)
        return d

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def stream_seed(master: int, seed_index: int, stream: str) -> list:
    """Entropy for an independent stream keyed by (master seed, seed index, purpose)."""
    return [int(master), int(seed_index), _STREAMS[stream]]


def experiment_grid(config: ExperimentConfig, env: BuiltEnv) -> CategoricalGrid:
    """Configured grid; unset bounds default to the environment's return range."""
    g = config.grid
    lo = env.return_bounds[0] if g["v_min"] is None else g["v_min"]
    hi = env.return_bounds[1] if g["v_max"] is None else g["v_max"]
    return CategoricalGrid(float(lo), float(hi), int(g["n_atoms"]))


def _plan(config: ExperimentConfig, mdp, grid, start_state):
    if config.planner == "mean_variance":
        return mean_variance_vi(mdp, config.risk.lam, tie_tol=config.tie_tol)
    if config.planner == "cvar_augmented":
        return cvar_vi(
            mdp, config.risk.tau, grid, n_budget=config.n_budget, iters=config.planner_iters,
            start_state=start_state, eval_grid=grid,
        )
    return cvar_greedy_vi(
        mdp, config.risk.tau, grid, iters=config.planner_iters, start_state=start_state,
        tie_tol=config.tie_tol, check_bounds=False,
    )


def adversarial_policy(plan_result, true_mdp, risk: RiskSpec, grid: CategoricalGrid, tie_tol: float) -> Policy:
    """Among the model's tied actions in each state, take the one that is worst in the true MDP.

    "Worst" is judged by the risk value of each action's one-step distributional
    backup of the true return law of the model's default (lowest-index) policy.
    """
    base = plan_result.policy
    eta = return_distribution(true_mdp, base, grid, tol=1e-8, check_bounds=False)
    true_q = risk_values_on_grid(risk, action_backups(true_mdp, eta, check_bounds=False), grid.atoms)
    actions = base.greedy_actions().copy()
    for x in range(true_mdp.n_states):
        tied = plan_result.tied_actions(x, tie_tol)
        if tied.size > 1:
            actions[x] = int(tied[np.argmin(true_q[x, tied] + 0.0)])
    return Policy.deterministic(actions, true_mdp.n_actions)


def _fit(regime: str, config: ExperimentConfig, mdp, seed_index: int) -> ApproxModel:
    init_seed = stream_seed(config.seed, seed_index, "init")
    lc = config.learn
    if regime == "mle":
        data = collect_dataset(mdp, config.mle_samples_per_pair, stream_seed(config.seed, seed_index, "data"))
        return mle_model(mdp, data, config.mle_smoothing)
    policies = sample_policies(mdp, config.n_policies, stream_seed(config.seed, seed_index, "policies"))
    sketch = SketchSpec.moments(1 if regime == "pve" else 2)
    return learn_model(
        mdp, policies, sketch, k=lc["k"], p=lc["p"], step=lc["step"], iters=lc["iters"], seed=init_seed,
        reward="expected" if regime == "pve" else "true", optimizer=lc["optimizer"], init_scale=lc["init_scale"],
    )


def _evaluate(config, env, grid, policy, seed_index) -> dict:
    returns = sample_returns(
        env.mdp, policy, env.start_state, env.horizon, config.n_eval_trajectories,
        stream_seed(config.seed, seed_index, "eval"),
    )
    eta = return_distribution(env.mdp, policy, grid, tol=1e-8, check_bounds=False)
    risk = config.risk
    return {
        "empirical_risk": empirical_cvar(returns, risk.tau) if risk.kind == "cvar"
        else float(returns.mean() - risk.lam * returns.var()),
        "empirical_mean": float(returns.mean()),
        "exact_risk": float(risk_values_on_grid(risk, eta.probs[env.start_state], grid.atoms)),
        "actions": "".join(str(a) for a in policy.greedy_actions()),
    }


def run_task(config: ExperimentConfig, regime: str, seed_index: int) -> list:
    """One (regime, seed) cell: fit, plan, then score both tie-break variants in the true MDP."""
    env = build_env(config.env)
    grid = experiment_grid(config, env)
    try:
        if regime == "true":
            model_mdp, loss = env.mdp, 0.0
        else:
            model = _fit(regime, config, env.mdp, seed_index)
            model_mdp, loss = model.to_mdp(), model.provenance.get("final_loss", float("nan"))
    except FloatingPointError as err:
        raise FloatingPointError(f"regime={regime} seed={seed_index}: {err}") from err
    result = _plan(config, model_mdp, grid, env.start_state)
    policies = {"lowest": result.policy}
    policies["adversarial"] = adversarial_policy(result, env.mdp, config.risk, grid, config.tie_tol)
    rows = []
    for tb in TIE_BREAKS:
        ev = _evaluate(config, env, grid, policies[tb], seed_index)
        rows.append({"regime": regime, "seed": seed_index, "tie_break": tb, "train_loss": loss, **ev})
    return rows


def aggregate(values) -> dict:
    """Mean and normal-approximation 95% CI; exact summation, so independent of input order."""
    v = sorted(float(x) for x in values)
    n = len(v)
    mean = math.fsum(v) / n
    var = math.fsum((x - mean) ** 2 for x in v) / (n - 1) if n > 1 else 0.0
    half = CI_Z * math.sqrt(var / n)
    return {"n": n, "mean": mean, "std": math.sqrt(var), "ci_low": mean - half, "ci_high": mean + half}


COLUMNS = (
    "regime", "seed", "tie_break", "train_loss", "empirical_risk", "empirical_mean", "exact_risk", "actions",
)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_table(config: ExperimentConfig, rows: list) -> str:
    header = [
        "# per (regime, seed, tie_break): policy planned in the learned model, scored in the true environment",
        f"# env={config.env.name} planner={config.planner} risk={json.dumps(config.risk.to_dict(), sort_keys=True)}",
        "# regime: true = plan in the true MDP (reference); mle; pve = mean-only (moments(1)) equivalence, "
        "expected rewards; psi2 = first-two-moment equivalence",
        "# tie_break: lowest = lowest-index among model-tied actions; adversarial = the tied action worst in "
        "the true environment",
        "# train_loss: final training loss of the model (0 for true)",
        "# empirical_risk: risk of n_eval_trajectories Monte Carlo returns from the start state",
        "# empirical_mean: mean of the same returns",
        "# exact_risk: risk of the categorical return law of the policy in the true MDP at the start state",
        "# actions: greedy action per state (0=up 1=right 2=down 3=left on grids)",
        "\t".join(COLUMNS),
    ]
    body = ["\t".join(_fmt(r[c]) for c in COLUMNS) for r in rows]
    return "\n".join(header + body) + "\n"


def summarize(config: ExperimentConfig, rows: list) -> dict:
    env = build_env(config.env)
    groups = {}
    for r in rows:
        groups.setdefault((r["regime"], r["tie_break"]), []).append(r)
    agg = {}
    for (regime, tb), rs in sorted(groups.items()):
        agg[f"{regime}/{tb}"] = {
            "empirical_risk": aggregate(r["empirical_risk"] for r in rs),
            "empirical_mean": aggregate(r["empirical_mean"] for r in rs),
            "exact_risk": aggregate(r["exact_risk"] for r in rs),
        }
    return {
        "version": __version__,
        "rng": RNG_ALGORITHM,
        "config": config.to_dict(),
        "defaults": DEFAULTS,
        "env_metadata": env.metadata(),
        "grid": experiment_grid(config, env).to_dict(),
        "notes": {
            "pve": "value equivalence as the first-moment case of statistic equivalence, with rewards replaced by "
            "their means",
            "ci": "normal approximation, mean +- 1.96 * std / sqrt(n_seeds)",
        },
        "aggregates": agg,
    }


def run_rows(config: ExperimentConfig, jobs: int = 1) -> list:
    tasks = [("true", 0)] + [(regime, s) for regime in config.regimes for s in range(config.n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(run_task, [config] * len(tasks), *zip(*tasks)))
    else:
        chunks = [run_task(config, r, s) for r, s in tasks]
    order = {"true": -1, **{r: i for i, r in enumerate(REGIMES)}}
    rows = [row for chunk in chunks for row in chunk]
    return sorted(rows, key=lambda r: (order[r["regime"]], r["seed"], TIE_BREAKS.index(r["tie_break"])))


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Run every (regime, seed) cell and write ``results.tsv`` and ``summary.json`` under ``out_dir``."""
    rows = run_rows(config, jobs)
    summary = summarize(config, rows)
    out_dir = out_dir or config.output
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.tsv").write_text(results_table(config, rows))
        write_json(out / "summary.json", summary)
    summary["rows"] = rows
    return summary


def export_model(path, model) -> Path:
    return write_json(path, model_to_dict(model))
