# %% [markdown]
# Fit mean-only and first-two-moment models on a random MDP and on Windy
# Cliffs, then plan for risk in each model and score the plans in the true
# environment. Sizes are kept small so the script runs in a few minutes.

# %%
import numpy as np

from distequiv import ExperimentConfig, SketchSpec, learn_model, mean_variance_vi, random_mdp, run_experiment, sample_policies
from distequiv.model_learn import Criterion, membership_check

# %% a random 4-state MDP: the mean-only model keeps only expected rewards
mdp = random_mdp(4, 2, seed=3)
policies = sample_policies(mdp, 50, seed=0)
for m, reward in ((1, "expected"), (2, "true")):
    model = learn_model(mdp, policies, SketchSpec.moments(m), seed=1, iters=3000, reward=reward)
    rep = membership_check(model, mdp, policies, Criterion.psi_proper(SketchSpec.moments(2)), 1e-6)
    same = np.array_equal(mean_variance_vi(model, 0.5).actions(), mean_variance_vi(mdp, 0.5).actions())
    print(f"moments({m}): loss {model.provenance['final_loss']:.2e}, "
          f"second-moment deviation {rep.max_deviation:.2e}, same mean-variance plan: {same}")

# %% Windy Cliffs with a handful of seeds
cfg = ExperimentConfig.from_dict({
    "env": "windy_cliffs",
    "regimes": ["pve", "psi2"],
    "n_seeds": 3,
    "n_eval_trajectories": 500,
    "learn": {"iters": 200},
})
summary = run_experiment(cfg)
for key, agg in summary["aggregates"].items():
    r = agg["empirical_risk"]
    print(f"{key:20s} CVaR(0.5) {r['mean']:+.3f}  [{r['ci_low']:+.3f}, {r['ci_high']:+.3f}]")
