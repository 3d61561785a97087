# %% [markdown]
# One state, two actions: a safe action paying 0 and a coin flip paying +-1.
# Every policy has value 0, so a model that replaces the coin flip by a sure 0
# matches all values, yet it cannot tell the actions apart under CVaR.

# %%
import numpy as np

from distequiv import (
    CategoricalGrid,
    Criterion,
    Policy,
    RiskSpec,
    SketchSpec,
    fig1_counterexample,
    membership_check,
    pve_model_of_fig1,
    return_distribution,
    sf_dp,
)
from distequiv.distdp import wasserstein1_to_uniform
from distequiv.planning import cvar_greedy_vi
from distequiv.risk import risk_values_on_grid

true, model = fig1_counterexample(c=1.0, gamma=0.5), pve_model_of_fig1()
safe, risky = Policy.deterministic([0], 2), Policy.deterministic([1], 2)
grid = CategoricalGrid.for_mdp(true, 401)

# %% return law of always taking the coin flip: uniform on [-2, 2]
eta = return_distribution(true, risky, grid)[0]
print("W1 to U[-2, 2]:", wasserstein1_to_uniform(eta, -2, 2))
print("first two moments:", sf_dp(true, risky))  # (0, 4/3)

# %% the model matches every value but not the second moment
for sketch in (SketchSpec.moments(1), SketchSpec.moments(2)):
    rep = membership_check(model, true, [safe, risky], Criterion.psi_proper(sketch), 1e-8)
    print(sketch.kind, sketch.m, "passed:", rep.all_passed, "max deviation:", rep.max_deviation)

# %% CVaR(0.5) of each action in the true MDP and in the model
risk = RiskSpec.cvar(0.5)
for name, mdp in (("true", true), ("model", model)):
    vals = [risk_values_on_grid(risk, return_distribution(mdp, p, grid).probs, grid.atoms)[0] for p in (safe, risky)]
    print(name, "CVaR(safe), CVaR(risky):", np.round(vals, 4))

# %% the model's planner sees a tie; if the tie goes the wrong way the true loss is 1.0
plan = cvar_greedy_vi(model, 0.5, grid)
print("tied actions in the model:", plan.tied_actions(0))
