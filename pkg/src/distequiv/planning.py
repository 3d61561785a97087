"""Risk-sensitive planners: mean-variance VI, budget-augmented CVaR VI and CVaR-greedy distributional VI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Policy, as_mdp
from .distdp import CategoricalGrid, ReturnFunction, action_backups, return_distribution
from .risk import RiskSpec, risk_values_on_grid
from .sketch import action_moment_backups

TIE_TOL = 1e-10
SCREEN_ATOMS = 101
SCREEN_TOL = 1e-5


@dataclass
class PlanResult:
    policy: Policy
    values: np.ndarray  # per-state objective of ``policy``
    iterations: int
    converged: bool
    action_values: np.ndarray  # (S, A) planner-internal per-action objective
    info: dict = field(default_factory=dict)

    def actions(self) -> np.ndarray:
        return self.policy.greedy_actions()

    def tied_actions(self, x: int, tol: float = TIE_TOL) -> np.ndarray:
        row = self.action_values[x]
        return np.nonzero(row >= row.max() - tol)[0]


def argmax_lowest(values: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Row-wise argmax over the last axis, resolving near-ties to the lowest index."""
    values = np.asarray(values, dtype=float)
    return np.argmax(values >= values.max(axis=-1, keepdims=True) - tol, axis=-1)


def mean_variance_vi(
    mdp, lam: float, theta: float = 1e-8, max_sweeps: int = 100_000, tie_tol: float = TIE_TOL
) -> PlanResult:
    """Greedy value iteration on (mean, second moment) for ``mean - lam * variance``."""
    if lam <= 0 or theta <= 0:
        raise ValueError("lam and theta must be positive")
    mdp = as_mdp(mdp)
    s = np.zeros((mdp.n_states, 2))
    idx = np.arange(mdp.n_states)
    converged = False
    for sweep in range(1, max_sweeps + 1):
        q = action_moment_backups(mdp, s)
        objective = q[..., 0] - lam * (q[..., 1] - q[..., 0] ** 2)
        actions = argmax_lowest(objective, tie_tol)
        new = q[idx, actions]
        var_old = s[:, 1] - s[:, 0] ** 2
        var_new = new[:, 1] - new[:, 0] ** 2
        delta = max(np.max(np.abs(new[:, 0] - s[:, 0])), np.max(np.abs(var_new - var_old)))
        s = new
        if delta < theta:
            converged = True
            break
    return PlanResult(
        Policy.deterministic(actions, mdp.n_actions),
        objective[idx, actions],
        sweep,
        converged,
        objective,
        {"moments": s},
    )


def _budget_levels(mdp, grid, n_budget):
    lo, hi = (grid.v_min, grid.v_max) if grid is not None else (-mdp.v_max, mdp.v_max)
    return np.linspace(lo, hi, n_budget)


def _interp_rows(w: np.ndarray, budgets: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Evaluate each row of ``w`` (a function of budget) at ``query``.

    Linear in between levels; zero below the lowest level and slope one above
    the highest, which is exact for ``E[(c - G)^+]`` outside the return range.
    """
    n = budgets.size
    step = budgets[1] - budgets[0]
    pos = np.clip((query - budgets[0]) / step, 0, n - 1)
    lower = np.minimum(np.floor(pos).astype(int), n - 2)
    frac = pos - lower
    out = w[:, lower] * (1 - frac) + w[:, lower + 1] * frac
    above = query > budgets[-1]
    out[:, above] = w[:, [-1]] + (query[above] - budgets[-1])
    out[:, query < budgets[0]] = 0.0
    return out


def cvar_vi(
    mdp,
    tau: float,
    grid: CategoricalGrid | None = None,
    n_budget: int = 65,
    iters: int = 1000,
    start_state: int = 0,
    tol: float = 1e-10,
    eval_grid: CategoricalGrid | None = None,
    extract: str = "all_budgets",
) -> PlanResult:
    """Static CVaR planning on the budget-augmented state space.

    Uses ``CVaR_tau(G) = max_b b - E[(b - G)^+] / tau`` and iterates the
    shortfall table ``W(x, c) = min_a E[(c - R - gamma G')^+]`` on a grid of
    budget levels. Optimal CVaR policies need the budget as memory; a
    stationary one is extracted instead. ``extract="start_budget"`` takes the
    greedy policy at the budget best for ``start_state``; ``"all_budgets"``
    takes the greedy policy at every budget level, evaluates each distinct one
    distributionally and keeps the best at ``start_state``.
    """
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    if n_budget < 2 or iters < 1:
        raise ValueError("need n_budget >= 2 and iters >= 1")
    mdp = as_mdp(mdp)
    budgets = _budget_levels(mdp, grid, n_budget)
    values, weights = mdp.reward_table
    g = mdp.gamma

    def q_table(w):
        q = np.zeros((mdp.n_states, mdp.n_actions, n_budget))
        for k, r in enumerate(values):
            if g == 0:
                shifted = np.maximum(budgets - r, 0.0)[None, None, :]
            else:
                shifted = g * (mdp.transition @ _interp_rows(w, budgets, (budgets - r) / g))
            q += weights[k][..., None] * shifted
        return q

    w = np.tile(np.maximum(budgets, 0.0), (mdp.n_states, 1))
    converged = False
    for it in range(1, iters + 1):
        q = q_table(w)
        w_new = q.min(axis=1)
        delta = np.max(np.abs(w_new - w))
        w = w_new
        if delta < tol:
            converged = True
            break
    q = q_table(w)
    objective = budgets[None, :] - w / tau
    row = objective[start_state]
    eval_grid = eval_grid or grid or CategoricalGrid.for_mdp(mdp)
    risk = RiskSpec.cvar(tau)
    if extract == "start_budget":
        budget_order = [int(np.nonzero(row >= row.max() - 1e-9)[0][-1])]
    elif extract == "all_budgets":
        budget_order = list(np.argsort(-row, kind="stable"))
    else:
        raise ValueError(f"unknown extract mode {extract!r}")
    # greedy stationary policy at each budget level, screened on a coarse grid in the same MDP
    screen = CategoricalGrid(eval_grid.v_min, eval_grid.v_max, min(eval_grid.n_atoms, SCREEN_ATOMS))
    best, seen = None, {}
    for j in budget_order:
        action_values = budgets[j] - q[:, :, j] / tau
        actions = argmax_lowest(action_values)
        key = actions.tobytes()
        if key in seen:
            continue
        policy = Policy.deterministic(actions, mdp.n_actions)
        seen[key] = True
        if len(budget_order) > 1:
            coarse = return_distribution(mdp, policy, screen, tol=SCREEN_TOL, check_bounds=False)
            score = risk_values_on_grid(risk, coarse.probs[start_state], screen.atoms)
        else:
            score = 0.0
        if best is None or score > best[2] + 1e-12:
            best = (j, policy, score, action_values)
    j_star, policy, _, action_values = best
    eta = return_distribution(mdp, policy, eval_grid, check_bounds=False)
    cvar = risk_values_on_grid(risk, eta.probs, eval_grid.atoms)
    return PlanResult(
        policy,
        cvar,
        it,
        converged,
        action_values,
        {
            "budget": float(budgets[j_star]),
            "budget_objective": objective,
            "return_distribution": eta,
            "candidates": len(seen),
        },
    )


def cvar_greedy_vi(
    mdp,
    tau: float,
    grid: CategoricalGrid | None = None,
    iters: int = 500,
    start_state: int = 0,
    tol: float = 1e-8,
    window: int = 20,
    tie_tol: float = TIE_TOL,
    risk: RiskSpec | None = None,
    check_bounds: bool = True,
) -> PlanResult:
    """Distributional value iteration that acts greedily w.r.t. CVaR of each action's backup.

    The iteration need not settle; the policies visited during the last
    ``window`` sweeps are evaluated and the one best at ``start_state`` returned.
    """
    mdp = as_mdp(mdp)
    risk = risk or RiskSpec.cvar(tau)
    grid = grid or CategoricalGrid.for_mdp(mdp)
    atoms = grid.atoms
    idx = np.arange(mdp.n_states)
    eta = ReturnFunction.dirac(grid, mdp.n_states)
    history = []
    converged = False
    prev_actions = None
    for it in range(1, iters + 1):
        backups = action_backups(mdp, eta, check_bounds=check_bounds)
        action_values = risk_values_on_grid(risk, backups, atoms)
        actions = argmax_lowest(action_values, tie_tol)
        new = ReturnFunction(grid, backups[idx, actions])
        delta = np.max(np.abs(new.probs - eta.probs).sum(axis=1))
        eta = new
        history.append(tuple(actions))
        if prev_actions is not None and np.array_equal(actions, prev_actions) and delta < tol:
            converged = True
            break
        prev_actions = actions

    candidates = list(dict.fromkeys(history[-window:]))
    best = None
    for cand in candidates:
        pol = Policy.deterministic(cand, mdp.n_actions)
        if converged and len(candidates) == 1:
            cand_eta = eta
        else:
            cand_eta = return_distribution(mdp, pol, grid, tol=tol, check_bounds=check_bounds)
        vals = risk_values_on_grid(risk, cand_eta.probs, atoms)
        if best is None or vals[start_state] > best[1][start_state] + tie_tol:
            best = (pol, vals, cand_eta)
    policy, vals, best_eta = best
    return PlanResult(
        policy, vals, it, converged, action_values, {"return_distribution": best_eta, "candidates": len(candidates)}
    )


def evaluate_risk(mdp, policy: Policy, risk: RiskSpec, grid: CategoricalGrid | None = None, tol: float = 1e-8):
    """Per-state risk value of ``policy``'s categorical return distribution."""
    mdp = as_mdp(mdp)
    grid = grid or CategoricalGrid.for_mdp(mdp)
    eta = return_distribution(mdp, policy, grid, tol=tol, check_bounds=False)
    return risk_values_on_grid(risk, eta.probs, grid.atoms)


PLANNERS = ("mean_variance", "cvar_augmented", "cvar_greedy")


def plan(mdp, planner: str, risk: RiskSpec, grid: CategoricalGrid | None = None, **params) -> PlanResult:
    """Dispatch by planner name (``mean_variance``, ``cvar_augmented``, ``cvar_greedy``)."""
    if planner == "mean_variance":
        if risk.kind != "mean_variance":
            raise ValueError("mean_variance planner needs a mean_variance risk spec")
        return mean_variance_vi(mdp, risk.lam, **params)
    if risk.kind != "cvar":
        raise ValueError(f"{planner} planner needs a cvar risk spec")
    if planner == "cvar_augmented":
        return cvar_vi(mdp, risk.tau, grid, **params)
    if planner == "cvar_greedy":
        return cvar_greedy_vi(mdp, risk.tau, grid, **params)
    raise ValueError(f"unknown planner {planner!r}; expected one of {PLANNERS}")
