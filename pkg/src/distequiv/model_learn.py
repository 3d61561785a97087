"""Approximate models, MLE fitting, statistical-functional equivalence losses and membership checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from .core import DiscreteDistribution, Policy, TabularMDP, as_mdp, make_rng
from .distdp import CategoricalGrid, ReturnFunction, distributional_backup, return_distribution
from .sketch import SketchSpec, exact_moments, moment_backup

log = logging.getLogger(__name__)

_NEG_LOGIT = -np.inf  # zero-probability entries stay exactly zero after softmax


@dataclass(frozen=True, eq=False)
class ApproxModel:
    """Learnable transition table (full or low-rank logits) plus a fixed reward kernel.

    Full parameterization: ``logits[x, a, y]``. Low-rank: rows are
    ``softmax(u[x] @ v[a])`` with ``u: (S, rank)`` and ``v: (A, rank, S)``.
    """

    reward: tuple
    gamma: float
    r_max: float
    logits: np.ndarray | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.logits is None) == (self.u is None or self.v is None):
            raise ValueError("give either full logits or the low-rank pair (u, v)")
        object.__setattr__(self, "reward", tuple(tuple(r) for r in self.reward))

    @classmethod
    def from_transition(cls, transition, reward, gamma, r_max, provenance=None) -> "ApproxModel":
        p = np.asarray(transition, dtype=float)
        logits = np.full(p.shape, _NEG_LOGIT)
        np.log(p, out=logits, where=p > 0)
        return cls(reward, gamma, r_max, logits=logits, provenance=dict(provenance or {}))

    @classmethod
    def from_mdp(cls, mdp: TabularMDP, provenance=None) -> "ApproxModel":
        return cls.from_transition(mdp.transition, mdp.reward, mdp.gamma, mdp.r_max, provenance)

    @property
    def rank(self) -> int | None:
        return None if self.u is None else self.u.shape[1]

    @property
    def transition(self) -> np.ndarray:
        if self.logits is not None:
            return softmax(self.logits, axis=2)
        return softmax(np.einsum("xr,ary->xay", self.u, self.v), axis=2)

    def to_mdp(self) -> TabularMDP:
        return TabularMDP(self.transition, self.reward, self.gamma, self.r_max)

    def with_expected_rewards(self) -> "ApproxModel":
        """Replace every reward law by a point mass at its mean."""
        reward = [[DiscreteDistribution.dirac(d.mean()) for d in row] for row in self.reward]
        return ApproxModel(reward, self.gamma, self.r_max, self.logits, self.u, self.v, dict(self.provenance))


@dataclass(frozen=True)
class PolicySet:
    policies: tuple
    seed: object = None

    def __post_init__(self):
        if len(self.policies) == 0:
            raise ValueError("policy set must be nonempty")
        object.__setattr__(self, "policies", tuple(self.policies))

    def __len__(self):
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    def __getitem__(self, i):
        return self.policies[i]

    def stack(self) -> np.ndarray:
        return np.stack([p.action_probs for p in self.policies])


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    @classmethod
    def from_tuples(cls, rows: Sequence[tuple]) -> "TransitionDataset":
        if len(rows) == 0:
            return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0, int))
        x, a, r, y = zip(*rows)
        return cls(np.array(x, int), np.array(a, int), np.array(r, float), np.array(y, int))

    def __len__(self):
        return self.states.size

    def validate(self, n_states: int, n_actions: int):
        if len(self) and (
            self.states.max() >= n_states or self.next_states.max() >= n_states or self.actions.max() >= n_actions
            or min(self.states.min(), self.next_states.min(), self.actions.min()) < 0
        ):
            raise ValueError("dataset indices out of range")


def sample_policies(mdp, count: int, seed) -> PolicySet:
    """``count`` policies whose rows are drawn uniformly from the action simplex."""
    if count < 1:
        raise ValueError("count must be >= 1")
    mdp = as_mdp(mdp)
    rng = make_rng(seed)
    probs = rng.dirichlet(np.ones(mdp.n_actions), size=(count, mdp.n_states))
    return PolicySet(tuple(Policy(p) for p in probs), seed)


def collect_dataset(mdp, samples_per_pair: int, seed) -> TransitionDataset:
    """Generative-model data: ``samples_per_pair`` draws of reward and next state for every pair."""
    mdp = as_mdp(mdp)
    rng = make_rng(seed)
    xs, as_, rs, ys = [], [], [], []
    for x in range(mdp.n_states):
        for a in range(mdp.n_actions):
            dist = mdp.reward[x][a]
            xs.append(np.full(samples_per_pair, x))
            as_.append(np.full(samples_per_pair, a))
            rs.append(rng.choice(dist.atoms, size=samples_per_pair, p=dist.probs))
            ys.append(rng.choice(mdp.n_states, size=samples_per_pair, p=mdp.transition[x, a]))
    return TransitionDataset(np.concatenate(xs), np.concatenate(as_), np.concatenate(rs), np.concatenate(ys))


def _shape(mdp_shape):
    if hasattr(mdp_shape, "to_mdp"):
        m = as_mdp(mdp_shape)
        return m.n_states, m.n_actions, m.gamma, m.r_max
    return tuple(mdp_shape)


def mle_rewards(n_states: int, n_actions: int, data: TransitionDataset) -> list:
    """Empirical reward law per pair; ``delta_0`` where a pair was never visited."""
    reward = [[None] * n_actions for _ in range(n_states)]
    for x in range(n_states):
        for a in range(n_actions):
            sel = (data.states == x) & (data.actions == a)
            reward[x][a] = (
                DiscreteDistribution.from_samples(data.rewards[sel]) if sel.any() else DiscreteDistribution.dirac(0.0)
            )
    return reward


def mle_model(mdp_shape, data: TransitionDataset, smoothing: float = 1e-3) -> ApproxModel:
    """Smoothed count estimate of the transitions and empirical reward laws."""
    n_states, n_actions, gamma, r_max = _shape(mdp_shape)
    data.validate(n_states, n_actions)
    counts = np.zeros((n_states, n_actions, n_states))
    np.add.at(counts, (data.states, data.actions, data.next_states), 1.0)
    totals = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = (counts + smoothing) / (totals + smoothing * n_states)
    p = np.where(totals > 0, p, 1.0 / n_states)
    p /= p.sum(axis=2, keepdims=True)
    return ApproxModel.from_transition(
        p,
        mle_rewards(n_states, n_actions, data),
        gamma,
        r_max,
        {"loss": "mle", "smoothing": smoothing, "n_samples": len(data)},
    )


def _moments_or_raise(sketch: SketchSpec) -> int:
    if sketch.kind != "moments" or sketch.m > 2:
        raise ValueError("closed-form equivalence losses support moments(1) and moments(2) sketches")
    return sketch.m


def _loss_and_grad(transition, pis, stats, r1, r2, gamma, k, p, need_grad=True):
    """Loss ``sum |s - (T_model)^k s|^p`` over policies/states/components and its gradient in ``transition``.

    Works internally in ``(state, policy, component)`` layout so every
    expectation over next states is a single matrix product.
    """
    S, A, _ = transition.shape
    n, _, m = stats.shape
    p2 = transition.reshape(S * A, S)
    pit = pis.transpose(1, 2, 0)  # (S, A, n)
    r1e, r2e = r1[..., None], r2[..., None]
    s0 = np.ascontiguousarray(stats.transpose(1, 0, 2))  # (S, n, m)
    traj = [s0]
    s = s0
    for _ in range(k):
        ps = (p2 @ s.reshape(S, n * m)).reshape(S, A, n, m)
        nxt = np.empty_like(s)
        nxt[..., 0] = np.sum(pit * (r1e + gamma * ps[..., 0]), axis=1)
        if m == 2:
            nxt[..., 1] = np.sum(pit * (r2e + 2 * gamma * r1e * ps[..., 0] + gamma**2 * ps[..., 1]), axis=1)
        traj.append(nxt)
        s = nxt
    dev = s0 - s
    loss = float(np.sum(np.abs(dev) ** p))
    if not need_grad:
        return loss, None
    g = -p * np.abs(dev) ** (p - 1) * np.sign(dev)
    grad = np.zeros((S * A, S))
    coef = np.empty((S, A, n, m))
    for t in range(k - 1, -1, -1):
        coef[..., 0] = pit * gamma * g[:, None, :, 0]
        if m == 2:
            coef[..., 0] += pit * 2 * gamma * r1e * g[:, None, :, 1]
            coef[..., 1] = pit * gamma**2 * g[:, None, :, 1]
        flat = coef.reshape(S * A, n * m)
        grad += flat @ traj[t].reshape(S, n * m).T
        if t > 0:
            g = (p2.T @ flat).reshape(S, n, m)
    return loss, grad.reshape(S, A, S)


def true_statistics(mdp, policies, sketch: SketchSpec) -> np.ndarray:
    """``s^pi_psi`` for every policy, shape ``(n_policies, S, m)`` in sketch coordinates."""
    return sketch.from_moments(exact_moments(mdp, list(policies), 2)[..., : sketch.m])


def equivalence_loss(true_stats, model, policies, sketch: SketchSpec = SketchSpec(), k: int = 1, p: float = 2.0) -> float:
    """``sum_pi || s^pi - (T^pi_{psi, model})^k s^pi ||_p^p`` with exact moment backups.

    ``moments(1)`` gives the proper value-equivalence loss.
    """
    if k < 1 or p < 1:
        raise ValueError("need k >= 1 and p >= 1")
    mdp = as_mdp(model)
    pis = np.stack([pol.action_probs for pol in policies])
    stats = np.asarray(true_stats, dtype=float)
    if stats.ndim == 2:
        stats = stats[..., None]
    if stats.shape != (pis.shape[0], mdp.n_states, sketch.m):
        raise ValueError(f"true_stats has shape {stats.shape}, expected {(pis.shape[0], mdp.n_states, sketch.m)}")
    if sketch.kind == "mean_variance":
        # evaluate in moment space, compare in sketch space
        total = 0.0
        for pi, s in zip(policies, stats):
            mom = sketch.to_moments(s)
            for _ in range(k):
                mom = moment_backup(mdp, pi, mom, 2)
            total += float(np.sum(np.abs(s - sketch.from_moments(mom)) ** p))
        return total
    _moments_or_raise(sketch)
    loss, _ = _loss_and_grad(
        mdp.transition, pis, stats, mdp.reward_mean, mdp.reward_second_moment, mdp.gamma, k, p, need_grad=False
    )
    return loss


def learn_model(
    mdp,
    policies: PolicySet,
    sketch: SketchSpec = SketchSpec(),
    k: int = 1,
    rank: int | None = None,
    step: float = 0.1,
    iters: int = 5000,
    seed=0,
    data: TransitionDataset | None = None,
    reward: str | None = None,
    p: float = 2.0,
    init_scale: float = 0.1,
    target_loss: float = 0.0,
    true_stats: np.ndarray | None = None,
    optimizer: str = "lbfgs",
) -> ApproxModel:
    """Fit transition logits to minimize :func:`equivalence_loss`.

    ``optimizer="gd"`` runs ``iters`` plain gradient steps of size ``step``;
    ``"lbfgs"`` runs scipy's L-BFGS-B for at most ``iters`` iterations on the
    same analytic gradient. Either way the lowest-loss iterate is returned.
    ``reward`` selects the fixed reward kernel: ``"true"`` (default without
    data), ``"mle"`` (default with data) or ``"expected"`` (point masses at the
    true mean rewards, the reward model of value-equivalence methods).
    """
    mdp = as_mdp(mdp)
    m = _moments_or_raise(sketch)
    if optimizer not in ("gd", "lbfgs"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    reward = reward or ("mle" if data is not None else "true")
    if reward == "mle":
        if data is None:
            raise ValueError("reward='mle' requires data")
        reward_kernel = mle_rewards(mdp.n_states, mdp.n_actions, data)
    elif reward == "true":
        reward_kernel = mdp.reward
    elif reward == "expected":
        reward_kernel = [[DiscreteDistribution.dirac(d.mean()) for d in row] for row in mdp.reward]
    else:
        raise ValueError(f"unknown reward mode {reward!r}")
    base = TabularMDP(mdp.transition, reward_kernel, mdp.gamma, mdp.r_max)
    r1, r2 = base.reward_mean, base.reward_second_moment

    if not isinstance(policies, PolicySet):
        policies = PolicySet(policies)
    pis = policies.stack()
    stats = true_statistics(mdp, policies, sketch) if true_stats is None else np.asarray(true_stats, float)
    rng = make_rng(seed)
    S, A = mdp.n_states, mdp.n_actions
    shapes = [(S, A, S)] if rank is None else [(S, rank), (A, rank, S)]
    theta0 = np.concatenate([rng.normal(0.0, init_scale, size=sh).ravel() for sh in shapes])

    def unpack(theta):
        out, i = [], 0
        for sh in shapes:
            n = int(np.prod(sh))
            out.append(theta[i : i + n].reshape(sh))
            i += n
        return out

    best = {"loss": np.inf, "theta": theta0.copy(), "evals": 0}

    def objective(theta):
        ps = unpack(theta)
        logits = ps[0] if rank is None else np.einsum("xr,ary->xay", ps[0], ps[1])
        trans = softmax(logits, axis=2)
        loss, grad_p = _loss_and_grad(trans, pis, stats, r1, r2, mdp.gamma, k, p)
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"non-finite equivalence loss after {best['evals']} evaluations ({optimizer}, step={step})"
            )
        best["evals"] += 1
        if loss < best["loss"]:
            best["loss"], best["theta"] = loss, theta.copy()
        grad_logits = trans * (grad_p - np.sum(trans * grad_p, axis=2, keepdims=True))
        if rank is None:
            return loss, grad_logits.ravel()
        gu = np.einsum("xay,ary->xr", grad_logits, ps[1])
        gv = np.einsum("xr,xay->ary", ps[0], grad_logits)
        return loss, np.concatenate([gu.ravel(), gv.ravel()])

    if optimizer == "gd":
        theta = theta0.copy()
        for _ in range(iters):
            loss, grad = objective(theta)
            if loss <= target_loss:
                break
            theta -= step * grad
        else:
            objective(theta)
    else:
        try:
            minimize(
                objective,
                theta0,
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": iters, "gtol": 1e-14, "ftol": 1e-22},
                callback=_stop_below(best, target_loss),
            )
        except _TargetReached:
            pass

    provenance = {
        "loss": "value_equivalence" if m == 1 else "psi_equivalence",
        "sketch": sketch.to_dict(),
        "k": k,
        "p": p,
        "rank": rank,
        "seed": seed if isinstance(seed, (int, str)) else repr(seed),
        "reward": reward,
        "optimizer": optimizer,
        "step": step,
        "iters": iters,
        "evaluations": best["evals"],
        "n_policies": len(policies),
        "final_loss": best["loss"],
    }
    log.debug("learned model: %s", provenance)
    ps = unpack(best["theta"])
    if rank is None:
        return ApproxModel(reward_kernel, mdp.gamma, mdp.r_max, logits=ps[0], provenance=provenance)
    return ApproxModel(reward_kernel, mdp.gamma, mdp.r_max, u=ps[0], v=ps[1], provenance=provenance)


class _TargetReached(Exception):
    pass


def _stop_below(best, target):
    def callback(*_):
        if best["loss"] <= target:
            raise _TargetReached
    return callback


def sample_based_loss(model, data: TransitionDataset, stat_table, draws: int = 1, seed=0) -> float:
    """Monte Carlo estimate of ``E[(s(x') - s(x~'))^2]`` with ``x~' ~ model(. | x, a)``."""
    if len(data) == 0:
        raise ValueError("sample_based_loss needs a nonempty dataset")
    trans = as_mdp(model).transition
    stat = np.asarray(stat_table, dtype=float)
    if stat.ndim == 1:
        stat = stat[:, None]
    rng = make_rng(seed)
    cdf = np.cumsum(trans[data.states, data.actions], axis=1)  # (N, S)
    u = rng.random((draws, len(data)))
    sampled = (cdf[None, :, :] < (u * cdf[:, -1])[..., None]).sum(axis=2)
    sampled = np.minimum(sampled, trans.shape[2] - 1)
    diff = stat[data.next_states][None] - stat[sampled]
    return float(np.mean(np.sum(diff**2, axis=-1)))


def expected_sample_based_loss(model, data: TransitionDataset, stat_table) -> float:
    """Closed form of :func:`sample_based_loss` in the infinite-draw limit."""
    trans = as_mdp(model).transition
    stat = np.asarray(stat_table, dtype=float)
    if stat.ndim == 1:
        stat = stat[:, None]
    rows = trans[data.states, data.actions]  # (N, S)
    sq = np.sum((stat[data.next_states][:, None, :] - stat[None, :, :]) ** 2, axis=-1)  # (N, S)
    return float(np.mean(np.sum(rows * sq, axis=1)))


@dataclass(frozen=True)
class Criterion:
    """Equivalence-class membership criterion: ``dist``, ``dist_proper``, ``psi`` or ``psi_proper``."""

    kind: str
    k: int = 1
    sketch: SketchSpec | None = None

    def __post_init__(self):
        if self.kind not in ("dist", "dist_proper", "psi", "psi_proper"):
            raise ValueError(f"unknown criterion {self.kind!r}")
        if self.kind.startswith("psi") and self.sketch is None:
            raise ValueError("psi criteria need a sketch")

    @classmethod
    def dist(cls, k: int = 1) -> "Criterion":
        return cls("dist", k)

    @classmethod
    def dist_proper(cls) -> "Criterion":
        return cls("dist_proper")

    @classmethod
    def psi(cls, sketch: SketchSpec, k: int = 1) -> "Criterion":
        return cls("psi", k, sketch)

    @classmethod
    def psi_proper(cls, sketch: SketchSpec) -> "Criterion":
        return cls("psi_proper", 1, sketch)


@dataclass
class MembershipReport:
    criterion: Criterion
    tol: float
    deviations: np.ndarray  # one per policy

    @property
    def passed(self) -> np.ndarray:
        return self.deviations <= self.tol

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviations))


def grid_w1(probs_a: np.ndarray, probs_b: np.ndarray, spacing: float) -> np.ndarray:
    """Per-row 1-Wasserstein distance between categorical laws on the same grid."""
    return spacing * np.sum(np.abs(np.cumsum(probs_a - probs_b, axis=-1)[..., :-1]), axis=-1)


def membership_check(
    model,
    mdp,
    policies,
    criterion: Criterion,
    tol: float,
    grid: CategoricalGrid | None = None,
    dist_tol: float = 1e-10,
) -> MembershipReport:
    """Largest deviation per policy between model and true MDP under ``criterion``.

    Distribution criteria measure 1-Wasserstein distance on the categorical
    grid; statistic criteria measure the largest absolute sketch difference.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    model_mdp, true_mdp = as_mdp(model), as_mdp(mdp)
    devs = []
    if criterion.kind.startswith("psi"):
        sk = criterion.sketch
        for pi in policies:
            s_true = sk.from_moments(exact_moments(true_mdp, pi, 2)[:, : sk.m])
            if criterion.kind == "psi_proper":
                s_model = sk.from_moments(exact_moments(model_mdp, pi, 2)[:, : sk.m])
            else:
                mom = sk.to_moments(s_true)
                for _ in range(criterion.k):
                    mom = moment_backup(model_mdp, pi, mom, sk.m)
                s_model = sk.from_moments(mom)
            devs.append(np.max(np.abs(s_true - s_model)))
        return MembershipReport(criterion, tol, np.array(devs))

    grid = grid or CategoricalGrid.for_mdp(true_mdp)
    for pi in policies:
        eta_true = return_distribution(true_mdp, pi, grid, tol=dist_tol, check_bounds=False)
        if criterion.kind == "dist_proper":
            eta_model = return_distribution(model_mdp, pi, grid, tol=dist_tol, check_bounds=False)
            devs.append(np.max(grid_w1(eta_true.probs, eta_model.probs, grid.spacing)))
            continue
        worst = 0.0
        for start in (ReturnFunction.dirac(grid, true_mdp.n_states), eta_true):
            a, b = start, start
            for _ in range(criterion.k):
                a = distributional_backup(true_mdp, pi, a, check_bounds=False)
                b = distributional_backup(model_mdp, pi, b, check_bounds=False)
            worst = max(worst, float(np.max(grid_w1(a.probs, b.probs, grid.spacing))))
        devs.append(worst)
    return MembershipReport(criterion, tol, np.array(devs))
