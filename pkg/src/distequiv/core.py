"""Finite MDPs with discrete reward distributions, policies and trajectory sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

RNG_ALGORITHM = "numpy.random.PCG64+SeedSequence"

PROB_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finite-support law on the real line."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_1d(np.asarray(self.atoms, dtype=float))
        probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if atoms.shape != probs.shape or atoms.ndim != 1 or atoms.size == 0:
            raise ValueError("atoms and probs must be nonempty 1-d arrays of equal length")
        if np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be strictly increasing")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f"probs must be nonnegative and sum to 1 (sum={probs.sum()!r})")
        atoms.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def dirac(cls, value: float) -> "DiscreteDistribution":
        return cls(np.array([float(value)]), np.array([1.0]))

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> "DiscreteDistribution":
        """Empirical law; equal samples are merged into one atom."""
        values, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
        return cls(values, counts / counts.sum())

    @classmethod
    def from_unsorted(cls, atoms, probs) -> "DiscreteDistribution":
        """Sort, merge duplicate atoms and drop zero-mass atoms."""
        atoms = np.asarray(atoms, dtype=float).ravel()
        probs = np.asarray(probs, dtype=float).ravel()
        values, inverse = np.unique(atoms, return_inverse=True)
        merged = np.bincount(inverse, weights=probs, minlength=values.size)
        keep = merged > 0
        merged = merged[keep]
        return cls(values[keep], merged / merged.sum())

    def mean(self) -> float:
        return float(self.atoms @ self.probs)

    def moment(self, order: int) -> float:
        return float((self.atoms**order) @ self.probs)

    def variance(self) -> float:
        mu = self.mean()
        return float(((self.atoms - mu) ** 2) @ self.probs)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(self.atoms, size=size, p=self.probs)

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "probs": self.probs.tolist()}

    def __repr__(self):
        return f"DiscreteDistribution(atoms={self.atoms.tolist()}, probs={self.probs.tolist()})"


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """A finite MDP ``(X, A, P, R, gamma)``.

    ``transition`` has shape ``(n_states, n_actions, n_states)``; ``reward[x][a]``
    is the reward law of the pair ``(x, a)``. Construction does not validate:
    call :func:`validate_mdp` to obtain a list of violations.
    """

    transition: np.ndarray
    reward: tuple
    gamma: float
    r_max: float

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=float)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {transition.shape}")
        transition.setflags(write=False)
        reward = tuple(tuple(row) for row in self.reward)
        if len(reward) != transition.shape[0] or any(len(r) != transition.shape[1] for r in reward):
            raise ValueError("reward must be indexed [state][action] matching transition")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def v_max(self) -> float:
        """Bound on the magnitude of any discounted return."""
        return self.r_max / (1.0 - self.gamma)

    @cached_property
    def reward_mean(self) -> np.ndarray:
        return np.array([[d.mean() for d in row] for row in self.reward])

    @cached_property
    def reward_second_moment(self) -> np.ndarray:
        return np.array([[d.moment(2) for d in row] for row in self.reward])

    @cached_property
    def reward_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct reward values ``r`` and weights ``q[k, x, a] = P(R = r[k] | x, a)``."""
        values = np.unique(np.concatenate([d.atoms for row in self.reward for d in row]))
        weights = np.zeros((values.size, self.n_states, self.n_actions))
        for x, row in enumerate(self.reward):
            for a, dist in enumerate(row):
                weights[np.searchsorted(values, dist.atoms), x, a] += dist.probs
        return values, weights

    def with_transition(self, transition) -> "TabularMDP":
        return TabularMDP(transition, self.reward, self.gamma, self.r_max)

    def with_reward(self, reward) -> "TabularMDP":
        return TabularMDP(self.transition, reward, self.gamma, self.r_max)

    def to_mdp(self) -> "TabularMDP":
        return self


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary Markov policy; ``action_probs[x, a] = pi(a | x)``."""

    action_probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.action_probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("action_probs must be 2-d (states, actions)")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_ATOL):
            raise ValueError("policy rows must be probability vectors")
        probs.setflags(write=False)
        object.__setattr__(self, "action_probs", probs)

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.action_probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.action_probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all((self.action_probs == 0) | (self.action_probs == 1)))

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.action_probs, axis=1)

    def to_dict(self) -> dict:
        return {"action_probs": self.action_probs.tolist()}


@dataclass(frozen=True)
class Trajectory:
    steps: tuple  # of (state, action, reward, next_state)
    discounted_return: float


def as_mdp(mdp_or_model) -> TabularMDP:
    """Realize an approximate model as a :class:`TabularMDP` (identity on MDPs)."""
    return mdp_or_model.to_mdp()


def validate_mdp(mdp: TabularMDP) -> list[str]:
    """Return human-readable descriptions of every violated MDP invariant."""
    problems = []
    if not 0.0 <= mdp.gamma < 1.0:
        problems.append(f"gamma={mdp.gamma} must lie in [0, 1)")
    for x in range(mdp.n_states):
        for a in range(mdp.n_actions):
            row = mdp.transition[x, a]
            if np.any(row < 0):
                problems.append(f"transition row (state={x}, action={a}) has negative entries")
            total = row.sum()
            if abs(total - 1.0) > PROB_ATOL:
                problems.append(
                    f"transition row (state={x}, action={a}) sums to {total:.12g}, not 1"
                )
            dist = mdp.reward[x][a]
            if np.max(np.abs(dist.atoms)) > mdp.r_max:
                problems.append(
                    f"reward (state={x}, action={a}) has atom {np.max(np.abs(dist.atoms)):g} "
                    f"outside the bound r_max={mdp.r_max:g}"
                )
    return problems


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def default_horizon(gamma: float, r_max: float, eps: float = 1e-6) -> int:
    """Smallest horizon whose truncation error ``gamma**H * r_max / (1 - gamma)`` is at most ``eps``."""
    if gamma == 0.0 or r_max == 0.0:
        return 1
    return max(1, math.ceil(math.log(eps * (1.0 - gamma) / r_max) / math.log(gamma)))


def _sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    # inverse-CDF draw; cheaper than rng.choice for short vectors
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), probs.size - 1))


def sample_trajectory(mdp, policy: Policy, start_state: int, horizon: int, seed) -> Trajectory:
    """Roll out ``horizon`` steps of ``policy`` from ``start_state``."""
    mdp = as_mdp(mdp)
    if not 0 <= start_state < mdp.n_states:
        raise ValueError(f"start_state {start_state} out of range [0, {mdp.n_states})")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = make_rng(seed)
    x = int(start_state)
    steps = []
    g, discount = 0.0, 1.0
    for _ in range(horizon):
        a = _sample_index(rng, policy.action_probs[x])
        dist = mdp.reward[x][a]
        r = float(dist.atoms[_sample_index(rng, dist.probs)])
        x_next = _sample_index(rng, mdp.transition[x, a])
        steps.append((x, a, r, x_next))
        g += discount * r
        discount *= mdp.gamma
        x = x_next
    return Trajectory(tuple(steps), g)


def sample_returns(
    mdp, policy: Policy, start_state: int, horizon: int, n: int, seed
) -> np.ndarray:
    """Vectorized Monte Carlo returns of ``n`` independent truncated rollouts.

    Uses a different stream layout from :func:`sample_trajectory`; both are
    deterministic given ``seed``.
    """
    mdp = as_mdp(mdp)
    if not 0 <= start_state < mdp.n_states:
        raise ValueError(f"start_state {start_state} out of range [0, {mdp.n_states})")
    rng = make_rng(seed)
    values, weights = mdp.reward_table
    pi_cdf = np.cumsum(policy.action_probs, axis=1)
    p_cdf = np.cumsum(mdp.transition, axis=2)
    r_cdf = np.cumsum(weights, axis=0)  # (K, S, A)
    absorbing = _zero_reward_absorbing(mdp)

    x = np.full(n, start_state, dtype=int)
    g = np.zeros(n)
    discount = 1.0
    for _ in range(horizon):
        if absorbing[x].all():
            break
        u = rng.random((3, n))
        a = _inverse_cdf(pi_cdf[x], u[0])
        k = _inverse_cdf(r_cdf[:, x, a].T, u[1])
        g += discount * values[k]
        x = _inverse_cdf(p_cdf[x, a], u[2])
        discount *= mdp.gamma
    return g


def _inverse_cdf(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (cdf_rows < (u * cdf_rows[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def _zero_reward_absorbing(mdp: TabularMDP) -> np.ndarray:
    out = np.zeros(mdp.n_states, dtype=bool)
    for x in range(mdp.n_states):
        out[x] = all(
            mdp.transition[x, a, x] == 1.0
            and mdp.reward[x][a].atoms.size == 1
            and mdp.reward[x][a].atoms[0] == 0.0
            for a in range(mdp.n_actions)
        )
    return out


def random_mdp(
    n_states: int,
    n_actions: int,
    seed,
    gamma: float = 0.9,
    n_reward_atoms: int = 2,
    r_max: float = 1.0,
    sparsity: float = 0.0,
) -> TabularMDP:
    """Random MDP with Dirichlet transition rows and random finite reward laws.

    ``sparsity`` is the chance that a transition entry is zeroed (one entry per
    row is always kept).
    """
    rng = make_rng(seed)
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0:
        mask = rng.random(transition.shape) >= sparsity
        keep = rng.integers(n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], keep] = True
        transition = transition * mask
        transition /= transition.sum(axis=2, keepdims=True)
    reward = []
    for _ in range(n_states):
        row = []
        for _ in range(n_actions):
            atoms = np.round(rng.uniform(-r_max, r_max, size=n_reward_atoms), 6)
            row.append(DiscreteDistribution.from_unsorted(atoms, rng.dirichlet(np.ones(n_reward_atoms))))
        reward.append(row)
    return TabularMDP(transition, reward, gamma, r_max)


def enumerate_deterministic_policies(n_states: int, n_actions: int):
    """Yield every deterministic stationary policy (``n_actions ** n_states`` of them)."""
    for flat in range(n_actions**n_states):
        actions = np.array(np.unravel_index(flat, (n_actions,) * n_states))
        yield Policy.deterministic(actions, n_actions)
