"""Value iteration and categorical distributional dynamic programming."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .core import DiscreteDistribution, Policy, TabularMDP, as_mdp

DEFAULT_N_ATOMS = 401


@dataclass(frozen=True)
class CategoricalGrid:
    """Equispaced support ``z_i = v_min + i * (v_max - v_min) / (n_atoms - 1)``."""

    v_min: float
    v_max: float
    n_atoms: int = DEFAULT_N_ATOMS

    def __post_init__(self):
        if self.n_atoms < 2 or not self.v_min < self.v_max:
            raise ValueError("need n_atoms >= 2 and v_min < v_max")
        object.__setattr__(self, "v_min", float(self.v_min))
        object.__setattr__(self, "v_max", float(self.v_max))
        object.__setattr__(self, "n_atoms", int(self.n_atoms))

    @classmethod
    def for_mdp(cls, mdp, n_atoms: int = DEFAULT_N_ATOMS) -> "CategoricalGrid":
        bound = as_mdp(mdp).v_max
        return cls(-bound, bound, n_atoms)

    @property
    def atoms(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.n_atoms)

    @property
    def spacing(self) -> float:
        return (self.v_max - self.v_min) / (self.n_atoms - 1)

    def covers(self, mdp, slack: float = 1e-9) -> bool:
        bound = as_mdp(mdp).v_max
        return self.v_min <= -bound + slack and self.v_max >= bound - slack

    def dirac(self, value: float = 0.0) -> "CategoricalReturn":
        return categorical_project([value], [1.0], self)

    def to_dict(self) -> dict:
        return {"v_min": self.v_min, "v_max": self.v_max, "n_atoms": self.n_atoms}


@dataclass(frozen=True, eq=False)
class CategoricalReturn:
    grid: CategoricalGrid
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.grid.n_atoms,):
            raise ValueError("probs length must equal grid.n_atoms")
        object.__setattr__(self, "probs", probs)

    @property
    def atoms(self) -> np.ndarray:
        return self.grid.atoms

    def mean(self) -> float:
        return float(self.atoms @ self.probs)

    def moment(self, order: int) -> float:
        return float((self.atoms**order) @ self.probs)

    def variance(self) -> float:
        mu = self.mean()
        return float(((self.atoms - mu) ** 2) @ self.probs)

    def to_discrete(self) -> DiscreteDistribution:
        keep = self.probs > 0
        p = self.probs[keep]
        return DiscreteDistribution(self.atoms[keep], p / p.sum())


@dataclass(frozen=True, eq=False)
class ReturnFunction:
    """One categorical return distribution per state, on a shared grid."""

    grid: CategoricalGrid
    probs: np.ndarray  # (n_states, n_atoms)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[1] != self.grid.n_atoms:
            raise ValueError("probs must have shape (n_states, grid.n_atoms)")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def dirac(cls, grid: CategoricalGrid, n_states: int, value: float = 0.0) -> "ReturnFunction":
        return cls(grid, np.tile(grid.dirac(value).probs, (n_states, 1)))

    def __len__(self):
        return self.probs.shape[0]

    def __getitem__(self, x: int) -> CategoricalReturn:
        return CategoricalReturn(self.grid, self.probs[x])

    def means(self) -> np.ndarray:
        return self.probs @ self.grid.atoms

    def to_dict(self) -> dict:
        return {**self.grid.to_dict(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ReturnFunction":
        return cls(CategoricalGrid(d["v_min"], d["v_max"], d["n_atoms"]), np.array(d["probs"]))


def value_backup(mdp, policy: Policy, v) -> np.ndarray:
    """``T^pi v`` computed exactly by finite sums."""
    mdp = as_mdp(mdp)
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ValueError(f"v must have shape ({mdp.n_states},), got {v.shape}")
    q = mdp.reward_mean + mdp.gamma * mdp.transition @ v
    return np.einsum("xa,xa->x", policy.action_probs, q)


def value_fixed_point(mdp, policy: Policy, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Iterate :func:`value_backup` from zero until the sup-norm change drops below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    mdp = as_mdp(mdp)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        v_new = value_backup(mdp, policy, v)
        if np.max(np.abs(v_new - v)) < tol:
            return v_new
        v = v_new
    return v


def pushforward(dist, r: float, gamma: float):
    """Image of ``dist`` under ``z -> r + gamma * z`` (no projection)."""
    if isinstance(dist, CategoricalReturn):
        if gamma == 0:
            return DiscreteDistribution.dirac(r)
        lo, hi = sorted((r + gamma * dist.grid.v_min, r + gamma * dist.grid.v_max))
        probs = dist.probs if gamma > 0 else dist.probs[::-1]
        return CategoricalReturn(CategoricalGrid(lo, hi, dist.grid.n_atoms), probs.copy())
    return DiscreteDistribution.from_unsorted(r + gamma * dist.atoms, dist.probs)


def _split(atoms: np.ndarray, grid: CategoricalGrid, clip: bool):
    pos = (np.asarray(atoms, dtype=float) - grid.v_min) / grid.spacing
    inside = (pos >= 0) & (pos <= grid.n_atoms - 1)
    pos = np.clip(pos, 0, grid.n_atoms - 1)
    # snap values that are within rounding of a grid point
    nearest = np.rint(pos)
    pos = np.where(np.abs(pos - nearest) < 1e-9, nearest, pos)
    lower = np.minimum(np.floor(pos).astype(int), grid.n_atoms - 2)
    upper_w = pos - lower
    keep = np.ones_like(pos) if clip else inside.astype(float)
    return lower, (1.0 - upper_w) * keep, upper_w * keep


def categorical_project(atoms, probs, grid: CategoricalGrid, clip: bool = True) -> CategoricalReturn:
    """Split each atom's mass linearly between its two neighbouring grid points.

    Atoms outside ``[v_min, v_max]`` are moved to the nearest boundary atom.
    ``clip=False`` drops that mass instead (only useful as a deliberate fault).
    """
    probs = np.asarray(probs, dtype=float).ravel()
    lower, w_lo, w_hi = _split(np.asarray(atoms, dtype=float).ravel(), grid, clip)
    out = np.bincount(lower, weights=probs * w_lo, minlength=grid.n_atoms)
    out += np.bincount(lower + 1, weights=probs * w_hi, minlength=grid.n_atoms)
    return CategoricalReturn(grid, out)


@lru_cache(maxsize=512)
def _shift_projection(grid: CategoricalGrid, r: float, gamma: float, clip: bool = True) -> sparse.csr_matrix:
    """Sparse ``M`` with ``M @ p`` = projection of ``(b_{r,gamma})_# p`` onto ``grid``."""
    n = grid.n_atoms
    lower, w_lo, w_hi = _split(r + gamma * grid.atoms, grid, clip)
    cols = np.arange(n)
    m = sparse.coo_matrix(
        (np.concatenate([w_lo, w_hi]), (np.concatenate([lower, lower + 1]), np.concatenate([cols, cols]))),
        shape=(n, n),
    )
    return m.tocsr()


def _check_grid(mdp: TabularMDP, eta_probs: np.ndarray, grid: CategoricalGrid, check_bounds: bool):
    if eta_probs.shape != (mdp.n_states, grid.n_atoms):
        raise ValueError(f"eta has shape {eta_probs.shape}, expected ({mdp.n_states}, {grid.n_atoms})")
    if check_bounds and not grid.covers(mdp):
        raise ValueError(
            f"grid [{grid.v_min}, {grid.v_max}] does not cover the return range +-{mdp.v_max}"
        )


def action_backups(mdp, eta, check_bounds: bool = True, clip: bool = True) -> np.ndarray:
    """Projected one-step backups for every pair: array ``(n_states, n_actions, n_atoms)``."""
    mdp = as_mdp(mdp)
    grid = eta.grid
    _check_grid(mdp, eta.probs, grid, check_bounds)
    values, weights = mdp.reward_table
    nxt = mdp.transition.reshape(-1, mdp.n_states) @ eta.probs  # (S*A, n)
    out = np.zeros_like(nxt)
    for k, r in enumerate(values):
        w = weights[k].reshape(-1)
        rows = np.nonzero(w)[0]
        if rows.size == 0:
            continue
        m = _shift_projection(grid, float(r), mdp.gamma, clip)
        out[rows] += w[rows, None] * (m @ nxt[rows].T).T
    return out.reshape(mdp.n_states, mdp.n_actions, grid.n_atoms)


def distributional_backup(
    mdp, policy: Policy, eta: ReturnFunction, check_bounds: bool = True, clip: bool = True
) -> ReturnFunction:
    """``Pi_F T^pi eta``: mixture of shifted-and-scaled next-state laws, projected per reward atom."""
    mdp = as_mdp(mdp)
    grid = eta.grid
    _check_grid(mdp, eta.probs, grid, check_bounds)
    values, weights = mdp.reward_table
    out = np.zeros((mdp.n_states, grid.n_atoms))
    for k, r in enumerate(values):
        mix = np.einsum("xa,xa,xay->xy", policy.action_probs, weights[k], mdp.transition)
        if not mix.any():
            continue
        m = _shift_projection(grid, float(r), mdp.gamma, clip)
        out += (m @ (mix @ eta.probs).T).T
    return ReturnFunction(grid, out)


def return_distribution(
    mdp,
    policy: Policy,
    grid: CategoricalGrid | None = None,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    check_bounds: bool = True,
) -> ReturnFunction:
    """Categorical fixed point of ``Pi_F T^pi``, iterated from ``delta_0``.

    Stops once the largest per-state L1 change in probabilities is below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mdp = as_mdp(mdp)
    grid = grid or CategoricalGrid.for_mdp(mdp)
    probs = ReturnFunction.dirac(grid, mdp.n_states).probs
    _check_grid(mdp, probs, grid, check_bounds)
    # the operator is fixed across sweeps: precompute (state mixing, atom shift) per reward value
    values, weights = mdp.reward_table
    terms = []
    for k, r in enumerate(values):
        mix = np.einsum("xa,xa,xay->xy", policy.action_probs, weights[k], mdp.transition)
        if mix.any():
            terms.append((mix, _shift_projection(grid, float(r), mdp.gamma)))
    for _ in range(max_iter):
        new = sum((shift @ (mix @ probs).T).T for mix, shift in terms)
        delta = np.max(np.abs(new - probs).sum(axis=1))
        probs = new
        if delta < tol:
            break
    return ReturnFunction(grid, probs)


def wasserstein1(dist_a, dist_b) -> float:
    """1-Wasserstein distance between two finite-support laws (integral of |F_a - F_b|)."""
    support = np.union1d(dist_a.atoms, dist_b.atoms)
    cdf_a = _cdf_on(dist_a, support)
    cdf_b = _cdf_on(dist_b, support)
    return float(np.sum(np.abs(cdf_a - cdf_b)[:-1] * np.diff(support)))


def _cdf_on(dist, points: np.ndarray) -> np.ndarray:
    cum = np.cumsum(dist.probs)
    idx = np.searchsorted(dist.atoms, points, side="right") - 1
    return np.where(idx >= 0, cum[np.clip(idx, 0, None)], 0.0)


def wasserstein1_to_uniform(dist, low: float, high: float) -> float:
    """Exact 1-Wasserstein distance between a finite-support law and ``U([low, high])``."""
    knots = np.union1d(dist.atoms, [low, high])
    cdf = _cdf_on(dist, knots)
    total = 0.0
    for z0, z1, c in zip(knots[:-1], knots[1:], cdf[:-1]):
        # the uniform CDF is linear on [z0, z1]; integrate |c - G| exactly
        g0 = np.clip((z0 - low) / (high - low), 0.0, 1.0)
        g1 = np.clip((z1 - low) / (high - low), 0.0, 1.0)
        total += _abs_linear_integral(c - g0, c - g1, z1 - z0)
    return float(total)


def _abs_linear_integral(f0: float, f1: float, width: float) -> float:
    if f0 * f1 >= 0:
        return 0.5 * (abs(f0) + abs(f1)) * width
    t = f0 / (f0 - f1)
    return 0.5 * (abs(f0) * t + abs(f1) * (1 - t)) * width
