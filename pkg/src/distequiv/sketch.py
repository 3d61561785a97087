"""Moment sketches, imputation strategies and statistical functional dynamic programming."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import stats

from .core import DiscreteDistribution, Policy, as_mdp

IMAGE_SLACK = 1e-12
NORMAL_ATOMS = 33


@dataclass(frozen=True)
class SketchSpec:
    """``moments`` with order ``m`` or ``mean_variance`` (always two-dimensional)."""

    kind: str = "moments"
    m: int = 2

    def __post_init__(self):
        if self.kind not in ("moments", "mean_variance"):
            raise ValueError(f"unknown sketch kind {self.kind!r}")
        if self.m < 1:
            raise ValueError("sketch dimension must be >= 1")
        if self.kind == "mean_variance" and self.m != 2:
            raise ValueError("mean_variance sketch has m = 2")

    @classmethod
    def moments(cls, m: int) -> "SketchSpec":
        return cls("moments", m)

    @classmethod
    def mean_variance(cls) -> "SketchSpec":
        return cls("mean_variance", 2)

    def to_moments(self, s: np.ndarray) -> np.ndarray:
        """Convert sketch values (last axis) to raw moments."""
        s = np.asarray(s, dtype=float)
        if self.kind == "moments":
            return s
        out = s.copy()
        out[..., 1] = s[..., 1] + s[..., 0] ** 2
        return out

    def from_moments(self, mom: np.ndarray) -> np.ndarray:
        mom = np.asarray(mom, dtype=float)
        if self.kind == "moments":
            return mom
        out = mom.copy()
        out[..., 1] = mom[..., 1] - mom[..., 0] ** 2
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "m": self.m}


@dataclass(frozen=True)
class ImputationSpec:
    kind: str = "two_point"

    def __post_init__(self):
        if self.kind not in ("two_point", "normal_clipped"):
            raise ValueError(f"unknown imputation kind {self.kind!r}")


def apply_sketch(spec: SketchSpec, dist) -> np.ndarray:
    """Exact finite-sum sketch of a discrete or categorical law."""
    atoms, probs = np.asarray(dist.atoms), np.asarray(dist.probs)
    mom = np.array([(atoms**i) @ probs for i in range(1, spec.m + 1)])
    return spec.from_moments(mom)


def apply_sketch_rows(spec: SketchSpec, eta) -> np.ndarray:
    """Sketch of every state of a :class:`~distequiv.distdp.ReturnFunction`, shape ``(S, m)``."""
    z = eta.grid.atoms
    mom = np.stack([eta.probs @ z**i for i in range(1, spec.m + 1)], axis=1)
    return spec.from_moments(mom)


def _mean_std(sketch: SketchSpec, s) -> tuple[float, float]:
    if sketch.m != 2:
        raise ValueError("imputation is only defined for two-dimensional (mean/second-moment) sketches")
    mu1, mu2 = sketch.to_moments(np.asarray(s, dtype=float))
    var = mu2 - mu1**2
    if var < -IMAGE_SLACK:
        raise ValueError(f"statistic {tuple(s)} lies outside the sketch image (variance {var:g} < 0)")
    return float(mu1), float(np.sqrt(max(var, 0.0)))


def _standard_normal_atoms() -> tuple[np.ndarray, np.ndarray]:
    z = np.linspace(-4.0, 4.0, NORMAL_ATOMS)
    w = stats.norm.pdf(z)
    w /= w.sum()
    # restore exact zero mean / unit variance lost to clipping the tails
    z = (z - z @ w) / np.sqrt(((z - z @ w) ** 2) @ w)
    return z, w


_STD_Z, _STD_W = _standard_normal_atoms()


def impute(spec: ImputationSpec, sketch: SketchSpec, s) -> DiscreteDistribution:
    """Map a statistic back to a finite-support law with exactly that statistic."""
    mu, sigma = _mean_std(sketch, s)
    if sigma == 0.0:
        return DiscreteDistribution.dirac(mu)
    if spec.kind == "two_point":
        return DiscreteDistribution(np.array([mu - sigma, mu + sigma]), np.array([0.5, 0.5]))
    return DiscreteDistribution(mu + sigma * _STD_Z, _STD_W)


def moment_backup(mdp, policy: Policy, s, m: int | None = None, verbatim: bool = False) -> np.ndarray:
    """Bellman operator of the first-``m`` moment sketch (``m`` in {1, 2}).

    ``s`` has shape ``(S, m)`` holding raw moments. The second moment update is
    ``E[R^2] + 2 gamma E[R mu1(X')] + gamma^2 E[mu2(X')]``. ``verbatim=True``
    instead uses ``2 gamma E[mu1(X')]`` for the cross term, a variant that is
    not Bellman-closed; it exists for comparison only.
    """
    mdp = as_mdp(mdp)
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    m = s.shape[1] if m is None else m
    if m > 2:
        raise ValueError("closed-form moment backup is implemented for m <= 2 only")
    if s.shape != (mdp.n_states, m):
        raise ValueError(f"s has shape {s.shape}, expected ({mdp.n_states}, {m})")
    pi = policy.action_probs
    g = mdp.gamma
    ps = mdp.transition @ s  # (S, A, m)
    r1 = mdp.reward_mean
    out = np.empty_like(s)
    out[:, 0] = np.einsum("xa,xa->x", pi, r1 + g * ps[..., 0])
    if m == 2:
        cross = ps[..., 0] if verbatim else r1 * ps[..., 0]
        q2 = mdp.reward_second_moment + 2 * g * cross + g * g * ps[..., 1]
        out[:, 1] = np.einsum("xa,xa->x", pi, q2)
    return out


def action_moment_backups(mdp, s) -> np.ndarray:
    """Per-action first and second moment backups, shape ``(S, A, 2)``."""
    mdp = as_mdp(mdp)
    g = mdp.gamma
    ps = mdp.transition @ np.asarray(s, dtype=float)
    q1 = mdp.reward_mean + g * ps[..., 0]
    q2 = mdp.reward_second_moment + 2 * g * mdp.reward_mean * ps[..., 0] + g * g * ps[..., 1]
    return np.stack([q1, q2], axis=-1)


def _imputed_backup(mdp, policy, sketch, imputation, s) -> np.ndarray:
    """``psi(T^pi iota(s))`` computed exactly on finite supports."""
    dists = [impute(imputation, sketch, row) for row in s]
    m = sketch.m
    # raw moments of gamma * Z for each next state, then of r + gamma * Z via the binomial expansion
    mom_next = np.array([[(mdp.gamma * d.atoms) ** j @ d.probs for j in range(m + 1)] for d in dists])
    pi = policy.action_probs
    out = np.zeros((mdp.n_states, m))
    for x in range(mdp.n_states):
        for a in range(mdp.n_actions):
            if pi[x, a] == 0:
                continue
            rd = mdp.reward[x][a]
            nxt = mdp.transition[x, a] @ mom_next  # (m+1,)
            for i in range(1, m + 1):
                total = 0.0
                for j in range(i + 1):
                    total += comb(i, j) * ((rd.atoms ** (i - j)) @ rd.probs) * nxt[j]
                out[x, i - 1] += pi[x, a] * total
    return sketch.from_moments(out)


def sf_dp(
    mdp,
    policy: Policy,
    sketch: SketchSpec = SketchSpec(),
    imputation: ImputationSpec = ImputationSpec(),
    mode: str = "closed_form",
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
    verbatim: bool = False,
) -> np.ndarray:
    """Statistical functional dynamic programming from ``s_0 = 0``.

    Returns the ``(S, m)`` array of sketch values once the sup-norm change is below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if mode not in ("closed_form", "impute_backup"):
        raise ValueError(f"unknown mode {mode!r}")
    mdp = as_mdp(mdp)
    s = np.zeros((mdp.n_states, sketch.m))
    for _ in range(max_iter):
        if mode == "closed_form":
            new = sketch.from_moments(moment_backup(mdp, policy, sketch.to_moments(s), sketch.m, verbatim))
        else:
            new = _imputed_backup(mdp, policy, sketch, imputation, s)
        if np.max(np.abs(new - s)) < tol:
            return new
        s = new
    return s


def exact_moments(mdp, policies, m: int = 2) -> np.ndarray:
    """Fixed points of the moment backup by direct linear solves.

    ``policies`` is one :class:`Policy` or a sequence; returns ``(n_policies, S, m)``
    (or ``(S, m)`` for a single policy).
    """
    mdp = as_mdp(mdp)
    single = isinstance(policies, Policy)
    pis = np.stack([p.action_probs for p in ([policies] if single else policies)])
    g = mdp.gamma
    eye = np.eye(mdp.n_states)
    p_pi = np.einsum("nxa,xay->nxy", pis, mdp.transition)
    r1 = np.einsum("nxa,xa->nx", pis, mdp.reward_mean)
    mu1 = np.linalg.solve(eye - g * p_pi, r1[..., None])[..., 0]
    out = [mu1]
    if m >= 2:
        rp = np.einsum("nxa,xa,xay->nxy", pis, mdp.reward_mean, mdp.transition)
        r2 = np.einsum("nxa,xa->nx", pis, mdp.reward_second_moment) + 2 * g * np.einsum("nxy,ny->nx", rp, mu1)
        out.append(np.linalg.solve(eye - g * g * p_pi, r2[..., None])[..., 0])
    if m > 2:
        raise ValueError("exact_moments supports m <= 2")
    res = np.stack(out, axis=-1)
    return res[0] if single else res


def stats_to_dict(sketch: SketchSpec, values: np.ndarray) -> dict:
    return {"sketch": sketch.kind, "m": sketch.m, "values": np.asarray(values).tolist()}


def stats_from_dict(d: dict) -> tuple[SketchSpec, np.ndarray]:
    return SketchSpec(d["sketch"], d["m"]), np.array(d["values"], dtype=float)
