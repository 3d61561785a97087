"""Law-invariant risk measures: CVaR, mean-variance and step-function spectral measures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DOMINANCE_TOL = 1e-10


@dataclass(frozen=True)
class RiskSpec:
    """Tagged risk-measure descriptor.

    For ``spectral``, ``breakpoints`` are ``0 = u_0 < ... < u_K = 1`` and
    ``levels[k]`` is the (right-continuous) value of the weighting function on
    ``[u_k, u_{k+1})``.
    """

    kind: str = "neutral"
    tau: float | None = None
    lam: float | None = None
    breakpoints: tuple = ()
    levels: tuple = ()

    def __post_init__(self):
        if self.kind == "cvar":
            if self.tau is None or not 0 < self.tau <= 1:
                raise ValueError("cvar needs tau in (0, 1]")
        elif self.kind == "mean_variance":
            if self.lam is None or self.lam <= 0:
                raise ValueError("mean_variance needs lam > 0")
        elif self.kind == "spectral":
            u = np.asarray(self.breakpoints, dtype=float)
            lv = np.asarray(self.levels, dtype=float)
            if u.size < 2 or lv.size != u.size - 1 or u[0] != 0 or u[-1] != 1 or np.any(np.diff(u) <= 0):
                raise ValueError("spectral breakpoints must run 0 = u_0 < ... < u_K = 1 with K levels")
            if np.any(lv < 0) or np.any(np.diff(lv) > 0):
                raise ValueError("spectral levels must be nonnegative and nonincreasing")
            if abs(lv @ np.diff(u) - 1.0) > 1e-10:
                raise ValueError("spectral weighting must integrate to 1")
            object.__setattr__(self, "breakpoints", tuple(float(v) for v in u))
            object.__setattr__(self, "levels", tuple(float(v) for v in lv))
        elif self.kind != "neutral":
            raise ValueError(f"unknown risk kind {self.kind!r}")

    @classmethod
    def neutral(cls) -> "RiskSpec":
        return cls("neutral")

    @classmethod
    def cvar(cls, tau: float) -> "RiskSpec":
        return cls("cvar", tau=float(tau))

    @classmethod
    def mean_variance(cls, lam: float) -> "RiskSpec":
        return cls("mean_variance", lam=float(lam))

    @classmethod
    def spectral(cls, breakpoints, levels) -> "RiskSpec":
        return cls("spectral", breakpoints=tuple(breakpoints), levels=tuple(levels))

    def weight_at(self, u: float) -> float:
        """Value of the weighting function at ``u``; mean-variance has none."""
        if self.kind == "neutral":
            return 1.0
        if self.kind == "cvar":
            return 1.0 / self.tau if u <= self.tau else 0.0
        if self.kind != "spectral":
            raise ValueError("mean-variance is not a spectral measure")
        k = min(np.searchsorted(self.breakpoints, u, side="right") - 1, len(self.levels) - 1)
        return self.levels[k]

    def strictly_risk_sensitive(self, eps: float, delta: float) -> bool:
        return self.weight_at(eps) <= delta

    def to_dict(self) -> dict:
        if self.kind == "cvar":
            return {"kind": "cvar", "tau": self.tau}
        if self.kind == "mean_variance":
            return {"kind": "mean_variance", "lambda": self.lam}
        if self.kind == "spectral":
            return {"kind": "spectral", "breakpoints": list(self.breakpoints), "levels": list(self.levels)}
        return {"kind": "neutral"}

    @classmethod
    def from_dict(cls, d: dict) -> "RiskSpec":
        kind = d.get("kind", "neutral")
        if kind == "cvar":
            return cls.cvar(d["tau"])
        if kind == "mean_variance":
            return cls.mean_variance(d.get("lambda", d.get("lam")))
        if kind == "spectral":
            return cls.spectral(d["breakpoints"], d["levels"])
        return cls(kind)


@dataclass(frozen=True)
class UniformDistribution:
    """``U([low, high])``; used for exact analytic return laws."""

    low: float
    high: float

    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def variance(self) -> float:
        return (self.high - self.low) ** 2 / 12.0

    def moment(self, order: int) -> float:
        n = order + 1
        return (self.high**n - self.low**n) / (n * (self.high - self.low))

    def quantile(self, u: float) -> float:
        return self.low + (self.high - self.low) * u

    def cdf(self, z):
        return np.clip((np.asarray(z, dtype=float) - self.low) / (self.high - self.low), 0.0, 1.0)


def _lower_integral(dist, u: float) -> float:
    """``int_0^u F^{-1}(v) dv``, exact."""
    if isinstance(dist, UniformDistribution):
        return dist.low * u + 0.5 * (dist.high - dist.low) * u * u
    atoms = np.asarray(dist.atoms, dtype=float)
    probs = np.asarray(dist.probs, dtype=float)
    prev = np.cumsum(probs) - probs
    return float(atoms @ np.clip(u - prev, 0.0, probs))


def _lower_integral_rows(probs: np.ndarray, atoms: np.ndarray, u: float) -> np.ndarray:
    prev = np.cumsum(probs, axis=-1) - probs
    return np.clip(u - prev, 0.0, probs) @ atoms


def quantile(dist, u: float) -> float:
    """Generalized inverse CDF ``inf{z : F(z) >= u}``."""
    if not 0 < u <= 1:
        raise ValueError("u must lie in (0, 1]")
    if isinstance(dist, UniformDistribution):
        return dist.quantile(u)
    cum = np.cumsum(dist.probs)
    idx = int(np.argmax(cum >= u - 1e-12))
    if cum[idx] < u - 1e-12:
        idx = int(np.nonzero(np.asarray(dist.probs) > 0)[0][-1])
    return float(np.asarray(dist.atoms)[idx])


def _mean(dist) -> float:
    if isinstance(dist, UniformDistribution):
        return dist.mean()
    return float(np.asarray(dist.atoms) @ np.asarray(dist.probs))


def _variance(dist) -> float:
    if isinstance(dist, UniformDistribution):
        return dist.variance()
    atoms, probs = np.asarray(dist.atoms), np.asarray(dist.probs)
    mu = atoms @ probs
    return float(((atoms - mu) ** 2) @ probs)


def risk_value(spec: RiskSpec, dist) -> float:
    """Evaluate ``spec`` on a discrete, categorical or uniform law, exactly."""
    if spec.kind == "neutral":
        return _mean(dist)
    if spec.kind == "mean_variance":
        return _mean(dist) - spec.lam * _variance(dist)
    if spec.kind == "cvar":
        return _lower_integral(dist, spec.tau) / spec.tau
    total = 0.0
    for u0, u1, level in zip(spec.breakpoints[:-1], spec.breakpoints[1:], spec.levels):
        if level:
            total += level * (_lower_integral(dist, u1) - _lower_integral(dist, u0))
    return total


def risk_values_on_grid(spec: RiskSpec, probs: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Vectorized :func:`risk_value` over the leading axes of ``probs`` on a shared grid."""
    probs = np.asarray(probs, dtype=float)
    mean = probs @ atoms
    if spec.kind == "neutral":
        return mean
    if spec.kind == "mean_variance":
        return mean - spec.lam * (probs @ atoms**2 - mean**2)
    if spec.kind == "cvar":
        return _lower_integral_rows(probs, atoms, spec.tau) / spec.tau
    total = np.zeros(probs.shape[:-1])
    for u0, u1, level in zip(spec.breakpoints[:-1], spec.breakpoints[1:], spec.levels):
        if level:
            total += level * (_lower_integral_rows(probs, atoms, u1) - _lower_integral_rows(probs, atoms, u0))
    return total


def empirical_cvar(samples, tau: float) -> float:
    """Mean of the ``ceil(tau * n)`` smallest samples."""
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    if samples.size == 0:
        raise ValueError("empirical_cvar needs at least one sample")
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    k = max(1, math.ceil(tau * samples.size - 1e-9))
    return float(samples[:k].mean())


def state_risk_values(spec: RiskSpec, eta) -> np.ndarray:
    """Risk value of each state's return law (``eta`` is a ReturnFunction or a sequence of laws)."""
    if hasattr(eta, "grid") and hasattr(eta, "probs"):
        return risk_values_on_grid(spec, eta.probs, eta.grid.atoms)
    return np.array([risk_value(spec, d) for d in eta])


def dominates(spec: RiskSpec, eta_a, eta_b, tol: float = DOMINANCE_TOL) -> bool:
    """Whether the policy with return laws ``eta_a`` dominates the one with ``eta_b`` state-wise."""
    va, vb = state_risk_values(spec, eta_a), state_risk_values(spec, eta_b)
    if va.shape != vb.shape:
        raise ValueError("return functions must cover the same states")
    return bool(np.all(va >= vb - tol))


def strictly_dominates(spec: RiskSpec, eta_a, eta_b, tol: float = DOMINANCE_TOL) -> bool:
    va, vb = state_risk_values(spec, eta_a), state_risk_values(spec, eta_b)
    return bool(np.all(va >= vb - tol) and np.any(va > vb + tol))
