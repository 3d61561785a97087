"""JSON serialization for MDPs, learned models, policies and statistic tables."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import DiscreteDistribution, Policy, TabularMDP, as_mdp

FORMAT_VERSION = 1


def mdp_to_dict(mdp) -> dict:
    mdp = as_mdp(mdp)
    return {
        "version": FORMAT_VERSION,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "r_max": mdp.r_max,
        "transition": mdp.transition.tolist(),
        "reward": [[d.to_dict() for d in row] for row in mdp.reward],
    }


def mdp_from_dict(d: dict) -> TabularMDP:
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported MDP file version {d.get('version')!r}")
    transition = np.array(d["transition"], dtype=float)
    if transition.shape != (d["n_states"], d["n_actions"], d["n_states"]):
        raise ValueError(f"transition shape {transition.shape} does not match n_states/n_actions")
    reward = [
        [DiscreteDistribution(np.array(r["atoms"], float), np.array(r["probs"], float)) for r in row]
        for row in d["reward"]
    ]
    return TabularMDP(transition, reward, float(d["gamma"]), float(d["r_max"]))


def model_to_dict(model) -> dict:
    """MDP file of the realized model plus its training provenance."""
    d = mdp_to_dict(model)
    d["provenance"] = _jsonable(getattr(model, "provenance", {}))
    return d


def policies_to_dict(policies) -> dict:
    return {"version": FORMAT_VERSION, "policies": [p.action_probs.tolist() for p in policies]}


def policies_from_dict(d: dict) -> list:
    return [Policy(np.array(p, dtype=float)) for p in d["policies"]]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj) -> str:
    """Stable JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_mdp(path, mdp) -> Path:
    return write_json(path, mdp_to_dict(mdp))


def load_mdp(path) -> TabularMDP:
    return mdp_from_dict(read_json(path))
