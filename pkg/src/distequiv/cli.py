"""Command line entry point: ``distequiv <command> [options]``.

Exit codes: 0 success, 1 a check failed, 2 bad arguments or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import Policy
from .distdp import return_distribution
from .envs import build_env
from .experiment import (
    REGIMES,
    ExperimentConfig,
    _fit,
    _plan,
    _evaluate,
    experiment_grid,
    export_model,
    run_experiment,
)
from .io import load_mdp, mdp_to_dict, read_json, write_json
from .risk import risk_values_on_grid

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    if args.config:
        try:
            d = read_json(args.config)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        except json.JSONDecodeError as err:
            raise UsageError(f"config is not valid JSON: {err}")
    elif getattr(args, "env", None):
        d = {"env": args.env}
    else:
        raise UsageError("pass --config FILE or --env NAME")
    if getattr(args, "env", None):
        d["env"] = args.env
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        return ExperimentConfig.from_dict(d)
    except (TypeError, ValueError, KeyError) as err:
        raise UsageError(f"invalid config: {err}")


def _out_dir(args, config=None) -> Path:
    out = args.out or (config.output if config is not None else None)
    if out is None:
        raise UsageError("pass --out DIR")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _plan_record(config, env, grid, result) -> dict:
    eta = return_distribution(env.mdp, result.policy, grid, tol=1e-8, check_bounds=False)
    risk = float(risk_values_on_grid(config.risk, eta.probs[env.start_state], grid.atoms))
    return {
        "actions": result.actions().tolist(),
        "start_state": env.start_state,
        "true_risk_at_start": risk,
        "iterations": result.iterations,
        "converged": result.converged,
    }


def cmd_plan(args) -> int:
    config = _load_config(args)
    env = build_env(config.env)
    grid = experiment_grid(config, env)
    mdp = load_mdp(args.model) if args.model else env.mdp
    if (mdp.n_states, mdp.n_actions) != (env.mdp.n_states, env.mdp.n_actions):
        raise UsageError("model shape does not match the environment")
    result = _plan(config, mdp, grid, env.start_state)
    record = {"version": __version__, "config": config.to_dict(), "model": args.model, **_plan_record(config, env, grid, result)}
    write_json(_out_dir(args, config) / "plan.json", record)
    print(f"actions {''.join(map(str, record['actions']))}  risk at start {record['true_risk_at_start']:.6f}")
    return EXIT_OK


def cmd_learn_model(args) -> int:
    config = _load_config(args)
    env = build_env(config.env)
    model = _fit(args.regime, config, env.mdp, 0)
    out = _out_dir(args, config) / "model.json"
    export_model(out, model)
    loss = model.provenance.get("final_loss", float("nan"))
    print(f"wrote {out}  final loss {loss:.6g}")
    return EXIT_OK


def _read_policy(path, n_states, n_actions) -> Policy:
    d = read_json(path)
    if "actions" in d:
        return Policy.deterministic(d["actions"], n_actions)
    if "action_probs" in d:
        return Policy(np.array(d["action_probs"], dtype=float))
    raise UsageError(f"{path} holds neither 'actions' nor 'action_probs'")


def cmd_eval(args) -> int:
    config = _load_config(args)
    env = build_env(config.env)
    grid = experiment_grid(config, env)
    policy = _read_policy(args.policy, env.mdp.n_states, env.mdp.n_actions)
    if policy.n_states != env.mdp.n_states:
        raise UsageError("policy does not match the environment's state count")
    record = {"version": __version__, "config": config.to_dict(), "policy": args.policy,
              **_evaluate(config, env, grid, policy, 0)}
    write_json(_out_dir(args, config) / "eval.json", record)
    print(f"empirical risk {record['empirical_risk']:.6f}  exact risk {record['exact_risk']:.6f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    summary = run_experiment(config, out, jobs=args.jobs)
    for key, agg in sorted(summary["aggregates"].items()):
        risk = agg["empirical_risk"]
        print(f"{key:24s} mean {risk['mean']:+.4f}  ci [{risk['ci_low']:+.4f}, {risk['ci_high']:+.4f}]")
    return EXIT_OK


def cmd_check(args) -> int:
    if args.acceptance is not None:
        from .acceptance import CHECKS, run_check

        numbers = args.acceptance or [n for n, _, _ in CHECKS]
        results = [run_check(n) for n in numbers]
        for r in results:
            print(r.line())
        report = {"acceptance": [r.__dict__ for r in results]}
        ok = all(r.passed for r in results)
    else:
        from .properties import run_property_suite

        rep = run_property_suite(args.profile, args.mutation)
        for r in rep.results:
            print(r.line())
        report = rep.to_dict()
        ok = rep.all_passed
    if args.out:
        write_json(_out_dir(args) / "check.json", report)
    print("all passed" if ok else "FAILURES")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_export_env(args) -> int:
    config = _load_config(args)
    env = build_env(config.env)
    out = _out_dir(args, config)
    write_json(out / "mdp.json", mdp_to_dict(env.mdp))
    write_json(out / "env.json", env.metadata())
    print(f"wrote {out / 'mdp.json'} ({env.mdp.n_states} states, {env.mdp.n_actions} actions)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .envs import ENV_NAMES
    from .properties import MUTATIONS, PROFILES

    parser = argparse.ArgumentParser(prog="distequiv", description="Risk-sensitive planning with learned models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--env", choices=ENV_NAMES, help="environment name (overrides the config)")
            p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory")
        return p

    p = common(sub.add_parser("plan", help="plan in the environment or in a saved model"))
    p.add_argument("--model", help="plan in this model file instead of the true MDP")
    p.set_defaults(fn=cmd_plan)

    p = common(sub.add_parser("learn-model", help="fit a model and write model.json"))
    p.add_argument("--regime", choices=REGIMES, default="psi2")
    p.set_defaults(fn=cmd_learn_model)

    p = common(sub.add_parser("eval", help="evaluate a policy in the true environment"))
    p.add_argument("--policy", required=True, help="plan.json or a file with 'action_probs'")
    p.set_defaults(fn=cmd_eval)

    p = common(sub.add_parser("experiment", help="run every regime and seed and write results"))
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(fn=cmd_experiment)

    p = common(sub.add_parser("check", help="run the property suite or the acceptance checks"), needs_config=False)
    p.add_argument("--profile", choices=tuple(PROFILES), default="fast")
    p.add_argument("--mutation", choices=MUTATIONS, help="switch on a deliberate fault")
    p.add_argument("--acceptance", type=int, nargs="*", metavar="N",
                   help="run acceptance checks N (all when no numbers are given)")
    p.set_defaults(fn=cmd_check)

    p = common(sub.add_parser("export-env", help="write an environment as mdp.json and env.json"))
    p.set_defaults(fn=cmd_export_env)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
