"""Command-line entry point.

Exit codes: 0 success, 1 validation failure (or a diverged run), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import oracle
from .errors import ConfigError, ErgodicityError, NonMixingError
from .harness import build_features, load_config, rate_fit, run_experiment, validate_linrec, validate_mlmc
from .mdp import generate_random_ergodic, load_mdp, save_mdp
from .policy import PolicyClass

OK, FAILED, USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE)


def _build_parser():
    p = _Parser(prog="mlmc-nac", description="Average-reward natural actor-critic with MLMC estimates.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides the config)")

    orc = sub.add_parser("oracle", help="exact assumption report for an MDP and theta")
    orc.add_argument("--mdp", required=True)
    orc.add_argument("--theta", help="JSON list; zeros when omitted")
    orc.add_argument("--features", default="reduced_one_hot", choices=["reduced_one_hot", "fourier", "empty"])
    orc.add_argument("--c-beta", type=float)

    vm = sub.add_parser("validate-mlmc", help="telescoping identity and sample-cost checks")
    vm.add_argument("--tmax", type=int, nargs="+", default=[8, 16, 32])
    vm.add_argument("--reps", type=int, default=100_000)
    vm.add_argument("--draws", type=int, default=1_000_000)
    vm.add_argument("--seed", type=int, default=0)

    vl = sub.add_parser("validate-linrec", help="synthetic linear-recursion checks")
    vl.add_argument("--replicas", type=int, default=200)
    vl.add_argument("--seed", type=int, default=0)

    rf = sub.add_parser("rate-fit", help="log-log slope of one CSV column against another")
    rf.add_argument("--x", required=True)
    rf.add_argument("--y", required=True)
    rf.add_argument("--floor", type=float)
    rf.add_argument("csv", nargs="+")

    gen = sub.add_parser("gen-mdp", help="write a random ergodic MDP as JSON")
    gen.add_argument("--states", type=int, required=True)
    gen.add_argument("--actions", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--self-loop-min", type=float, default=0.1)
    gen.add_argument("--out", required=True)
    return p


def _report(checks) -> int:
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return OK if failed == 0 else FAILED


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    summary = run_experiment(cfg, args.out)
    print(json.dumps({k: summary[k] for k in ("median_final_gap", "median_initial_gap", "n_completed",
                                               "n_diverged", "J_star")}, indent=2))
    return OK if summary["n_diverged"] == 0 else FAILED


def _cmd_oracle(args) -> int:
    mdp = load_mdp(args.mdp)
    pclass = PolicyClass.tabular(mdp.n_states, mdp.n_actions)
    if args.theta:
        try:
            theta = np.asarray(json.loads(Path(args.theta).read_text(encoding="utf-8")), dtype=float)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"theta: cannot read {args.theta}: {exc}") from None
        if theta.shape != (pclass.dim,):
            raise ConfigError(f"theta: expected {pclass.dim} entries, got shape {theta.shape}")
    else:
        theta = np.zeros(pclass.dim)
    features = build_features(args.features, mdp.n_states)
    ev = oracle.evaluate_policy(mdp, pclass.probs_table(theta))
    report = oracle.assumption_report(mdp, theta, features, pclass, args.c_beta)
    j_star, _ = oracle.optimal_gain(mdp)
    out = {
        "assumptions": report.as_dict(),
        "evaluation": {"gain": ev.gain, "stationary": ev.stationary.tolist(), "v": ev.v.tolist()},
        "J_star": j_star,
        "gradient": oracle.exact_policy_gradient(mdp, theta, pclass, ev).tolist(),
        "npg": oracle.exact_npg(mdp, theta, pclass, ev).tolist(),
    }
    print(json.dumps(out, indent=2))
    return OK


def _cmd_gen(args) -> int:
    mdp = generate_random_ergodic(args.states, args.actions, args.self_loop_min, args.seed)
    save_mdp(mdp, args.out)
    print(f"wrote {args.out}")
    return OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "validate-mlmc":
            return _report(validate_mlmc(tuple(args.tmax), args.reps, args.draws, args.seed))
        if args.command == "validate-linrec":
            return _report(validate_linrec(args.seed, args.replicas))
        if args.command == "rate-fit":
            fit = rate_fit(args.csv, args.x, args.y, args.floor)
            print(json.dumps({"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared,
                              "n_points": len(fit.points)}, indent=2))
            return OK
        if args.command == "gen-mdp":
            return _cmd_gen(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except ValueError as exc:
        # bad values inside otherwise well-formed input (MDP files, CSVs, generator arguments)
        print(f"error: {exc}", file=sys.stderr)
        return FAILED
    except (ErgodicityError, NonMixingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED
    return USAGE


if __name__ == "__main__":
    sys.exit(main())
