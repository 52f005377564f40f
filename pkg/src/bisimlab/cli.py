"""``bisimlab`` command line: gen | solve | estimate | learn | verify.

Parameters come from a flat ``key = value`` config file (``--config``) and
are overridden by flags (``--seed``, ``--out``, ``--workers``, ``--tol``,
``--samples`` and the generic ``--set KEY=VALUE``).  Unknown keys are an
error.  Primary outputs (files under ``--out`` and stdout) are deterministic
given the config and root seed; timings go to the log on stderr.

Exit codes: 0 success, 1 argument/config error, 2 convergence failure or
training divergence, 3 verification failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from bisimlab import io
from bisimlab._seeding import derive_seed
from bisimlab.estimators import bias_audit
from bisimlab.learner import TrainingDivergence, train_separable_gaussian, train_tabular
from bisimlab.mdp import (duplicate_states, random_gaussian_mdp, random_mdp, random_policy,
                          reward_split_mdp, self_loop_mdp, shared_successor_mdp, uniform_policy)
from bisimlab.operators import KINDS, ConvergenceError, SimilarityG, fixed_point

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("bisimlab")


class ConfigError(ValueError):
    pass


REQUIRED = object()


def _choice(*options):
    def parse(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


def _optional_float(v):
    return None if v in ("", "none", "discount") else float(v)


COMMON = {"seed": (int, 0), "out": (str, "."), "workers": (int, 0)}

SCHEMAS = {
    "gen": {
        **COMMON,
        "n_states": (int, 3), "n_actions": (int, 2), "discount": (float, 0.9),
        "reward_low": (float, 0.0), "reward_high": (float, 1.0),
        "policy": (_choice("random", "uniform"), "random"), "duplicate": (str, ""),
    },
    "solve": {
        **COMMON, "tol": (float, 1e-10),
        "mdp": (str, REQUIRED), "policy": (str, "uniform"), "kind": (str, "eps_bar"),
        "similarity": (_choice("reward_diff", "policy_mean_diff"), "reward_diff"),
        "c": (_optional_float, None), "max_iter": (int, 10_000),
    },
    "estimate": {
        **COMMON, "samples": (int, 10_000), "tol": (float, 1e-10),
        "mdp": (str, REQUIRED), "policy": (str, "uniform"),
        "method": (_choice("eps", "dbc", "psm"), "eps"), "mode": (str, ""), "pairs": (str, "all"),
        "metric": (str, "fixed_point"), "reference": (_choice("target", "expectation"), "target"),
        "similarity": (_choice("reward_diff", "policy_mean_diff"), "reward_diff"),
        "c": (_optional_float, None),
    },
    "learn": {
        **COMMON, "samples": (int, 1),
        "learner": (_choice("tabular", "separable"), "tabular"),
        "mdp": (str, ""), "policy": (str, "uniform"),
        "similarity": (_choice("reward_diff", "policy_mean_diff"), "reward_diff"),
        "c": (_optional_float, None), "steps": (int, 1000), "step_size": (float, 1e-2),
        "batch_size": (int, 0), "schedule": (_choice("constant", "linear"), "constant"),
        "state_dim": (int, 3), "action_dim": (int, 1), "discount": (float, 0.5),
        "max_power": (int, 2), "state_scale": (float, 1.0),
    },
    "verify": {
        **COMMON,
        "scale": (_choice("default", "quick"), "default"), "criteria": (str, "all"),
    },
}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {n}: empty key")
        out[key] = value
    return out


def resolve_config(command: str, file_values: dict, overrides: dict) -> dict:
    schema = SCHEMAS[command]
    raw = {**file_values, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, (parse, default) in schema.items():
        if key not in raw:
            if default is REQUIRED:
                raise ConfigError(f"{command} needs '{key}'")
            cfg[key] = default
            continue
        try:
            cfg[key] = parse(str(raw[key]))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
    if "seed" in cfg and cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return cfg


# -- loading inputs -----------------------------------------------------------------------


def load_mdp(spec: str, seed: int):
    """A file path or an inline spec: ``random:S:A[:discount]``, ``self_loop``,
    ``reward_split`` or ``shared_successor``."""
    if spec == "self_loop":
        return self_loop_mdp()
    if spec == "reward_split":
        return reward_split_mdp()
    if spec == "shared_successor":
        return shared_successor_mdp()
    if spec.startswith("random:"):
        parts = spec.split(":")[1:]
        try:
            S, A = int(parts[0]), int(parts[1])
            discount = float(parts[2]) if len(parts) > 2 else 0.9
        except (IndexError, ValueError):
            raise ConfigError(f"bad inline MDP spec {spec!r}; use random:S:A[:discount]") from None
        return random_mdp(S, A, seed=derive_seed(seed, "mdp"), discount=discount)
    return io.parse_mdp(io.read_text(spec))


def load_policy(spec: str, mdp, seed: int):
    if spec == "uniform":
        return uniform_policy(mdp)
    if spec == "random":
        return random_policy(mdp, seed=derive_seed(seed, "policy"))
    policy = io.parse_policy(io.read_text(spec))
    policy.check_compatible(mdp)
    return policy


def _similarity(name, mdp, policy):
    return SimilarityG.reward_diff(mdp) if name == "reward_diff" else SimilarityG.policy_mean_diff(policy)


def _parse_duplicates(text: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            s, k = item.split(":")
            out[int(s)] = int(k)
        except ValueError:
            raise ConfigError(f"bad duplicate directive {item!r}; use state:copies") from None
    return out


def _parse_pairs(text: str, n: int) -> list:
    if text == "all":
        return [(i, j) for i in range(n) for j in range(i, n)]
    if text == "diagonal":
        return [(i, i) for i in range(n)]
    if text == "offdiagonal":
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    pairs = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            i, j = (int(v) for v in item.split("-"))
        except ValueError:
            raise ConfigError(f"bad pair {item!r}; use i-j") from None
        if not (0 <= i < n and 0 <= j < n):
            raise ConfigError(f"pair {item} out of range for {n} states")
        pairs.append((i, j))
    if not pairs:
        raise ConfigError("no pairs selected")
    return pairs


def _out_dir(cfg) -> Path:
    path = Path(cfg["out"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo(cfg) -> dict:
    # run-location keys are left out so reports compare equal across output dirs
    return {k: v for k, v in cfg.items() if k not in ("out", "workers")}


# -- subcommands --------------------------------------------------------------------------


def cmd_gen(cfg) -> int:
    seed = cfg["seed"]
    if cfg["n_states"] < 1 or cfg["n_actions"] < 1:
        raise ConfigError("n_states and n_actions must be positive")
    mdp = random_mdp(cfg["n_states"], cfg["n_actions"], (cfg["reward_low"], cfg["reward_high"]),
                     seed=derive_seed(seed, "mdp"), discount=cfg["discount"])
    policy = random_policy(mdp, derive_seed(seed, "policy")) if cfg["policy"] == "random" else uniform_policy(mdp)
    out = _out_dir(cfg)
    dup = _parse_duplicates(cfg["duplicate"])
    if dup:
        mdp, pairs = duplicate_states(mdp, dup)
        policy = pairs.lift_policy(policy)
        io.write_text(out / "pairs.txt", io.format_pairs(pairs))
    io.write_text(out / "mdp.txt", io.format_mdp(mdp))
    io.write_text(out / "policy.txt", io.format_policy(policy))
    extra = f", {len(pairs)} bisimilar pairs" if dup else ""
    print(f"gen: {mdp.n_states} states, {mdp.n_actions} actions, discount {mdp.discount:g}{extra}")
    return EXIT_OK


def cmd_solve(cfg) -> int:
    kinds = [k.strip() for k in cfg["kind"].split(",") if k.strip()]
    bad = [k for k in kinds if k not in KINDS]
    if not kinds or bad:
        raise ConfigError(f"kind must be a comma list drawn from {', '.join(KINDS)}")
    mdp = load_mdp(cfg["mdp"], cfg["seed"])
    policy = load_policy(cfg["policy"], mdp, cfg["seed"])
    g = _similarity(cfg["similarity"], mdp, policy)
    out = _out_dir(cfg)
    summary = {"config": _echo(cfg), "results": {}}
    metrics = {}
    status = EXIT_OK
    for kind in kinds:
        try:
            res = fixed_point(kind, mdp, policy, tol=cfg["tol"], max_iter=cfg["max_iter"],
                              g=g if kind in ("eps", "eps_bar") else None, c=cfg["c"])
        except ConvergenceError as exc:
            res = exc.result
            status = EXIT_CONVERGENCE
        metrics[kind] = res.metric
        marker = "converged" if res.converged else "not-converged"
        io.write_text(out / f"metric_{kind}.txt", io.format_metric(res.metric, marker))
        summary["results"][kind] = {"iterations": res.iterations, "residual": res.residual,
                                    "converged": res.converged}
        print(f"solve {kind}: {marker} after {res.iterations} iterations, residual {res.residual:.3e}")
    if len(kinds) > 1:
        summary["ordering"] = {}
        for lo, hi in zip(kinds, kinds[1:]):
            slack = float(np.min(metrics[hi] - metrics[lo]))
            summary["ordering"][f"{hi}-{lo}"] = slack
            print(f"ordering {hi} >= {lo}: min slack {slack:.3e}")
    io.write_text(out / "solve.json", io.dumps(summary))
    return status


def cmd_estimate(cfg) -> int:
    seed = cfg["seed"]
    mdp = load_mdp(cfg["mdp"], seed)
    policy = load_policy(cfg["policy"], mdp, seed)
    g = _similarity(cfg["similarity"], mdp, policy)
    c = cfg["c"]
    if cfg["metric"] == "fixed_point":
        d = fixed_point("eps_bar", mdp, policy, tol=cfg["tol"], g=g, c=c).metric
    elif cfg["metric"] == "zero":
        d = np.zeros((mdp.n_states, mdp.n_states))
    else:
        d, _ = io.parse_metric(io.read_text(cfg["metric"]))
    pairs = _parse_pairs(cfg["pairs"], mdp.n_states)
    mode = cfg["mode"] or None
    try:
        reports = bias_audit(cfg["method"], mdp, policy, d, pairs, cfg["samples"], derive_seed(seed, "estimate"),
                             g=g, c=c, mode=mode, reference=cfg["reference"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(cfg)
    io.write_text(out / "estimates.csv", io.reports_to_csv(reports))
    io.write_text(out / "estimates.json", io.dumps({"config": _echo(cfg), "reports": [r.as_dict() for r in reports]}))
    ratios = [abs(r.bias) / r.std_error if r.std_error > 0 else (0.0 if r.bias == 0 else math.inf) for r in reports]
    print(f"estimate {reports[0].method}/{reports[0].mode}: {len(reports)} pairs, "
          f"max |bias|/stderr = {max(ratios):.4g}")
    return EXIT_OK


def cmd_learn(cfg) -> int:
    seed = cfg["seed"]
    out = _out_dir(cfg)
    status = EXIT_OK
    summary = {"config": _echo(cfg)}
    try:
        if cfg["learner"] == "tabular":
            if not cfg["mdp"]:
                raise ConfigError("tabular learning needs 'mdp'")
            mdp = load_mdp(cfg["mdp"], seed)
            policy = load_policy(cfg["policy"], mdp, seed)
            params, history = train_tabular(
                mdp, policy, _similarity(cfg["similarity"], mdp, policy), cfg["c"], cfg["steps"],
                cfg["step_size"], cfg["batch_size"] or None, derive_seed(seed, "learn"),
                n_target_samples=cfg["samples"], schedule=cfg["schedule"])
            io.write_text(out / "params.txt", io.format_metric(params.distance(), "learned"))
            summary["final_sup_error"] = history.sup_error[-1]
        else:
            testbed, policy = random_gaussian_mdp(cfg["state_dim"], cfg["action_dim"],
                                                  seed=derive_seed(seed, "testbed"), discount=cfg["discount"])
            params, history = train_separable_gaussian(
                testbed, policy, cfg["similarity"], cfg["c"], cfg["steps"], cfg["step_size"],
                cfg["batch_size"] or 64, cfg["samples"], derive_seed(seed, "learn"), cfg["max_power"],
                cfg["state_scale"])
            io.write_text(out / "params.txt", io.format_separable(params))
    except TrainingDivergence as exc:
        history = exc.history
        status = EXIT_CONVERGENCE
        summary["diverged_at_step"] = exc.step
        print(f"learn: diverged at step {exc.step}")
    io.write_text(out / "history.csv", io.history_to_csv(history))
    summary["steps_completed"] = len(history)
    summary["final_loss"] = history.loss[-1] if len(history) else math.nan
    io.write_text(out / "learn.json", io.dumps(summary))
    if status == EXIT_OK:
        print(f"learn {cfg['learner']}: {len(history)} steps, final loss {summary['final_loss']:.6g}")
    return status


def cmd_verify(cfg, fault=None) -> int:
    from bisimlab.verification import CHECKS, run_all

    if cfg["criteria"] == "all":
        criteria = sorted(CHECKS)
    else:
        try:
            criteria = sorted({int(s) for s in cfg["criteria"].split(",")})
        except ValueError:
            raise ConfigError("criteria must be 'all' or a comma list of numbers") from None
        if not set(criteria) <= set(CHECKS):
            raise ConfigError(f"criteria must lie in 1..{max(CHECKS)}")
    workers = cfg["workers"] or os.cpu_count() or 1
    results = run_all(cfg["seed"], cfg["scale"], fault, min(workers, len(criteria)), criteria)
    lines = [r.line() for r in results]
    for r in results:
        log.info("check %02d %s took %.2fs", r.criterion, r.name, r.runtime)
    failed = [r for r in results if not r.passed]
    lines.append(f"verify: {len(results) - len(failed)}/{len(results)} checks passed"
                 + (f"; failed: {', '.join(r.name for r in failed)}" if failed else ""))
    out = _out_dir(cfg)
    io.write_text(out / "verify.txt", "\n".join(lines) + "\n")
    io.write_text(out / "verify.json", io.dumps({"config": _echo(cfg), "checks": [r.as_dict() for r in results],
                                                 "passed": not failed}))
    print("\n".join(lines))
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "estimate": cmd_estimate, "learn": cmd_learn, "verify": cmd_verify}


# -- entry point --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bisimlab", description="Bisimulation metrics on finite MDPs.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value file")
    parser.add_argument("--seed", help="root seed (unsigned 64-bit)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", help="worker processes (default: available CPUs)")
    parser.add_argument("--tol", help="fixed-point tolerance")
    parser.add_argument("--samples", help="Monte-Carlo sample count")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    parser.add_argument("--log-level", default="WARNING", help="stderr log level")
    parser.add_argument("--inject-fault", choices=["transport"], help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(stream=sys.stderr, level=args.log_level.upper(),
                            format="%(asctime)s %(levelname)s %(message)s")
        file_values = parse_config_text(io.read_text(args.config)) if args.config else {}
        overrides = {k: getattr(args, k) for k in ("seed", "out", "workers", "tol", "samples")}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        cfg = resolve_config(args.command, file_values, overrides)
        start = time.perf_counter()
        if args.command == "verify":
            code = cmd_verify(cfg, args.inject_fault)
        else:
            if args.inject_fault:
                raise ConfigError("--inject-fault only applies to verify")
            code = COMMANDS[args.command](cfg)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
        return code
    except ConfigError as exc:
        print(f"bisimlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"bisimlab: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"bisimlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"bisimlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
