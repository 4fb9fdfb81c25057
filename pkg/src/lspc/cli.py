"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 I/O or parse error, 3 numeric abort,
4 acceptance failure (a gradient or bound check that ran but did not pass).
The LSPC_FP_MODE environment variable selects the floating-point contract;
"strict" (the default) is the mode under which all bitwise reproducibility
claims hold.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import FormatError, LspcError, NumericError, UsageError
from . import data as data_mod
from . import gradcheck as gradcheck_mod
from .data import MetricDef
from .envs import TabularEnvAdapter, make_env
from .evaltheory import discretize_policy, evaluate, sweep_epsilon, theory_check
from .policy import action_scan, policy_fn
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

FP_MODES = ("strict", "fast")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4

GRADCHECK_TOL = 1e-4


def fp_mode() -> str:
    mode = os.environ.get("LSPC_FP_MODE", "strict")
    if mode not in FP_MODES:
        raise UsageError(f"LSPC_FP_MODE must be one of {FP_MODES}, got {mode!r}")
    return mode


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="lspc", description="Safe offline RL pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", help="roll scripted behaviors into a dataset")
    c.add_argument("--env", required=True)
    c.add_argument("--behavior", required=True)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train critics and policies on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None)

    e = sub.add_parser("eval", help="roll out a trained policy")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--env", required=True)
    e.add_argument("--policy", required=True, choices=("lspc-s", "lspc-o", "cvae"))
    e.add_argument("--episodes", type=int, required=True)
    e.add_argument("--kappa", type=float, required=True)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", default=None)

    s = sub.add_parser("scan", help="sample per-policy actions at one state")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--state", required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)

    w = sub.add_parser("sweep", help="latent restriction sweep")
    w.add_argument("--config", required=True)
    w.add_argument("--data", required=True)
    w.add_argument("--eps", required=True)
    w.add_argument("--seeds", type=int, required=True)
    w.add_argument("--out", required=True)

    th = sub.add_parser("theory", help="verify divergence bounds on a tabular CMDP")
    th.add_argument("--ckpt", required=True)
    th.add_argument("--env", required=True)
    th.add_argument("--out", required=True)
    th.add_argument("--samples", type=int, default=2000)
    th.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    g.add_argument("--seeds", type=int, default=5)

    return p


def _write_json(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


def _cmd_collect(args) -> int:
    env = make_env(args.env)
    ds = data_mod.collect(env, args.behavior, args.n, args.seed)
    data_mod.save(ds, args.out)
    kappa = float(getattr(env.spec, "kappa", 1.0))
    print(f"wrote {args.out}: {ds.n} transitions, "
          f"{len(ds.episode_starts)} episodes, "
          f"safe fraction {ds.safe_fraction(kappa):.3f} at kappa={kappa}")
    return EXIT_OK


def _cmd_train(args) -> int:
    ds = data_mod.load(args.data)
    cfg = TrainConfig.from_json(args.config)
    if args.steps is not None:
        import dataclasses
        cfg = dataclasses.replace(cfg, steps=args.steps)
    env = make_env(cfg.env)
    critics, bundle, log, state = train(cfg, ds, env=env)
    metric = MetricDef.from_dataset(ds, kappa=float(getattr(env.spec, "kappa", 1.0)))
    save_checkpoint(critics, bundle, args.out, adam=state.adam, rngs=state.rngs,
                    step=state.step, train_config=cfg, metric=metric)
    log.to_jsonl(os.path.join(args.out, "train_log.jsonl"))
    print(f"trained {state.step} steps -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    critics, bundle, meta = load_checkpoint(args.ckpt)
    env = make_env(args.env)
    if "metric" not in meta or meta["metric"] is None:
        raise FormatError("checkpoint sidecar lacks the metric block (r_min/r_max)")
    metric = MetricDef(r_min=meta["metric"]["r_min"], r_max=meta["metric"]["r_max"],
                       kappa=args.kappa)
    rep = evaluate(policy_fn(bundle, args.policy), env, args.episodes, metric,
                   seed=args.seed, policy_id=args.policy)
    _write_json(rep.to_dict(), args.out)
    return EXIT_OK


def _cmd_scan(args) -> int:
    critics, bundle, _ = load_checkpoint(args.ckpt)
    try:
        state = np.array([float(v) for v in args.state.split(",")])
    except ValueError as exc:
        raise UsageError(f"bad --state {args.state!r}: {exc}") from exc
    rng = np.random.default_rng(args.seed)
    rows = action_scan(bundle, critics, state, args.samples, rng)
    _write_json({"state": state.tolist(), "rows": rows}, args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = TrainConfig.from_json(args.config)
    ds = data_mod.load(args.data)
    try:
        eps_list = [float(v) for v in args.eps.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"bad --eps {args.eps!r}: {exc}") from exc
    table = sweep_epsilon(cfg, ds, eps_list, seeds=list(range(args.seeds)))
    _write_json(table, args.out)
    return EXIT_OK


def _cmd_theory(args) -> int:
    critics, bundle, _ = load_checkpoint(args.ckpt)
    env = make_env(args.env)
    if not isinstance(env, TabularEnvAdapter):
        raise UsageError("theory verification needs a tabular environment")
    rng = np.random.default_rng(args.seed)
    pi = discretize_policy(policy_fn(bundle, "lspc-o"), env, args.samples, rng)
    pi_s = discretize_policy(policy_fn(bundle, "lspc-s"), env, args.samples, rng)
    report = theory_check(env.cmdp, pi, pi_s)
    _write_json(report.to_dict(), args.out)
    if not report.all_passed:
        print("theory check FAILED", file=sys.stderr)
        return EXIT_ACCEPTANCE
    print("theory check passed: "
          + ", ".join(f"{c['name']} ok" for c in report.checks))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    reports = gradcheck_mod.run_suite(n_seeds=args.seeds)
    worst = max(r.max_rel_err for r in reports)
    for r in reports:
        status = "ok" if r.passed(GRADCHECK_TOL) else "FAIL"
        print(f"{r.loss_name}: max rel err {r.max_rel_err:.3e} "
              f"({r.n_params} params, {r.n_resampled} redraws) {status}")
    print(f"worst case: {worst:.3e}")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_ACCEPTANCE


_COMMANDS = {
    "collect": _cmd_collect,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "scan": _cmd_scan,
    "sweep": _cmd_sweep,
    "theory": _cmd_theory,
    "gradcheck": _cmd_gradcheck,
}


def _merge_state_flag(argv):
    """Fold `--state -0.8,-0.8` into `--state=-0.8,-0.8`; argparse would
    otherwise read the negative coordinate pair as an option string."""
    if argv is None:
        return None
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--state" and i + 1 < len(argv):
            out.append(f"--state={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def run(argv=None) -> int:
    try:
        fp_mode()
        parser = _build_parser()
        args = parser.parse_args(_merge_state_flag(argv))
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run(sys.argv[1:]))
