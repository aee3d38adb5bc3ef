"""Command-line entry point: ``perfpred run|audit-sensitivity|stable-point|validate``.

Exit codes: 0 success, 1 validation error, 2 runtime error.  The output
directory can be overridden with ``PERFPRED_OUT_DIR`` (``--out`` wins).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .analysis import sensitivity_audit
from .core import ConfigurationError, RegimeError, run_rng
from .experiment import (OUT_DIR_ENV, ConfigError, _atomic_write, _csv_text, dumps_config,
                         load_config, parse_config, random_theta_pairs, resolve_stable_point, run_experiment)


def _with_overrides(cfg, seed=None, repeats=None):
    if seed is None and repeats is None:
        return cfg
    doc = cfg.to_dict()
    if seed is not None:
        doc["run"]["base_seed"] = seed
    if repeats is not None:
        doc["run"]["repeats"] = repeats
    return parse_config(doc)


def _out_dir(args, cfg) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUT_DIR_ENV) or cfg.output["dir"])


def cmd_run(args) -> int:
    cfg = _with_overrides(load_config(args.config), args.seed, args.repeats)
    out = _out_dir(args, cfg)
    result = run_experiment(cfg, out, jobs=args.jobs)
    for note in result.metadata["schedule_overrides"]:
        print(f"note: {note}")
    last = result.aggregate[-1] if result.aggregate else None
    statuses = list(result.metadata["statuses"].values())
    print(f"wrote {len(result.files)} files to {out}")
    if last is not None:
        print(f"final checkpoint {last[0]}: samples={last[1]} deployments={last[2]} "
              f"mean_dist_sq={last[3]:.6g} n_runs={last[6]}")
    if "diverged" in statuses:
        print(f"{statuses.count('diverged')} of {len(statuses)} runs diverged")
    return 0


def cmd_audit(args) -> int:
    cfg = load_config(args.config)
    env = cfg.build_environment()
    a = cfg.audit
    rng = run_rng(a["seed"], 0, stream=2)
    pairs = random_theta_pairs(env, a["pairs"], rng, a["low"], a["high"])
    rows = sensitivity_audit(env, pairs, a["n_samples"], rng, coordinate=a["coordinate"],
                             paired=a["paired"], n_boot=a["n_boot"])
    header = ("theta", "theta_prime", "w1", "bound", "se", "ratio", "passed")
    table = [tuple(r.as_dict()[h] for h in header) for r in rows]
    text = _csv_text(header, table)
    out = _out_dir(args, cfg)
    _atomic_write(out / "sensitivity_audit.csv", text)
    sys.stdout.write(text)
    return 0 if all(r.passed for r in rows) else 2


def cmd_stable_point(args) -> int:
    cfg = load_config(args.config)
    theta_ps, source = resolve_stable_point(cfg)
    print(json.dumps({"theta_ps": theta_ps.tolist(), "source": source}))
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(dumps_config(cfg))
    for note in cfg.notes:
        print(f"note: {note}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perfpred", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write CSV traces")
    p.add_argument("config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override run.base_seed")
    p.add_argument("--repeats", type=int, help="override run.repeats")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for replicates")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit-sensitivity", help="empirical W1 check of epsilon-sensitivity")
    p.add_argument("config")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("stable-point", help="print the stable point used by an experiment")
    p.add_argument("config")
    p.set_defaults(func=cmd_stable_point)

    p = sub.add_parser("validate", help="validate a config and echo it with defaults resolved")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, RegimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
