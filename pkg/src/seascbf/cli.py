"""Command-line front end.

    python -m seascbf bound-compare [--config PATH] [--trials N] [--seed U64]
                                    [--out DIR] [--threads N] [--json]
    python -m seascbf motion-plan   ...  [--trajectories]
    python -m seascbf se2-demo      ...  [--trajectories]
    python -m seascbf se3-slit      ...  [--trajectories]
    python -m seascbf validate

Exit codes: 0 success, 2 config error, 3 acceptance-check failure,
4 solver infeasibility budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .barriers import GRAD_STEP
from .experiments import RUNNERS, ConfigError, load_config, validate_config, default_config
from .validation import run_validation

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_INFEASIBLE = 0, 2, 3, 4
CSV_HEADER = "# sea-scbf-results v1"
THREADS_ENV = "SEA_SCBF_THREADS"
DEFAULT_BUDGET = 0.01

log = logging.getLogger("seascbf")

OUTPUT_FILES = {
    "bound_compare": "bound_compare.csv",
    "table1": "table1.csv",
    "barrier_trace": "barrier_trace.csv",
    "endpoints": "endpoints.csv",
    "endpoints_unfiltered": "endpoints_unfiltered.csv",
    "safety": "safety.csv",
    "trajectories": "trajectories.csv",
}


def write_table(path, rows, mirror_json=False):
    """CSV with a version comment line; optional JSON mirror next to it."""
    path = Path(path)
    fields = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    if mirror_json:
        with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump({"version": CSV_HEADER[2:], "rows": rows}, fh, indent=1)
            fh.write("\n")


def read_table(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != CSV_HEADER:
            raise ValueError(f"{path}: missing results header")
        return list(csv.DictReader(fh))


def resolve_threads(flag):
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be at least 1")
        return n
    return None


def _positive(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _seed(text):
    n = int(text)
    if not 0 <= n < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="seascbf", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="experiment config (default: shipped config)")
        s.add_argument("--trials", type=_positive)
        s.add_argument("--seed", type=_seed)
        s.add_argument("--out", type=Path)
        s.add_argument("--threads", type=_positive)
        s.add_argument("--json", action="store_true", help="also write a JSON mirror per CSV")
        if name == "bound-compare":
            # negative control: scale every proxy to make the bound unsound
            s.add_argument("--proxy-scale", type=float, default=1.0, help=argparse.SUPPRESS)
        else:
            s.add_argument("--trajectories", action="store_true", help="dump per-trial trajectories")
    v = sub.add_parser("validate")
    v.add_argument("--grad-step", type=float, default=GRAD_STEP, help=argparse.SUPPRESS)
    return p


def run_experiment(args):
    name = args.command
    doc = load_config(args.config, name) if args.config else validate_config(default_config(name), name)
    threads = resolve_threads(args.threads)
    kwargs = dict(trials=args.trials, seed=args.seed, threads=threads)
    if getattr(args, "trajectories", False):
        kwargs["keep_trials"] = True
    if getattr(args, "proxy_scale", 1.0) != 1.0:
        kwargs["proxy_scale"] = args.proxy_scale
    result = RUNNERS[name](doc, **kwargs)

    out = args.out or Path(doc["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    mirror = args.json or doc["output"].get("json", False)
    for key, rows in result.tables.items():
        write_table(out / OUTPUT_FILES[key], rows, mirror)

    for check, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {check}")
    for row in result.summary.get("violations", []):
        print(f"  violation: T={row['T']} sigma_y={row['sigma_y']} beta={row['beta']} "
              f"bound={row['bound']:.4g} < freq={row['empirical_freq']:.4g}")
    if "safety" in result.tables:
        for r in result.tables["safety"]:
            print(f"  safety {r['method']}: {r['safety_rate']:.1f}%")
    if "table1" in result.tables:
        for r in result.tables["table1"]:
            print(f"  {r['method']:>9} {r['env']:>10}: safety {r['safety_rate']:5.1f}%  "
                  f"goal {r['goal_reach']:5.1f}%")

    budget = doc["campaign"].get("infeasibility_budget", DEFAULT_BUDGET)
    if result.infeasible_fraction() > budget:
        print(f"infeasible filter solves: {result.infeasible}/{result.filter_calls} "
              f"exceeds budget {budget:g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK if result.passed else EXIT_CHECK


def run_validate(args):
    results = run_validation(grad_step=args.grad_step)
    failed = []
    for name, (ok, detail) in results.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not ok:
            failed.append(name)
    if failed:
        print("failing checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return run_validate(args)
        return run_experiment(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
