"""Command line entry point: ``udfs <command> ...``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are the long flag names (dashes or underscores).  Command line flags
win over the file.  ``UDFS_THREADS`` overrides any worker count.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` comments and ``[section]`` headers are ignored."""
    out = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            out[key.replace("-", "_")] = value
    return out


def _interval(text: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in text.replace(":", ",").split(","))
    return lo, hi


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--intermediaries", type=int, default=5)
    p.add_argument("--skeletons", type=int, default=200_000)
    p.add_argument("--params", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--grid-size", type=int, default=50)
    p.add_argument("--grid-levels", type=int, default=2)
    p.add_argument("--grid-interval", type=_interval, default=(-1.0, 1.0))
    p.add_argument("--screen-factor", type=float, default=10.0,
                   help="screening slack; 0 disables the screen")
    p.add_argument("--augment", type=int, default=0, metavar="K")
    p.add_argument("--aug-degree", type=int, default=3)
    p.add_argument("--aug-nodes", type=int, default=30)
    p.add_argument("--complexity-threshold", type=int, default=30)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="udfs", description="Symbolic regression by DAG frame search.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("space-size", help="number of construction tuples S_n(i)")
    p.add_argument("--vars", type=int, required=True)
    p.add_argument("--intermediaries", type=int, required=True)

    p = sub.add_parser("list-problems", help="bundled benchmark problems")
    p.add_argument("--suite")

    p = sub.add_parser("fit", help="fit a CSV data set with header x0..x{n-1},y")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--front-csv")
    _add_search_flags(p)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", default="univ")
    p.add_argument("--problems", help="comma separated problem names (overrides --suite)")
    p.add_argument("--noise", type=_floats, default=[0.0])
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--samples", type=int)
    p.add_argument("--jobs", type=int, default=1, help="problem runs in parallel")
    p.add_argument("--out")
    _add_search_flags(p)

    p = sub.add_parser("judge", help="compare a candidate with a ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--strict-symbolic", action="store_true")

    for action in sub.choices.values():
        action.add_argument("--config", help="file of key = value lines mirroring the flags")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    subparsers = parser._subparsers._group_actions[0].choices
    required = [a for sp in subparsers.values() for a in sp._actions if a.required]
    # first pass only locates the command and --config; required flags may live in the file
    for a in required:
        a.required = False
    args = parser.parse_args(argv)
    for a in required:
        a.required = True
    if getattr(args, "config", None):
        subparser = subparsers[args.command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, value in read_config(args.config).items():
            if key not in known or key in ("config", "help"):
                raise SystemExit(f"udfs: unknown config key {key!r} for {args.command}")
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(value) if action.type else value
            action.required = False
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _regressor(args):
    from .augmentation import AugmentationConfig, RegressorFamily
    from .bench_harness import RegressorConfig
    from .param_opt import GridConfig
    return RegressorConfig(
        n_intermediaries=args.intermediaries, max_skeletons=args.skeletons, n_params=args.params,
        grid=GridConfig(args.grid_size, args.grid_levels, args.grid_interval),
        augment=args.augment, threshold=args.complexity_threshold,
        family=RegressorFamily(degree=args.aug_degree), node_budget=args.aug_nodes,
        aug_config=AugmentationConfig(seed=args.seed),
        screen_factor=args.screen_factor or None, search_workers=args.threads,
        n_samples=getattr(args, "samples", None))


def read_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    header = [h.strip() for h in header]
    if not header or header[-1] != "y" or header[:-1] != [f"x{j}" for j in range(len(header) - 1)]:
        raise ValueError(f"{path}: header must be x0,...,x{{n-1}},y, got {','.join(header)}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1], data[:, -1]


def cmd_space_size(args) -> int:
    from .skeleton_sampler import search_space_size
    print(search_space_size(args.vars, args.intermediaries))
    return 0


def cmd_list_problems(args) -> int:
    from .bench_harness import list_problems, load_problem
    for name in list_problems(args.suite):
        p = load_problem(name)
        dom = " ".join(f"[{lo:g},{hi:g}]" for lo, hi in p.domain)
        print(f"{name}\t{' '.join(p.suites)}\t{p.expression}\t{dom}")
    return 0


def cmd_fit(args) -> int:
    from .bench_harness import fit
    X, y = read_dataset(args.data)
    front, selected = fit(X, y, _regressor(args), args.seed)
    records = []
    for m in front.models:
        d = m.to_dict()
        d["selected"] = m is selected
        records.append(d)
    text = json.dumps(records, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    if args.front_csv:
        front.to_csv(args.front_csv)
    print(f"selected: {selected.rendered}  (complexity {selected.complexity}, R2 {selected.r2:.12g})")
    return 0


def cmd_bench(args) -> int:
    from .bench_harness import list_problems, run_benchmark
    names = args.problems.split(",") if args.problems else list_problems(args.suite)
    if not names:
        raise SystemExit(f"udfs: suite {args.suite!r} has no problems")

    def progress(row):
        status = "error: " + row.error if row.error else ("recovered" if row.recovered else "missed")
        print(f"{row.problem}\tnoise={row.noise:g}\trepeat={row.repeat}\t{status}\t"
              f"R2={row.r2_test:.6g}\t{row.wall_time_s:.1f}s\t{row.model}", flush=True)

    report = run_benchmark([n.strip() for n in names], _regressor(args), args.noise, args.repeats,
                           args.seed, args.jobs, progress)
    if args.out:
        report.to_csv(args.out)
    print(f"recovery {report.recovery_rate:.3f}  mean jaccard {report.mean_jaccard:.3f}  "
          f"median R2 {report.median_r2:.6g}  errors {len(report.errors)}")
    return 0


def cmd_judge(args) -> int:
    from .expr_core import parse
    from .simplify_equiv import check_recovery, jaccard_index
    truth, cand = parse(args.truth), parse(args.candidate)
    v = check_recovery(truth, cand, strict_symbolic=args.strict_symbolic)
    print(f"recovered: {v.recovered}")
    print(f"mode: {v.mode}")
    print(f"path: {v.path}")
    if v.witness_constant is not None:
        print(f"constant: {v.witness_constant:.12g}")
    print(f"jaccard: {jaccard_index(truth, cand):.4f}")
    return 0


COMMANDS = {"space-size": cmd_space_size, "list-problems": cmd_list_problems, "fit": cmd_fit,
            "bench": cmd_bench, "judge": cmd_judge}


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"udfs: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
