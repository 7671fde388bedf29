"""``bench`` command line interface.

Subcommands:

* ``bench run <config> [--out DIR] [--seed N] [--jobs J]`` — execute an
  experiment config and write the result CSV (plus summary figures) to the
  output directory.
* ``bench table <csv>`` — print an aligned comparison table for a result CSV.
* ``bench gen {logreg|lasso} --out DIR [params]`` — generate a synthetic
  problem instance and serialize it.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench
from .objectives import gen_lasso, gen_logreg, save_instance


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench", description="decentralized consensus optimization benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config")
    run_p.add_argument("config", type=Path)
    run_p.add_argument("--out", type=Path, default=Path("results"),
                       help="output directory (default: results)")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed_base")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes for replicates")
    run_p.add_argument("--timing", action="store_true",
                       help="record real wall times (makes the CSV bytes "
                            "depend on the machine)")
    run_p.add_argument("--no-figures", action="store_true",
                       help="skip rendering summary figures")
    run_p.add_argument("--diagnostics", action="store_true",
                       help="dump per-outer-iteration decay CSVs for the "
                            "double-loop solvers (first replicate)")

    table_p = sub.add_parser("table", help="print a comparison table for a result CSV")
    table_p.add_argument("csv", type=Path)

    gen_p = sub.add_parser("gen", help="generate and serialize a problem instance")
    gen_p.add_argument("family", choices=["logreg", "lasso"])
    gen_p.add_argument("--out", type=Path, required=True)
    gen_p.add_argument("--n", type=int, default=None, help="agent count")
    gen_p.add_argument("--d", type=int, default=1000, help="dimension")
    gen_p.add_argument("--m-total", type=int, default=None, help="total sample count")
    gen_p.add_argument("--lam", type=float, default=1e-2,
                       help="ridge weight (logreg)")
    gen_p.add_argument("--lam-c", type=float, default=0.1,
                       help="l1 weight factor relative to |A^T b|_inf (lasso)")
    gen_p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    try:
        cfg = bench.load_config(args.config)
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed_base = args.seed
    csv_path = bench.run_experiment(cfg, args.out, jobs=max(1, args.jobs),
                                    timing=args.timing,
                                    diagnostics=args.diagnostics)
    print(f"wrote {csv_path}")
    if not args.no_figures:
        from . import figures  # deferred: pulls in matplotlib
        for path in figures.render_report(csv_path, args.out / "figures"):
            print(f"wrote {path}")
    print()
    print(bench.compare_table(csv_path))
    return 0


def _cmd_table(args) -> int:
    try:
        print(bench.compare_table(args.csv))
    except (OSError, ValueError) as exc:
        print(f"cannot render table: {exc}", file=sys.stderr)
        return 2
    return 0


def _cmd_gen(args) -> int:
    if args.family == "logreg":
        n = args.n if args.n is not None else 10
        m_total = args.m_total if args.m_total is not None else 400
        problem = gen_logreg(n, args.d, m_total, args.lam, args.seed)
    else:
        n = args.n if args.n is not None else 20
        m_total = args.m_total if args.m_total is not None else 200
        problem = gen_lasso(n, args.d, m_total, args.lam_c, args.seed)
    save_instance(problem, args.out)
    meta = problem.meta
    print(f"wrote {meta.family} instance to {args.out}: n={meta.n} d={meta.d} "
          f"samples={sum(meta.m_per_agent)} lambda={meta.lam:g} seed={meta.seed}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "table":
        return _cmd_table(args)
    return _cmd_gen(args)


if __name__ == "__main__":
    raise SystemExit(main())
