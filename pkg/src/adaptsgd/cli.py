"""Command-line entry point: ``run``, ``compare``, ``verify``, ``make-data``.

Exit codes: 0 success, 2 solver failure (or failed verification), 3 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError
from .harness import ExperimentConfig, compare, run_experiment, verify_trace
from .problems import make_logistic_data, write_dataset_csv

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3


def _seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="adaptsgd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seeds", type=_seeds, default=None, help="comma-separated, overrides config")
    r.add_argument("--parallel", type=int, default=1)

    c = sub.add_parser("compare", help="aggregate a run directory and plot")
    c.add_argument("--out", required=True)
    c.add_argument("--epoch-size", type=int, default=None)
    c.add_argument("--metric", default="output_objective")

    v = sub.add_parser("verify", help="replay a trace and re-check line-search certificates")
    v.add_argument("--trace", required=True)

    d = sub.add_parser("make-data", help="write a seeded synthetic logistic dataset as CSV")
    d.add_argument("--m", type=int, default=500)
    d.add_argument("--n", type=int, default=20)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--m-test", type=int, default=0)
    d.add_argument("--out", required=True, help="CSV path; the test split goes to <out>.test.csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = ExperimentConfig.load(args.config)
            if args.seeds:
                cfg.seeds = args.seeds
            res = run_experiment(cfg, args.out, parallel=args.parallel)
            for m in res.runs:
                print(f"{m['run_id']}: {m.get('status')} "
                      f"T={m.get('total_oracle_calls')} f={m.get('final_objective')}")
            return EXIT_SOLVER if res.failed else EXIT_OK
        if args.command == "compare":
            agg = compare(args.out, args.epoch_size, args.metric)
            print(json.dumps(agg.get("final_median", {}), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "verify":
            res = verify_trace(args.trace)
            print(f"{res.run_id}: rows={res.rows_checked} match={res.rows_matching} "
                  f"certificates={res.certificates} failed={res.certificates_failed}")
            return EXIT_OK if res.ok else EXIT_SOLVER
        if args.command == "make-data":
            A, y, At, yt = make_logistic_data(args.m, args.n, args.seed, m_test=args.m_test)
            write_dataset_csv(args.out, A, y)
            if args.m_test:
                write_dataset_csv(args.out + ".test.csv", At, yt)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        # unreadable config or unwritable output directory
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
