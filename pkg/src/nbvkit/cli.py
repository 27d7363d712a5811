"""``nbv`` command line: run, verify-theorem, compare."""

from __future__ import annotations

import argparse
import json
import sys

from .bench import compare, load_config, run, verify_theorem
from .errors import ConfigError, InvalidInputError


def _parser():
    p = argparse.ArgumentParser(prog="nbv", description="Next-best-view planning experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run a planning protocol over seeds"),
                           ("verify-theorem", "check the order of the volume / surface gap")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", nargs="?", help="TOML configuration file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        s.add_argument("--out", help="output directory (default: timestamped under output_dir)")
    c = sub.add_parser("compare", help="tabulate AUCs of several run reports")
    c.add_argument("reports", nargs="+")
    c.add_argument("--out", help="write the table here instead of stdout")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "compare":
            table = compare(args.reports)
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(table)
            else:
                sys.stdout.write(table)
            return 0
        overrides = list(args.set)
        if args.command == "verify-theorem":
            overrides = ["protocol=\"verify-theorem\""] + overrides
        cfg = load_config(args.config, overrides)
        if args.command == "verify-theorem" or cfg.protocol == "verify-theorem":
            verdict, out = verify_theorem(cfg, args.out)
            print(json.dumps(verdict, sort_keys=True))
            print(f"results in {out}")
            return 0
        report, out = run(cfg, args.out)
        for s in report.seeds:
            print(f"seed {s.seed}: " + (f"auc {s.auc:.4f}" if s.error is None else f"failed ({s.error})"))
        if report.mean_auc is not None:
            print(f"mean auc {report.mean_auc:.4f} +- {report.std_auc:.4f}")
        print(f"results in {out}")
        return 0 if report.mean_auc is not None else 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
