"""Command-line entry point.

One subcommand per experiment kind plus `report`. Exit codes: 0 success,
1 invariant failure, 2 config error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from homoglab import config as configmod
from homoglab import runner
from homoglab.config import KINDS
from homoglab.errors import ConfigError, SolverError

_KIND_HELP = {
    "gen-field": "sample one coefficient-field realization to CSV/npy",
    "effmat": "Monte Carlo of the effective matrix at one scale",
    "sweep": "nu / nu* statistics across a dyadic scale ladder",
    "corrector": "corrector ensembles: filtered-gradient decay and growth",
    "gff-compare": "corrector vs Gaussian-surrogate filtered statistics",
    "error-scaling": "homogenization error rate across an eps ladder",
    "regularity": "large-scale energy-density ratio ladder",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homoglab",
        description="numerical laboratory for quantitative stochastic "
                    "homogenization")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=_KIND_HELP[kind])
        sp.add_argument("config", help="path to an INI experiment config")
        sp.add_argument("-o", "--outdir", default=None,
                        help="output directory (overrides config and "
                             "HOMOGLAB_OUTDIR)")
        sp.add_argument("--workers", type=int, default=None,
                        help="thread count (overrides HOMOGLAB_WORKERS)")
    rp = sub.add_parser("report", help="merge bundles into a rate table "
                                       "and invariant matrix")
    rp.add_argument("bundles", nargs="+", help="result bundle directories")
    rp.add_argument("--json", action="store_true",
                    help="print the machine-readable JSON instead of the "
                         "text table")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            text, obj, code = runner.report(args.bundles)
            if args.json:
                print(json.dumps(obj, indent=2, sort_keys=True))
            else:
                print(text)
            return code
        config = configmod.load_file(args.config)
        if config.kind != args.command:
            raise ConfigError(
                f"experiment.kind: config says {config.kind!r} but the "
                f"subcommand is {args.command!r}")
        bundle = runner.run(config, outdir=args.outdir, workers=args.workers)
        checks = bundle.summary.get("checks", {})
        ck = (" ".join(f"{k}={'pass' if v else 'FAIL'}"
                       for k, v in sorted(checks.items())) or "-")
        print(f"bundle: {bundle.directory}")
        print(f"checks: {ck}")
        if bundle.meta["failures"]:
            print(f"solver failures: {len(bundle.meta['failures'])} "
                  f"(see meta.json)", file=sys.stderr)
        return runner.exit_code_for(bundle)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
