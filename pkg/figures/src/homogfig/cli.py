"""Command-line entry point: render panels and rate plots from bundles.

Exit codes: 0 success, 2 bad input (missing bundle, wrong schema, wrong
kind for the requested figure).
"""

from __future__ import annotations

import argparse
import sys

from homogfig.errors import BundleFormatError
from homogfig.io import load_bundle
from homogfig.panels import corrector_panel, field_panel
from homogfig.rates import rate_figure
from homogfig.render import save_figure


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homogfig",
        description="render figures from homoglab result bundles")
    sub = parser.add_subparsers(dest="command", required=True)

    fp = sub.add_parser("field-panel",
                        help="heatmap grid of coefficient-field samples")
    fp.add_argument("bundles", nargs="+",
                    help="1 to 4 gen-field bundle directories")
    fp.add_argument("-o", "--out", required=True, help="output .png or .svg")

    cp = sub.add_parser("corrector-panel",
                        help="corrector (and surrogate) heatmaps")
    cp.add_argument("bundle", help="corrector or gff-compare bundle")
    cp.add_argument("-o", "--out", required=True, help="output .png or .svg")

    rp = sub.add_parser("rate-plot",
                        help="ladder statistics with fitted-slope annotations")
    rp.add_argument("bundle", help="bundle directory")
    rp.add_argument("-o", "--out", required=True, help="output .png or .svg")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "field-panel":
            fig = field_panel([load_bundle(b) for b in args.bundles])
        elif args.command == "corrector-panel":
            fig = corrector_panel(load_bundle(args.bundle))
        else:
            fig = rate_figure(load_bundle(args.bundle))
        path = save_figure(fig, args.out)
        print(f"wrote {path}")
        return 0
    except (BundleFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
