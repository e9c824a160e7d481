"""Command line entry point: `plotkit plot --in <csv> --kind <kind> --out <img>`."""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, PlotSpec, render
from .schema import EmptyInputError, SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit",
        description="Render figures from sharpkit experiment CSV files.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("plot", help="render one figure from a CSV file")
    p.add_argument("--in", dest="input_csv", required=True,
                   help="experiment CSV produced by the sharpkit CLI")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--out", dest="out_path", required=True,
                   help="output image path (extension selects the format)")
    p.add_argument("--title", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = PlotSpec(input_csv=args.input_csv, kind=args.kind,
                    out_path=args.out_path, title=args.title)
    try:
        result = render(spec)
    except (SchemaError, EmptyInputError, OSError) as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 1
    if result.annotated_slope is not None:
        print(f"annotated slope: {result.annotated_slope:.6f}")
    print(f"wrote {result.path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
