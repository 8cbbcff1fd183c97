"""plotkit command line: render one CSV artifact to an image."""

from __future__ import annotations

import argparse
import sys

from .io import PlotKitError
from .render import KINDS, PlotJob, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plotkit", description="Render aidlab CSV artifacts")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("input", help="input CSV path")
    parser.add_argument("-o", "--out", required=True, help="output image path")
    parser.add_argument("--log-y", action="store_true")
    parser.add_argument("--title", default=None)
    args = parser.parse_args(argv)
    try:
        result = render(PlotJob(kind=args.kind, input_path=args.input,
                                output_path=args.out, log_y=args.log_y,
                                title=args.title))
    except (PlotKitError, OSError) as exc:
        print(f"plotkit error: {exc}", file=sys.stderr)
        return 2
    extra = f", {result.stable_count} stable points" if args.kind == "basin" \
        else ""
    print(f"wrote {result.output_path} ({result.rows} rows{extra})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
