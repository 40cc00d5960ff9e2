"""Render figures from a completed pipeline run directory."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import ALL_FIGURES, render_all


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fgridplots")
    parser.add_argument("--run", required=True, help="pipeline output directory")
    parser.add_argument("--out", required=True, help="directory for rendered figures")
    parser.add_argument("--figures", default="", help=f"comma list from {sorted(ALL_FIGURES)}; default all")
    args = parser.parse_args(argv)
    names = [n for n in args.figures.split(",") if n] or None
    if names:
        unknown = set(names) - set(ALL_FIGURES)
        if unknown:
            print(f"unknown figures: {sorted(unknown)}", file=sys.stderr)
            return 2
    try:
        written = render_all(Path(args.run), Path(args.out), names)
    except FileNotFoundError as err:
        print(f"missing artifact: {err}", file=sys.stderr)
        return 3
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
