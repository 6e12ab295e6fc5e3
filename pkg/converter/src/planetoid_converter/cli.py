"""CLI: ``convert <in_dir> <name> <out_dir>`` and ``verify <out_dir>``."""

from __future__ import annotations

import argparse
import sys

from . import ConversionError, EXPECTED_STATS, convert, verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planetoid-convert",
        description="Convert Planetoid benchmark files to canonical TSV datasets")
    commands = parser.add_subparsers(dest="command", required=True)

    p_convert = commands.add_parser("convert", help="write a canonical directory")
    p_convert.add_argument("in_dir", help="directory holding the ind.<name>.* files")
    p_convert.add_argument("name", choices=sorted(EXPECTED_STATS),
                           help="dataset name (file prefix)")
    p_convert.add_argument("out_dir")
    p_convert.add_argument("--row-normalize", action="store_true",
                           help="L1-normalize each node's feature row (off by default)")

    p_verify = commands.add_parser("verify",
                                   help="check a canonical directory against the "
                                        "published statistics")
    p_verify.add_argument("out_dir")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "convert":
        try:
            stats = convert(args.in_dir, args.name, args.out_dir,
                            row_normalize=args.row_normalize)
        except ConversionError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        print(" ".join(f"{k}={v}" for k, v in stats.items()))
        return 0
    lines, ok = verify(args.out_dir)
    for line in lines:
        print(line)
    return 0 if ok else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
