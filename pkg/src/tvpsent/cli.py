"""Command-line entry point.

Usage::

    tvpsent all --config run.toml --out runs/demo
    tvpsent estimate --config run.toml --seed 7

Exit codes: 0 success, 1 invalid config or input file, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, normalize, validate_config
from .ingestion import IngestError
from .pipeline import STAGES, Pipeline, StageError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
COMMANDS = STAGES + ("simulate", "all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvpsent", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        p.add_argument("--config", default=None, help="TOML run configuration (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="root seed, overrides the config")
        p.add_argument("--out", default=None, help="output directory, overrides output.dir")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def load_config(path, seed=None, out=None):
    cfg = validate_config(path)
    if seed is not None or out is not None:
        raw = dict(cfg.values)
        if seed is not None:
            raw["seed"] = seed
        if out is not None:
            raw["output.dir"] = out
        cfg = normalize(raw)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        pipe = Pipeline(cfg)
        if args.command == "all":
            pipe.run_all()
        else:
            pipe.run(args.command)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IngestError as exc:
        where = f"stage {exc.stage!r}: " if getattr(exc, "stage", None) else ""
        print(f"error: {where}invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.command}: ok ({pipe.out})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
