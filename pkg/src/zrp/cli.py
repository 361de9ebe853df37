"""Command line: ``zrp run|homogenize|suite|report``.

Exit status is 0 iff every asserted criterion passes, 1 when a criterion
fails or the run aborts, 2 for usage and configuration errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError, ZRPError
from .harness import ExperimentConfig, load_config, run_experiment
from .report import digest_text, emit_report, recompute_matches

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes for trials (default 1)")
    p.add_argument("--out", default=None, help="output directory (default: config 'output' or ./zrp-out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zrp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiment described by a config file")
    p.add_argument("config")
    _common(p)
    p = sub.add_parser("homogenize", help="effective matrix with a seed-stability table")
    p.add_argument("config")
    _common(p)
    p = sub.add_parser("suite", help="run the module property audits")
    p.add_argument("config", nargs="?", default=None, help="optional property_suite config")
    _common(p)
    p = sub.add_parser("report", help="recompute verdicts of an emitted report from its rows")
    p.add_argument("dir")
    return parser


def _default_suite() -> dict:
    text = resources.files("zrp").joinpath("schema/property_suite.json").read_text()
    return json.loads(text)


def _execute(cfg: ExperimentConfig, args) -> int:
    cfg = cfg.with_overrides(seed=args.seed)
    out = Path(args.out or cfg.output or "zrp-out")
    report = run_experiment(cfg, workers=max(1, args.workers))
    emit_report(report, out)
    sys.stdout.write(digest_text(report))
    sys.stdout.write(f"report written to {out}\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            report, agree = recompute_matches(args.dir)
            sys.stdout.write(digest_text(report))
            if not agree:
                sys.stdout.write("stored verdicts disagree with verdicts recomputed from rows.csv\n")
                return EXIT_FAIL
            return EXIT_OK if report.passed else EXIT_FAIL
        if args.command == "suite":
            cfg = load_config(args.config) if args.config else ExperimentConfig.from_dict(_default_suite())
            if cfg.kind != "property_suite":
                raise ConfigurationError(f"'zrp suite' needs a property_suite config, got {cfg.kind}")
            return _execute(cfg, args)
        cfg = load_config(args.config)
        if args.command == "homogenize" and cfg.kind != "homogenize":
            raise ConfigurationError(f"'zrp homogenize' needs a homogenize config, got {cfg.kind}")
        return _execute(cfg, args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"zrp: {exc}\n")
        return EXIT_USAGE
    except (ValueError, ZRPError) as exc:
        sys.stderr.write(f"zrp: {exc}\n")
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_FAIL
    except OSError as exc:
        sys.stderr.write(f"zrp: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
