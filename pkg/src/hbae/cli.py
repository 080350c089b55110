"""Command-line entry point: ``hbae <verb> [options]``.

Verbs run one pipeline stage each (``run`` runs them all in order). Global
options may appear before or after the verb. Exit status: 0 success,
2 invalid config or usage, 3 stage ordering / output conflict, 4 a
computation failed (model failures, sampler initialization, error budget).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .bae import BudgetExhaustedError
from .config import ConfigError, load_config
from .forward.base import ModelFailure
from .pipeline import STAGES, Pipeline, StageError
from .posterior import PredictiveFailureError
from .sampler import InitializationError

__all__ = ["main", "build_parser"]

DEFAULT_OUTPUT = "bae-output"
EXIT_CONFIG, EXIT_STAGE, EXIT_COMPUTE = 2, 3, 4

log = logging.getLogger("hbae")


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _global_options(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=default(None), help="TOML config file (defaults only if omitted)")
    parser.add_argument("--output", default=default(None), help=f"output directory (default: config 'output' or ./{DEFAULT_OUTPUT})")
    parser.add_argument("--seed", type=_u64, default=default(None), help="root seed, overrides the config")
    parser.add_argument("--workers", type=_positive, default=default(None), help="worker processes for model runs")
    parser.add_argument("--profile", choices=("desk", "paper"), default=default("desk"), help="slice problem size")
    parser.add_argument("-v", "--verbose", action="count", default=default(0), help="more logging (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbae", description="Hierarchical Bayesian inversion with approximation-error correction.")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")
    helps = {
        "synthesize": "simulate synthetic observations on the fine model",
        "naive": "sample the naive posterior (coarse model, noise-only likelihood)",
        "errors": "estimate approximation-error statistics",
        "bae": "sample the corrected posterior",
        "predict": "posterior predictive quantiles",
        "oracle": "closed-form posteriors for polynomial models",
        "report": "summary JSON and plot-ready CSVs",
        "run": "all stages in order",
    }
    for verb in (*STAGES, "run"):
        p = sub.add_parser(verb, help=helps[verb], description=helps[verb])
        _global_options(p, suppress=True)
        if verb == "predict":
            p.add_argument("which", nargs="?", choices=("naive", "bae"), help="chain to use (default: every completed chain)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, profile=args.profile, seed=args.seed, workers=args.workers)
        output = args.output or cfg.get("output") or DEFAULT_OUTPUT
        pipe = Pipeline(cfg, output, profile=args.profile)
        if args.verb == "run":
            pipe.run_all()
        elif args.verb == "predict":
            pipe.run("predict", which=args.which)
        else:
            pipe.run(args.verb)
    except ConfigError as exc:
        print(f"hbae: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"hbae: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ModelFailure, InitializationError, BudgetExhaustedError, PredictiveFailureError) as exc:
        print(f"hbae: {args.verb} failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    print(f"{args.verb}: done ({output})")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
