"""Command-line entry point: one subcommand per experiment kind, config
documents with flag overrides, and post-run plot emission."""

from __future__ import annotations

import argparse
import os
import sys

import yaml

from .harness import (
    ENV_OUTPUT_DIR,
    ENV_WORKERS,
    KINDS,
    ConfigError,
    ExperimentConfig,
    emit_plots,
    run,
)

_KIND_HELP = {
    "simulate": "ensemble of rescaled particle trajectories with observables",
    "hydro-compare": "trajectory ensemble against the macroscopic solver",
    "exact-checks": "enumerable-sector verification battery",
    "orlicz-audit": "Young-function construction and certificate battery",
    "multiscale-report": "window-average and telescope statistics",
    "pme-solve": "deterministic degenerate-diffusion solve",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zrplab",
        description="Simulation and verification laboratory for rescaled "
                    "zero-range dynamics and their degenerate-diffusion "
                    "limit.")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in KINDS:
        sp = sub.add_parser(kind, help=_KIND_HELP[kind])
        sp.add_argument("config", nargs="?", default=None,
                        help="YAML config document (defaults apply if omitted)")
        sp.add_argument("--check", action="store_true",
                        help="validate the config and exit")
        sp.add_argument("--no-plots", action="store_true",
                        help="skip SVG report plots")
        sp.add_argument("--output-dir", help="run directory")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--set", dest="assignments", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    return parser


def _collect_overrides(args) -> dict:
    """Precedence: flags > environment > config document > defaults. The
    environment supplies only the output-directory and worker-count knobs."""
    overrides = {}
    if os.environ.get(ENV_OUTPUT_DIR):
        overrides["output_dir"] = os.environ[ENV_OUTPUT_DIR]
    if os.environ.get(ENV_WORKERS):
        try:
            overrides["workers"] = int(os.environ[ENV_WORKERS])
        except ValueError:
            raise ConfigError([f"{ENV_WORKERS}: expected an integer, got "
                               f"{os.environ[ENV_WORKERS]!r}"])
    for assignment in args.assignments:
        key, sep, value = assignment.partition("=")
        if not sep or not key:
            raise ConfigError([f"--set needs KEY=VALUE, got {assignment!r}"])
        overrides[key] = yaml.safe_load(value)
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = _collect_overrides(args)
        config = ExperimentConfig.from_sources(args.kind, args.config,
                                               overrides)
    except ConfigError as exc:
        print(f"invalid config for '{args.kind}':", file=sys.stderr)
        for err in exc.errors:
            print(f"  - {err}", file=sys.stderr)
        return 2

    if args.check:
        print(f"config ok  kind={config.kind}  "
              f"hash={config.config_hash()[:12]}")
        return 0

    manifest = run(config)
    print(f"{config.kind}: wrote {manifest.output_dir}/summary.json "
          f"(config {manifest.config_hash[:12]}, "
          f"{manifest.wall_clock_s:.1f}s)")
    if manifest.partial:
        print("warning: event budget exhausted; results are partial",
              file=sys.stderr)
    if not args.no_plots:
        for path in emit_plots(manifest.output_dir):
            print(f"  plot {path}")
    if manifest.checks is not None:
        for name, ok in manifest.checks.items():
            print(f"  check {name}: {'pass' if ok else 'FAIL'}")
        if not manifest.all_checks_pass:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
