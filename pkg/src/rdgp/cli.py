"""Command-line entry point: ``rdgp <subcommand> [--config F] [--seed N] [--out DIR]``."""

import argparse
import json
import logging
import sys

import yaml

from .config import KINDS, config_from_dict
from .errors import ConfigError, RdgpError
from .experiments import run_experiment
from .report import emit_report

log = logging.getLogger("rdgp")

HELP = {
    "regress-synthetic": "benchmark-function regression sweep over N, depth and seeds",
    "regress-vectorfield": "vector-field regression from a lat,lon,u,v CSV",
    "bayesopt": "Bayesian optimisation with shallow and deep surrogates",
    "embed-regress": "regression on Euclidean inputs embedded in a sphere",
    "gradcheck": "compare ELBO gradients with finite differences",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rdgp", description="Residual deep GPs on hyperspheres.")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=HELP[kind])
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
        if kind == "regress-vectorfield":
            p.add_argument("--csv", help="lat,lon,u,v data file (overrides data.csv)")
    return parser


def make_config(args):
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from err
        except yaml.YAMLError as err:
            raise ConfigError(f"malformed config {args.config}: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a mapping")
    if raw.get("kind", args.kind) != args.kind:
        raise ConfigError(f"config is for {raw['kind']!r}, not {args.kind!r}")
    raw["kind"] = args.kind
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if getattr(args, "csv", None):
        raw.setdefault("data", {})
        if not isinstance(raw["data"], dict):
            raise ConfigError("data section must be a mapping")
        raw["data"]["csv"] = args.csv
    if args.kind == "regress-vectorfield":
        raw.setdefault("model", {}).setdefault("head", "vector")
    return config_from_dict(raw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = make_config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        results = run_experiment(cfg, progress=lambda r: log.info(json.dumps({k: v for k, v in r.items() if k != "elbo_trace"})))
        path = emit_report(results, cfg.out, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (RdgpError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(path)
    if cfg.kind == "gradcheck":
        print(f"max relative error {results['max_relative_error']:.3e} ({results['worst_parameter']})")
        return 0 if results["passed"] else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
