"""Command-line entry point: ``unlearn run | gen-corpus | ablate-kappa | scale``."""

from __future__ import annotations

import argparse
import logging
import sys

from .corpus import write_parallel_corpus, generate_synthetic_corpus
from .errors import ConfigError, LingTeaError
from .harness import METHODS, load_spec, parse_spec, run_experiment


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    if getattr(args, "method", None):
        out["experiment.method"] = args.method
    if args.seed:
        out["experiment.seeds"] = ",".join(str(s) for s in args.seed)
    if args.out:
        out["experiment.out"] = args.out
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment INI file")
    p.add_argument("--seed", type=int, nargs="+", help="seeds (overrides the config)")
    p.add_argument("--out", help="output root (overrides the config)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value; may repeat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unlearn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one method over several seeds")
    _add_common(run)
    run.add_argument("--method", choices=METHODS)

    gen = sub.add_parser("gen-corpus", help="write a synthetic parallel corpus to disk")
    gen.add_argument("--spec", required=True, help="INI file whose [corpus] section holds generator fields")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    abl = sub.add_parser("ablate-kappa", help="adaptive kappa against fixed values")
    _add_common(abl)
    abl.add_argument("--kappas", type=float, nargs="+")

    scale = sub.add_parser("scale", help="batch and sequential unlearning at growing forget sizes")
    _add_common(scale)
    scale.add_argument("--multipliers", type=int, nargs="+")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-corpus":
            with open(args.spec, encoding="utf-8") as fh:
                text = fh.read()
            spec = parse_spec(text)
            corpus = generate_synthetic_corpus(spec.synth, seed=args.seed)
            path = write_parallel_corpus(corpus, args.out)
            print(f"wrote {path}")
            return 0
        overrides = _overrides(args)
        if args.command == "ablate-kappa":
            overrides["experiment.recipe"] = "kappa_ablation"
            if args.kappas:
                overrides["kappa_ablation.kappas"] = ",".join(str(k) for k in args.kappas)
        elif args.command == "scale":
            overrides["experiment.recipe"] = "scaling"
            if args.multipliers:
                overrides["scaling.multipliers"] = ",".join(str(m) for m in args.multipliers)
        spec = load_spec(args.config, overrides)
        run_experiment(spec)
        print(f"wrote {spec.directory / 'summary.csv'}")
        return 0
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except LingTeaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
