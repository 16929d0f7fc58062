"""Command line entry point: ``chaosadapt <subcommand> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .chaos import build_index_set, multi_index_label
from .pipeline import ConfigError, Pipeline, PipelineConfig, StageError

SUBCOMMANDS = {
    "index-set": "write the graded multi-index set J_p for dimension d",
    "kl": "Karhunen-Loeve decomposition of the log-transmissivity field",
    "ensemble": "Monte-Carlo ensemble of pressure solves (cached)",
    "fit": "projection estimate of the chaos coefficients (cached)",
    "adapt": "adaptation isometries for the configured schemes",
    "project": "adapted coefficients on the retained index sets",
    "kernel": "eigenpairs of the covariance kernel of eta_1",
    "pdf": "density estimates and distances at the probe points",
    "geometric": "closed-form benchmark with geometric coefficients",
    "run": "the configured experiment end to end",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chaosadapt", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="maximum worker threads")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in SUBCOMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        if name == "index-set":
            sp.add_argument("--d", type=int, default=20, help="number of variables")
            sp.add_argument("--p", type=int, default=3, help="maximum total order")
        if name in ("adapt", "project", "kernel"):
            sp.add_argument("--scheme", choices=("gaussian", "quadratic"), action="append")
    return parser


def load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {
        k: v
        for k, v in (("seed", args.seed), ("threads", args.threads), ("out", args.out))
        if v is not None
    }
    if "out" in overrides:
        overrides["out"] = str(overrides["out"])
    if getattr(args, "scheme", None):
        overrides["schemes"] = list(dict.fromkeys(args.scheme))
    if args.command == "geometric":
        overrides["experiment"] = "geometric"
    return dataclasses.replace(config, **overrides).validate()


def _index_set(args, config: PipelineConfig) -> dict:
    iset = build_index_set(args.d, args.p)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"index_set_d{args.d}_p{args.p}.csv"
    with open(path, "w") as fh:
        fh.write("position,order,multi_index\n")
        for k, alpha in enumerate(iset.indices):
            fh.write(f"{k},{int(alpha.sum())},{multi_index_label(alpha)}\n")
    return {"d": args.d, "p": args.p, "size": len(iset), "file": str(path)}


def dispatch(args, config: PipelineConfig) -> dict:
    if args.command == "index-set":
        return _index_set(args, config)
    pipe = Pipeline(config)
    cmd = args.command
    if cmd == "kl":
        kl = pipe.kl()
        summary = {"n_modes": kl.n_modes, "energy_fraction": kl.energy_fraction}
    elif cmd == "ensemble":
        summary = {"n_samples": pipe.ensemble().n_samples}
    elif cmd == "fit":
        e = pipe.expansion()
        summary = {"d": e.d, "p": e.p, "terms": len(e.index_set)}
    elif cmd == "adapt":
        summary = {s: pipe.isometry(s).n for s in config.schemes}
    elif cmd == "project":
        summary = {s: len(pipe.adapted(s).retained) for s in config.schemes}
    elif cmd == "kernel":
        summary = {s: {"rank": pipe.kernel(s).rank(), "hs_norm": pipe.kernel(s).hs_norm} for s in config.schemes}
    elif cmd == "pdf":
        rows = pipe.random_coeffs()[1] if config.experiment == "random-coeffs" else pipe.pdfs()
        summary = {"max_l1": {v: max(r["l1"] for r in rows if r["variant"] == v) for v in {r["variant"] for r in rows}}}
    elif cmd == "geometric":
        summary = {"cases": len(pipe.geometric())}
    else:
        pipe.run()
        summary = {"experiment": config.experiment}
    manifest = pipe.write_manifest()
    summary["files"] = sorted(manifest["files"])
    return summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
        summary = dispatch(args, config)
    except (ConfigError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
