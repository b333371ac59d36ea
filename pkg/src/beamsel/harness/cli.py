"""Command-line interface.

Subcommands: gen, train, betasearch, eval, report.  Exit code 0 on success;
failures print a machine-readable JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .config import ConfigError, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamsel",
        description="Synthetic V2I beam-selection experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment TOML")
        p.add_argument("--out", required=True, help="run output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override seeds.master")

    p_gen = sub.add_parser("gen", help="generate the dataset splits")
    common(p_gen)

    p_train = sub.add_parser("train", help="build the KB and train the models")
    common(p_train)
    p_train.add_argument("--baseline2", action="store_true",
                         help="also train the GPS-in-classifier-head variant")

    p_beta = sub.add_parser("betasearch", help="calibrate fusion weights per scenario")
    common(p_beta)

    p_eval = sub.add_parser("eval", help="evaluate one corruption scenario")
    common(p_eval)
    p_eval.add_argument("--scenario", required=True)
    p_eval.add_argument("--baseline2", action="store_true")

    p_report = sub.add_parser("report", help="consolidate scenario reports to CSV")
    p_report.add_argument("run_dirs", nargs="+")
    p_report.add_argument("--out", required=True, help="merged CSV path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            rows = pipeline.run_report(args.run_dirs, args.out)
            print(f"wrote {rows} rows to {args.out}")
            return 0
        cfg = load_config(args.config, seed_override=args.seed)
        if args.command == "gen":
            info = pipeline.run_gen(cfg, args.out)
            print(f"generated {info['counts']} in {info['seconds']:.1f}s")
        elif args.command == "train":
            info = pipeline.run_train(cfg, args.out, baseline2=args.baseline2)
            parts = [f"{k}={v:.4f}" for k, v in info.items() if k.endswith("_top1")]
            print(f"trained ({', '.join(parts)}) in {info['seconds']:.1f}s")
        elif args.command == "betasearch":
            info = pipeline.run_betasearch(cfg, args.out)
            print(f"betas: {json.dumps(info['betas'], sort_keys=True)}")
        elif args.command == "eval":
            report = pipeline.run_eval(cfg, args.out, args.scenario,
                                       baseline2=args.baseline2)
            top1 = {m: report["methods"][m]["topk"]["1"] for m in report["methods"]}
            print(f"{args.scenario}: top1 {json.dumps(top1, sort_keys=True)}")
        return 0
    except (ConfigError, pipeline.PipelineError, OSError, ValueError, RuntimeError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
