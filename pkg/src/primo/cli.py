"""Command-line entry point.

Subcommands mirror the pipeline stages: ``generate-data``, ``train``,
``analyze``, ``bias``, ``run-all``, and ``report``. Stage commands operate on
a run directory and can be re-run independently; ``run-all`` chains them and
aggregates results. Config values come from a JSON file; ``--set a.b=v``
overrides individual fields and ``--seed`` appends seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .autodiff import ContractError
from .data import SchemaError
from .experiment import (
    ConfigError,
    StageError,
    load_config,
    run_experiment,
    stage_analyze,
    stage_bias,
    stage_data,
    stage_train,
    write_results_table,
    write_summary,
    _run_stage,
    _seed_dir,
)
from .report import emit_report


def _add_common(p):
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, action="append", default=[],
                   help="append a seed to the config's seed list (repeatable)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY.PATH=VALUE", help="override a config field")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="primo",
        description="Latent-variable prediction under missing modalities",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("generate-data", "write per-seed datasets and splits"),
        ("train", "train the model and baselines for each seed"),
        ("analyze", "evaluate, and emit records/ECDFs/cluster summaries"),
        ("bias", "run the disjoint-halves bias protocol"),
        ("run-all", "run every stage for every seed and aggregate"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)

    p = sub.add_parser("report", help="render report.md and figures from a run")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    return parser


_STAGE_FUNCS = {
    "generate-data": ("data", stage_data),
    "train": ("train", stage_train),
    "analyze": ("analyze", stage_analyze),
    "bias": ("bias", stage_bias),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            out = emit_report(args.out, figures=not args.no_figures)
            print(out)
            return 0
        cfg = load_config(args.config, overrides=args.overrides, extra_seeds=args.seed)
        run_dir = Path(args.out)
        if args.command == "run-all":
            run_experiment(cfg, run_dir)
            print(run_dir)
            return 0
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(
            json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
        stage_name, fn = _STAGE_FUNCS[args.command]
        for seed in cfg.seeds:
            seed_dir = _seed_dir(run_dir, seed)
            _run_stage(stage_name, seed_dir, fn, cfg, seed, seed_dir)
        if args.command == "analyze":
            write_results_table(cfg, run_dir)
        write_summary(cfg, run_dir)
        print(run_dir)
        return 0
    except (ConfigError, SchemaError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
