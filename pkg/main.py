import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from core.clients import build_clients, export_dataset_csv
from core.errors import FedExchangeError
from core.harness import ablation_T, compare_strategies, comparison_table, local_model_matrix, run_experiment, \
    write_comparison
from core.results import load_summaries
from core.settings import build_experiment_config, load_settings

logger = logging.getLogger("fedexchange")


def _load_config(args, **overrides):
    overrides.setdefault("output_dir", getattr(args, "out", None))
    overrides.setdefault("workers", getattr(args, "workers", None))
    return build_experiment_config(load_settings(args.config, overrides))


def _seed_override(args):
    return [args.seed] if args.seed is not None else None


def cmd_run(args):
    cfg = _load_config(
        args,
        seeds=_seed_override(args),
        strategies=[args.strategy] if args.strategy else None,
        agg_frequencies=[args.agg_frequency] if args.agg_frequency else None,
        rounds=args.rounds,
        data_fractions=[args.data_fraction] if args.data_fraction else None,
    )
    _, comparison = run_experiment(cfg, report=args.report)
    print(comparison_table(comparison), end="")


def cmd_compare(args):
    summaries = load_summaries(args.input)
    comparison = compare_strategies(summaries)
    write_comparison(comparison, args.input, args.report)
    print(comparison_table(comparison), end="")


def cmd_ablate_t(args):
    t_values = [int(t) for t in args.t_values.split(",") if t.strip()]
    cfg = _load_config(args, seeds=_seed_override(args))
    comparison = ablation_T(cfg, t_values, report=args.report)
    print(comparison_table(comparison), end="")


def cmd_local_matrix(args):
    cfg = _load_config(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    local_model_matrix(cfg, seed)
    with open(os.path.join(cfg.output_dir, "local_matrix.txt"), "r", encoding="utf-8") as f:
        print(f.read(), end="")


def cmd_export_data(args):
    cfg = _load_config(args, output_dir=None)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    fraction = args.data_fraction or cfg.data_fractions[0]
    _, clients = build_clients(cfg, seed, fraction)
    export_dataset_csv(clients, args.out)


def build_parser():
    parser = argparse.ArgumentParser(prog="fedexchange",
                                     description="Deterministic simulator for federated decoder exchange.")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: $FEDEX_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every (strategy, T, fraction, seed) cell and compare")
    run.add_argument("--config", default=None, help="JSON settings file (default: experiment.json if present)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--strategy", default=None)
    run.add_argument("--agg-frequency", type=int, default=None)
    run.add_argument("--rounds", type=int, default=None)
    run.add_argument("--data-fraction", type=float, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--report", choices=["md", "pdf"], default=None)
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="rebuild the comparison table from summary.json files")
    compare.add_argument("--in", dest="input", required=True, help="results directory to scan")
    compare.add_argument("--report", choices=["md", "pdf"], default=None)
    compare.set_defaults(func=cmd_compare)

    ablate = sub.add_parser("ablate-t", help="clustered strategy over several aggregation frequencies")
    ablate.add_argument("--config", default=None)
    ablate.add_argument("--t-values", default="2,5,10")
    ablate.add_argument("--seed", type=int, default=None)
    ablate.add_argument("--out", default=None)
    ablate.add_argument("--workers", type=int, default=None)
    ablate.add_argument("--report", choices=["md", "pdf"], default=None)
    ablate.set_defaults(func=cmd_ablate_t)

    matrix = sub.add_parser("local-matrix", help="local-only decoders evaluated on every domain")
    matrix.add_argument("--config", default=None)
    matrix.add_argument("--seed", type=int, default=None)
    matrix.add_argument("--out", default=None)
    matrix.set_defaults(func=cmd_local_matrix)

    export = sub.add_parser("export-data", help="write the generated domain datasets to CSV")
    export.add_argument("--config", default=None)
    export.add_argument("--seed", type=int, default=None)
    export.add_argument("--data-fraction", type=float, default=None)
    export.add_argument("--out", required=True, help="CSV file to write")
    export.set_defaults(func=cmd_export_data)
    return parser


def main(argv=None):
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv("FEDEX_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (FedExchangeError, OSError) as e:
        logger.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
