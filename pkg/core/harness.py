"""Experiment runner: cells over (strategy, T, fraction, seed), comparisons, ablations."""
import datetime
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from core import exporter
from core.clients import build_clients, evaluate, local_train
from core.clustering import dump_clustering_debug
from core.errors import ConfigInvalid, ConfigMismatch, EmptyInput, MismatchedSeeds
from core.metrics import Decision
from core.results import ABLATION_DIR, select_summaries
from core.seeding import SeedPurpose, derive_seed
from core.server import Strategy, initial_decoder, run_simulation
from core.settings import config_fingerprint

logger = logging.getLogger(__name__)

COMPARISON_HEADERS = ["rank", "strategy", "T", "fraction", "seeds",
                      "avg_loss", "worst_loss", "std_loss", "avg_accuracy", "worst_accuracy"]


def cell_dir(out_dir, strategy, T, fraction, seed):
    return os.path.join(out_dir, strategy, f"T{T}", f"frac{fraction:g}", f"seed{seed}")


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _final_block(metrics, domain_ids):
    block = {
        "avg_loss": metrics.avg_loss,
        "std_loss": metrics.std_loss,
        "worst_loss": metrics.worst_loss,
        "worst_domain": metrics.worst_domain,
        "per_domain_loss": dict(zip(domain_ids, metrics.losses)),
    }
    if metrics.accuracies is not None:
        block.update({
            "avg_accuracy": metrics.avg_accuracy,
            "std_accuracy": metrics.std_accuracy,
            "worst_accuracy": metrics.worst_accuracy,
            "per_domain_accuracy": dict(zip(domain_ids, metrics.accuracies)),
        })
    return block


def run_cell(cfg, strategy, T, fraction, seed, out_dir, workers=1):
    """One simulation, written to its own directory. Returns the summary dict."""
    started = _now()
    server_cfg = cfg.server_for(strategy, seed, T)
    path = cell_dir(out_dir, strategy, T, fraction, seed)
    logger.info("cell %s/T%d/frac%g/seed%d: starting", strategy, T, fraction, seed)

    backbone, clients = build_clients(cfg, seed, fraction)
    backbone_fingerprint = backbone.fingerprint()
    debug_path = os.path.join(path, "clustering_debug.log") if cfg.debug_clustering else None
    if debug_path and os.path.exists(debug_path):
        os.remove(debug_path)
    hook = None
    if debug_path:
        def hook(dm, assignment, r):
            dump_clustering_debug(dm, assignment, debug_path, r)
    result = run_simulation(server_cfg, clients, workers=workers, cluster_hook=hook)

    domain_ids = [c.domain.domain_id for c in clients]
    records = result.warmup_trace + result.trace
    exporter.write_metrics_csv(os.path.join(path, "metrics.csv"), records, len(clients), cfg.task)
    exporter.write_json(os.path.join(path, "trace.json"), [r.snapshot() for r in records])

    summary = {
        "strategy": strategy,
        "seed": seed,
        "data_fraction": fraction,
        "aggregation_frequency": T,
        "effective_frequency": server_cfg.effective_frequency,
        "rounds": server_cfg.rounds,
        "warmup_rounds": server_cfg.warmup_rounds,
        "task": cfg.task.value,
        "config_fingerprint": config_fingerprint(cfg),
        "backbone_fingerprint": backbone_fingerprint,
        "train_sizes": {c.domain.domain_id: c.n_train for c in clients},
        "aggregate_rounds": sum(1 for r in result.trace if r.decision == Decision.AGGREGATE),
        "exchange_rounds": sum(1 for r in result.trace if r.decision == Decision.EXCHANGE),
        "final": _final_block(result.trace[-1].metrics, domain_ids),
        "metadata": {"started_at": started, "finished_at": _now()},
    }
    exporter.write_json(os.path.join(path, "summary.json"), summary)
    logger.info("cell %s/T%d/frac%g/seed%d: final avg loss %.6f, worst %.6f (%s)", strategy, T, fraction, seed,
                summary["final"]["avg_loss"], summary["final"]["worst_loss"], summary["final"]["worst_domain"])
    return summary


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(cfg, out_dir=None, report=None):
    """Run every cell, then compare them. Returns (summaries, comparison)."""
    out_dir = out_dir or cfg.output_dir
    cells = list(itertools.product(cfg.strategies, cfg.agg_frequencies, cfg.data_fractions, cfg.seeds))
    logger.info("running %d cells into %s", len(cells), out_dir)

    if cfg.workers > 1 and len(cells) > 1:
        jobs = [(cfg, s, T, f, seed, out_dir, 1) for s, T, f, seed in cells]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            summaries = list(pool.map(_run_cell_args, jobs))
    else:
        summaries = [run_cell(cfg, s, T, f, seed, out_dir, cfg.workers) for s, T, f, seed in cells]

    comparison = compare_strategies(summaries)
    write_comparison(comparison, out_dir, report)
    return summaries, comparison


def _group_key(summary):
    return summary["strategy"], int(summary["aggregation_frequency"]), float(summary["data_fraction"])


def _mean(summaries, key):
    values = [s["final"].get(key) for s in summaries]
    if any(v is None for v in values):
        return None
    return float(np.mean(values))


def compare_strategies(summaries):
    """Mean-over-seeds final metrics per (strategy, T, fraction), ranked by average loss."""
    summaries = list(summaries)
    if not summaries:
        raise EmptyInput("no run summaries to compare")
    fingerprints = {s["config_fingerprint"] for s in summaries}
    if len(fingerprints) > 1:
        raise ConfigMismatch(f"summaries come from {len(fingerprints)} different configurations")

    groups = {}
    for s in summaries:
        groups.setdefault(_group_key(s), []).append(s)
    seed_sets = {key: sorted(int(s["seed"]) for s in group) for key, group in groups.items()}
    for key, seeds in seed_sets.items():
        if len(set(seeds)) != len(seeds):
            raise MismatchedSeeds(f"{key[0]} (T={key[1]}, fraction={key[2]}) has duplicate seeds {seeds}")
    reference = next(iter(seed_sets.values()))
    for key, seeds in seed_sets.items():
        if seeds != reference:
            raise MismatchedSeeds(f"{key[0]} (T={key[1]}, fraction={key[2]}) ran seeds {seeds}, "
                                  f"others ran {reference}")

    rows = []
    for (strategy, T, fraction), group in sorted(groups.items()):
        rows.append({
            "strategy": strategy,
            "T": T,
            "fraction": fraction,
            "seeds": len(group),
            "avg_loss": _mean(group, "avg_loss"),
            "worst_loss": _mean(group, "worst_loss"),
            "std_loss": _mean(group, "std_loss"),
            "avg_accuracy": _mean(group, "avg_accuracy"),
            "worst_accuracy": _mean(group, "worst_accuracy"),
        })
    rows.sort(key=lambda r: r["avg_loss"])
    # competition ranking: equal values share a rank
    for position, row in enumerate(rows):
        if position > 0 and row["avg_loss"] == rows[position - 1]["avg_loss"]:
            row["rank"] = rows[position - 1]["rank"]
        else:
            row["rank"] = position + 1
    return {"config_fingerprint": fingerprints.pop(), "seeds": reference, "rows": rows}


def comparison_table(comparison):
    rows = [[row[h] for h in COMPARISON_HEADERS] for row in comparison["rows"]]
    return exporter.format_table(COMPARISON_HEADERS, rows)


def write_comparison(comparison, out_dir, report=None):
    exporter.write_json(os.path.join(out_dir, "comparison.json"), comparison)
    exporter.write_text(os.path.join(out_dir, "comparison.txt"), comparison_table(comparison))
    if report:
        rows = [[row[h] for h in COMPARISON_HEADERS] for row in comparison["rows"]]
        notes = [f"seeds: {comparison['seeds']}", f"config: {comparison['config_fingerprint'][:12]}"]
        if report == "md":
            exporter.create_markdown("Strategy comparison", COMPARISON_HEADERS, rows,
                                     os.path.join(out_dir, "comparison.md"), notes)
        elif report == "pdf":
            exporter.create_pdf("Strategy comparison", COMPARISON_HEADERS, rows,
                                os.path.join(out_dir, "comparison.pdf"), notes)
        else:
            raise ConfigInvalid(f"unknown report format {report!r}; choose md or pdf")
    for row in comparison["rows"]:
        logger.info("rank %d: %s T=%d fraction=%g avg loss %.6f worst %.6f", row["rank"], row["strategy"],
                    row["T"], row["fraction"], row["avg_loss"], row["worst_loss"])
    return comparison


def ablation_T(cfg, t_values, out_dir=None, report=None):
    """Clustered strategy once per T and seed. Returns the comparison over T."""
    t_values = [int(T) for T in t_values]
    bad = [T for T in t_values if T < 1 or cfg.server.rounds % T != 0]
    if bad:
        raise ConfigInvalid(f"rounds ({cfg.server.rounds}) is not divisible by T values {bad}")
    ablation_cfg = replace(cfg, strategies=(Strategy.CLUSTERED.value,), agg_frequencies=tuple(t_values))
    out_dir = os.path.join(out_dir or cfg.output_dir, ABLATION_DIR)
    _, comparison = run_experiment(ablation_cfg, out_dir, report)
    return comparison


def count_paired_wins(summaries, a, b, metric="worst_loss"):
    """Seeds on which cell selection a scores <= selection b on a final loss metric.

    a and b are dicts of summary fields, e.g. {"strategy": "clustered", "data_fraction": 0.5}.
    Returns (wins, paired_seeds).
    """
    def pick(criteria):
        chosen = select_summaries(summaries, criteria)
        seeds = [int(s["seed"]) for s in chosen]
        if len(set(seeds)) != len(seeds):
            raise MismatchedSeeds(f"{criteria} matches seeds {sorted(seeds)} more than once")
        return {int(s["seed"]): s["final"][metric] for s in chosen}

    left, right = pick(a), pick(b)
    paired = sorted(set(left) & set(right))
    if not paired:
        raise MismatchedSeeds(f"no seed ran both {a} and {b}")
    wins = sum(1 for seed in paired if left[seed] <= right[seed])
    return wins, len(paired)


def local_model_matrix(cfg, seed, out_dir=None):
    """Local-only decoders evaluated on every domain, next to the clustered global decoder."""
    fraction = cfg.data_fractions[0]
    _, clients = build_clients(cfg, seed, fraction)
    server_cfg = cfg.server_for(Strategy.CLUSTERED, seed, cfg.agg_frequencies[0])
    decoder = initial_decoder(clients[0].manifest, seed)
    domain_ids = [c.domain.domain_id for c in clients]

    rows = []
    total = server_cfg.warmup_rounds + server_cfg.rounds
    for c in clients:
        local = decoder
        for t in range(1, total + 1):
            purpose = SeedPurpose.WARMUP if t <= server_cfg.warmup_rounds else SeedPurpose.LOCAL
            r = t if t <= server_cfg.warmup_rounds else t - server_cfg.warmup_rounds
            local = local_train(local, c, derive_seed(seed, purpose, r, c.index))
        rows.append([f"local {c.domain.domain_id}"] + [evaluate(local, other).loss for other in clients])

    strongest = ["strongest"] + [min(row[j + 1] for row in rows) for j in range(len(clients))]
    result = run_simulation(server_cfg, clients, workers=cfg.workers)
    global_decoder = result.final_decoders[0]
    global_row = ["clustered global"] + [evaluate(global_decoder, c).loss for c in clients]
    rows += [strongest, global_row]

    headers = ["model"] + domain_ids
    matrix = {"seed": seed, "data_fraction": fraction, "domains": domain_ids,
              "rows": [{"model": row[0], "losses": dict(zip(domain_ids, row[1:]))} for row in rows]}
    out_dir = out_dir or cfg.output_dir
    exporter.write_json(os.path.join(out_dir, "local_matrix.json"), matrix)
    exporter.write_text(os.path.join(out_dir, "local_matrix.txt"), exporter.format_table(headers, rows))
    logger.info("wrote local model matrix for seed %d to %s", seed, out_dir)
    return matrix
