import copy
import csv
import json
import os
import sys
import tempfile
import unittest

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import ConfigInvalid, ConfigMismatch, MismatchedSeeds
from core.harness import (
    ablation_T,
    cell_dir,
    compare_strategies,
    count_paired_wins,
    local_model_matrix,
    run_experiment,
)
from core.results import ResultsDB, load_summaries, select_summaries
from core.settings import DEFAULTS, build_experiment_config
from main import main

TINY = {
    "rounds": 4,
    "warmup_rounds": 1,
    "agg_frequencies": [2],
    "strategies": ["clustered", "fedavg_only"],
    "seeds": [0, 1, 2],
    "test_count": 40,
    "backbone": {"input_dim": 3, "feature_dim": 5},
    "local": {"local_epochs": 1.0, "batch_size": 16},
    "domains": [
        {"domain_id": "sunny", "sample_count": 100, "shift": 0.0, "concept_shift": 0.2, "noise_std": 0.05},
        {"domain_id": "rainy", "sample_count": 100, "shift": 1.0, "concept_shift": 0.2, "noise_std": 0.05},
        {"domain_id": "foggy", "sample_count": 100, "shift": -1.0, "concept_shift": 0.2, "noise_std": 0.05},
        {"domain_id": "night", "sample_count": 30, "shift": 2.0, "concept_shift": 0.5, "noise_std": 0.05},
    ],
}


def tiny_config(**changes):
    settings = copy.deepcopy(DEFAULTS)
    settings.update(copy.deepcopy(TINY))
    settings.update(changes)
    return build_experiment_config(settings)


def fake_summary(strategy, seed, avg, worst, fingerprint="f", T=2, fraction=1.0):
    return {"strategy": strategy, "seed": seed, "aggregation_frequency": T, "data_fraction": fraction,
            "config_fingerprint": fingerprint,
            "final": {"avg_loss": avg, "worst_loss": worst, "std_loss": 0.1}}


class TestRunExperiment(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.out = cls.tmp.name
        cls.cfg = tiny_config()
        cls.summaries, cls.comparison = run_experiment(cls.cfg, cls.out, report="md")

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_cell_outputs(self):
        self.assertEqual(len(self.summaries), 6)
        for strategy in ("clustered", "fedavg_only"):
            for seed in (0, 1, 2):
                path = cell_dir(self.out, strategy, 2, 1.0, seed)
                for name in ("metrics.csv", "summary.json", "trace.json"):
                    self.assertTrue(os.path.exists(os.path.join(path, name)), f"{path}/{name}")
        for name in ("comparison.json", "comparison.txt", "comparison.md"):
            self.assertTrue(os.path.exists(os.path.join(self.out, name)))
        self.assertEqual(len(self.comparison["rows"]), 2)
        self.assertEqual(self.comparison["seeds"], [0, 1, 2])

    def test_csv_has_one_row_per_round(self):
        path = os.path.join(cell_dir(self.out, "clustered", 2, 1.0, 0), "metrics.csv")
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), self.cfg.server.rounds + self.cfg.server.warmup_rounds)
        self.assertEqual([r["decision"] for r in rows], ["warmup", "exchange", "aggregate", "exchange", "aggregate"])
        self.assertEqual([r["global_eval"] for r in rows], ["1", "0", "1", "0", "1"])
        for row in rows:
            losses = [float(row[f"domain_{i}_loss"]) for i in range(4)]
            mean = sum(losses) / 4
            std = (sum((v - mean) ** 2 for v in losses) / 4) ** 0.5
            self.assertAlmostEqual(float(row["std_loss"]), std, delta=1e-9)
            self.assertEqual(float(row["worst_loss"]), max(losses))

    def test_rerun_is_byte_identical(self):
        with tempfile.TemporaryDirectory() as other:
            run_experiment(tiny_config(strategies=["clustered"], seeds=[1]), other)
            for name in ("metrics.csv", "trace.json"):
                with open(os.path.join(cell_dir(self.out, "clustered", 2, 1.0, 1), name), "rb") as f:
                    first = f.read()
                with open(os.path.join(cell_dir(other, "clustered", 2, 1.0, 1), name), "rb") as f:
                    second = f.read()
                self.assertEqual(first, second, name)

    def test_summary_contents(self):
        summary = next(s for s in self.summaries if s["strategy"] == "clustered" and s["seed"] == 0)
        self.assertEqual(summary["aggregate_rounds"], 2)
        self.assertEqual(summary["exchange_rounds"], 2)
        self.assertEqual(summary["train_sizes"], {"sunny": 100, "rainy": 100, "foggy": 100, "night": 30})
        self.assertIn("started_at", summary["metadata"])
        self.assertEqual(summary["final"]["worst_loss"], max(summary["final"]["per_domain_loss"].values()))

    def test_results_db_finds_every_summary(self):
        db = ResultsDB(self.out)
        self.assertEqual(len(db.load_data()), 6)
        self.assertEqual(len(select_summaries(db.load_data(), {"strategy": "fedavg_only"})), 3)
        rebuilt = compare_strategies(load_summaries(self.out))
        self.assertEqual(rebuilt["rows"], json.loads(json.dumps(self.comparison["rows"])))

    def test_paired_wins(self):
        wins, paired = count_paired_wins(self.summaries, {"strategy": "clustered"}, {"strategy": "clustered"})
        self.assertEqual((wins, paired), (3, 3))


class TestScarceData(unittest.TestCase):
    def test_fraction_is_recorded(self):
        with tempfile.TemporaryDirectory() as out:
            summaries, _ = run_experiment(tiny_config(strategies=["fedavg_only"], seeds=[0], data_fractions=[0.1]),
                                          out)
        self.assertEqual(summaries[0]["train_sizes"]["sunny"], 10)
        self.assertEqual(summaries[0]["train_sizes"]["night"], 3)


class TestCompareStrategies(unittest.TestCase):
    def test_identical_results_share_a_rank(self):
        summaries = [fake_summary(s, seed, 1.0, 2.0) for s in ("clustered", "random") for seed in (0, 1)]
        rows = compare_strategies(summaries)["rows"]
        self.assertEqual([r["rank"] for r in rows], [1, 1])

    def test_ranking_and_shape(self):
        summaries = []
        for seed in range(10):
            summaries.append(fake_summary("clustered", seed, 1.0 + seed * 0.01, 2.0))
            summaries.append(fake_summary("random", seed, 1.5, 2.5))
            summaries.append(fake_summary("round_robin", seed, 1.2, 2.2))
        comparison = compare_strategies(summaries)
        self.assertEqual([r["strategy"] for r in comparison["rows"]], ["clustered", "round_robin", "random"])
        self.assertEqual([r["rank"] for r in comparison["rows"]], [1, 2, 3])
        self.assertTrue(all(r["seeds"] == 10 for r in comparison["rows"]))
        self.assertAlmostEqual(comparison["rows"][0]["avg_loss"], 1.045, places=12)

    def test_guards(self):
        with self.assertRaises(MismatchedSeeds):
            compare_strategies([fake_summary("clustered", 0, 1, 1), fake_summary("random", 1, 1, 1)])
        with self.assertRaises(ConfigMismatch):
            compare_strategies([fake_summary("clustered", 0, 1, 1), fake_summary("random", 0, 1, 1, "g")])
        with self.assertRaises(MismatchedSeeds):
            count_paired_wins([fake_summary("clustered", 0, 1, 1)], {"strategy": "clustered"}, {"strategy": "random"})

    def test_duplicate_seeds_are_rejected(self):
        summaries = [fake_summary(s, 0, 1.0, 2.0) for s in ("clustered", "clustered", "random", "random")]
        with self.assertRaises(MismatchedSeeds):
            compare_strategies(summaries)
        with self.assertRaises(MismatchedSeeds):
            count_paired_wins(summaries, {"strategy": "clustered"}, {"strategy": "random"})


class TestAblation(unittest.TestCase):
    def test_indivisible_T(self):
        cfg = tiny_config(rounds=100, agg_frequencies=[2])
        with self.assertRaises(ConfigInvalid):
            ablation_T(cfg, [2, 5, 7])

    def test_one_run_per_T(self):
        cfg = tiny_config(seeds=[0])
        with tempfile.TemporaryDirectory() as out:
            comparison = ablation_T(cfg, [2, 4], out)
            with open(os.path.join(cell_dir(os.path.join(out, "ablation_T"), "clustered", 4, 1.0, 0),
                                   "summary.json"), encoding="utf-8") as f:
                summary = json.load(f)
        self.assertEqual(sorted(r["T"] for r in comparison["rows"]), [2, 4])
        self.assertEqual(summary["aggregate_rounds"], 1)


class TestLocalModelMatrix(unittest.TestCase):
    def test_rows(self):
        cfg = tiny_config()
        with tempfile.TemporaryDirectory() as out:
            matrix = local_model_matrix(cfg, 0, out)
            self.assertTrue(os.path.exists(os.path.join(out, "local_matrix.txt")))
        models = [row["model"] for row in matrix["rows"]]
        self.assertEqual(models, ["local sunny", "local rainy", "local foggy", "local night",
                                  "strongest", "clustered global"])
        strongest = matrix["rows"][4]["losses"]
        for domain in matrix["domains"]:
            self.assertEqual(strongest[domain], min(row["losses"][domain] for row in matrix["rows"][:4]))


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.config = os.path.join(self.tmp.name, "experiment.json")
        with open(self.config, "w", encoding="utf-8") as f:
            json.dump(TINY, f)

    def test_run_and_compare(self):
        out = os.path.join(self.tmp.name, "results")
        self.assertEqual(main(["run", "--config", self.config, "--out", out, "--seed", "0",
                               "--strategy", "round_robin"]), 0)
        self.assertTrue(os.path.exists(os.path.join(cell_dir(out, "round_robin", 2, 1.0, 0), "summary.json")))
        self.assertEqual(main(["compare", "--in", out]), 0)

    def test_compare_after_ablation_in_the_same_folder(self):
        out = os.path.join(self.tmp.name, "results")
        self.assertEqual(main(["run", "--config", self.config, "--out", out, "--seed", "0"]), 0)
        self.assertEqual(main(["ablate-t", "--config", self.config, "--t-values", "2,4", "--out", out]), 0)
        self.assertEqual(len(load_summaries(os.path.join(out, "ablation_T"))), 6)
        self.assertEqual(main(["compare", "--in", out]), 0)
        with open(os.path.join(out, "comparison.json"), encoding="utf-8") as f:
            comparison = json.load(f)
        self.assertEqual(comparison["seeds"], [0])
        self.assertEqual(sorted(row["strategy"] for row in comparison["rows"]), ["clustered", "fedavg_only"])
        self.assertTrue(all(row["T"] == 2 for row in comparison["rows"]))

    def test_errors_exit_nonzero(self):
        self.assertEqual(main(["ablate-t", "--config", self.config, "--t-values", "3",
                               "--out", self.tmp.name]), 1)
        self.assertEqual(main(["compare", "--in", os.path.join(self.tmp.name, "nowhere")]), 1)

    def test_export_data(self):
        path = os.path.join(self.tmp.name, "snapshot.csv")
        self.assertEqual(main(["export-data", "--config", self.config, "--seed", "0", "--out", path]), 0)
        with open(path, newline="", encoding="utf-8") as f:
            self.assertEqual(sum(1 for _ in f), 1 + 330 + 4 * 40)


if __name__ == '__main__':
    unittest.main()
