import copy
import json
import math
import os
import sys
import tempfile
import unittest
from unittest import mock

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.clients import Task
from core.errors import ConfigInvalid
from core.server import Strategy
from core.settings import DEFAULTS, build_experiment_config, config_fingerprint, load_settings


class TestLoadSettings(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        env = {k: v for k, v in os.environ.items() if not k.startswith("FEDEX_")}
        patcher = mock.patch.dict(os.environ, env, clear=True)
        patcher.start()
        self.addCleanup(patcher.stop)
        # keep a stray .env in the working directory out of these tests
        dotenv = mock.patch("core.settings.load_dotenv")
        dotenv.start()
        self.addCleanup(dotenv.stop)

    def write(self, data):
        path = os.path.join(self.tmp.name, "experiment.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write(data if isinstance(data, str) else json.dumps(data))
        return path

    def test_file_values_merge_over_defaults(self):
        path = self.write({"rounds": 10, "local": {"learning_rate": 0.01}})
        settings = load_settings(path)
        self.assertEqual(settings["rounds"], 10)
        self.assertEqual(settings["local"]["learning_rate"], 0.01)
        self.assertEqual(settings["local"]["batch_size"], DEFAULTS["local"]["batch_size"])
        self.assertEqual(DEFAULTS["local"]["learning_rate"], 0.05)

    def test_environment_then_overrides(self):
        path = self.write({"output_dir": "from_file", "workers": 2})
        with mock.patch.dict(os.environ, {"FEDEX_OUTPUT_DIR": "from_env", "FEDEX_WORKERS": "3"}):
            settings = load_settings(path)
            self.assertEqual((settings["output_dir"], settings["workers"]), ("from_env", 3))
            settings = load_settings(path, {"output_dir": "from_cli", "workers": None})
            self.assertEqual((settings["output_dir"], settings["workers"]), ("from_cli", 3))

    def test_bad_files(self):
        with self.assertRaises(ConfigInvalid):
            load_settings(self.write("{not json"))
        with self.assertRaises(ConfigInvalid):
            load_settings(self.write({"roundz": 3}))
        with self.assertRaises(ConfigInvalid):
            load_settings(os.path.join(self.tmp.name, "missing.json"))
        with mock.patch.dict(os.environ, {"FEDEX_WORKERS": "many"}):
            with self.assertRaises(ConfigInvalid):
                load_settings(self.write({}))


class TestBuildExperimentConfig(unittest.TestCase):
    def settings(self, **changes):
        settings = copy.deepcopy(DEFAULTS)
        settings.update(changes)
        return settings

    def test_defaults(self):
        cfg = build_experiment_config(self.settings())
        self.assertEqual(cfg.server.rounds, 40)
        self.assertEqual(cfg.server.warmup_rounds, 5)
        self.assertEqual(len(cfg.domains), 4)
        self.assertEqual(cfg.domains[-1].sample_count, 500)
        self.assertEqual(cfg.task, Task.REGRESSION)
        self.assertEqual(cfg.backbone.feature_dim, 32)

    def test_scalar_shift_has_its_magnitude(self):
        cfg = build_experiment_config(self.settings())
        last = cfg.domains[-1]
        self.assertEqual(len(last.shift), cfg.backbone.input_dim)
        self.assertAlmostEqual(math.sqrt(sum(s * s for s in last.shift)), 2.5, places=12)

    def test_vector_shift(self):
        domains = copy.deepcopy(DEFAULTS["domains"])
        domains[0]["shift"] = [0.1] * 16
        cfg = build_experiment_config(self.settings(domains=domains))
        self.assertEqual(cfg.domains[0].shift, tuple([0.1] * 16))
        domains[0]["shift"] = [0.1] * 3
        with self.assertRaises(ConfigInvalid):
            build_experiment_config(self.settings(domains=domains))

    def test_validation(self):
        bad = [
            {"strategies": ["gossip"]},
            {"seeds": []},
            {"seeds": [-1]},
            {"data_fractions": [0.0]},
            {"data_fractions": [1.5]},
            {"rounds": 100, "agg_frequencies": [2, 7]},
            {"domains": DEFAULTS["domains"][:1]},
            {"task": "ranking"},
            {"workers": 0},
            {"local": {"learning_rate": -1.0}},
            {"local": {"momentum": 0.9}},
        ]
        for changes in bad:
            with self.subTest(changes=changes):
                with self.assertRaises(ConfigInvalid):
                    build_experiment_config(self.settings(**changes))

    def test_server_for_cell(self):
        cfg = build_experiment_config(self.settings(agg_frequencies=[2, 5, 10]))
        server = cfg.server_for("random", 7, 5)
        self.assertEqual((server.strategy, server.master_seed, server.aggregation_frequency),
                         (Strategy.RANDOM, 7, 5))
        self.assertEqual(server.rounds, 40)

    def test_fingerprint_ignores_axes(self):
        base = build_experiment_config(self.settings())
        axes = build_experiment_config(self.settings(seeds=[5, 6], strategies=["random"], data_fractions=[0.5],
                                                     agg_frequencies=[5], output_dir="elsewhere"))
        changed = build_experiment_config(self.settings(rounds=20))
        self.assertEqual(config_fingerprint(base), config_fingerprint(axes))
        self.assertNotEqual(config_fingerprint(base), config_fingerprint(changed))


if __name__ == '__main__':
    unittest.main()
