"""Directional checks on the default setup. Slow: set FEDEX_SLOW=1 to run them."""
import os
import sys
import tempfile
import unittest

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from benchmark_analysis import run_benchmark


@unittest.skipUnless(os.getenv("FEDEX_SLOW") == "1", "set FEDEX_SLOW=1 to run the directional benchmark")
class TestDirectionalFindings(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.report, cls.findings = run_benchmark(cls.tmp.name)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_report_written(self):
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, "findings.txt")))
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, "comparison.json")))
        self.assertEqual(set(self.findings), {"worst_domain", "strategy_ablation", "scarce_data", "t_insensitivity"})

    def test_worst_domain(self):
        self.assertTrue(self.findings["worst_domain"], self.report)

    def test_clustered_beats_random_exchange(self):
        self.assertTrue(self.findings["strategy_ablation"], self.report)

    def test_scarce_data(self):
        self.assertTrue(self.findings["scarce_data"], self.report)

    def test_aggregation_frequency(self):
        self.assertTrue(self.findings["t_insensitivity"], self.report)


if __name__ == '__main__':
    unittest.main()
