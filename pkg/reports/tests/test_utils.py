import math
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from reports.exceptions import EmptyInput, LogParseError
from reports.utils import (
    aggregate,
    comparison_table,
    learning_curve,
    read_training_log,
    result_row,
    results_frame,
    smooth,
    summary_table,
    write_learning_curve,
)
from simulation.env import EpisodeResult
from traces.exceptions import ParseError
from traces.utils import ScenarioConfig


def result(length, utilization=0.5, income=10.0):
    return EpisodeResult(
        scheduled_length=length, avg_cpu_utilization=utilization, income=income, steps=length
    )


def write_log(path, lengths, start=1):
    lines = ["epoch,mean_return,scheduled_length,loss"]
    lines += [f"{start + i},{v},{v},0.5" for i, v in enumerate(lengths)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class AggregateTests(SimpleTestCase):
    def test_single_result_has_no_std(self):
        summary = aggregate([result(42)], policy="best_fit", scenario="non-expansion/N=5/ws=0")
        self.assertEqual(summary.mean["scheduled_length"], 42.0)
        self.assertIsNone(summary.std)
        self.assertNotIn("std", summary.to_dict())

    def test_two_results(self):
        summary = aggregate([result(10), result(20)])
        self.assertEqual(summary.mean["scheduled_length"], 15.0)
        self.assertAlmostEqual(summary.std["scheduled_length"], math.sqrt(50), places=9)
        self.assertEqual(summary.n_seeds, 2)

    def test_identical_results_have_zero_std(self):
        summary = aggregate([result(7, 0.25, 3.5)] * 5)
        self.assertEqual(summary.std, {"scheduled_length": 0.0, "avg_cpu_utilization": 0.0, "income": 0.0})

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        results = [result(int(n), float(u), float(i)) for n, u, i in zip(
            rng.integers(1, 500, 12), rng.random(12), rng.random(12) * 100
        )]
        forward = aggregate(results)
        shuffled = aggregate([results[i] for i in rng.permutation(12)])
        for metric in forward.mean:
            self.assertAlmostEqual(forward.mean[metric], shuffled.mean[metric], places=9)
            self.assertAlmostEqual(forward.std[metric], shuffled.std[metric], places=9)

    def test_empty(self):
        with self.assertRaises(EmptyInput):
            aggregate([])


class SmoothTests(SimpleTestCase):
    def test_constant_series(self):
        self.assertEqual(smooth([3.0] * 25).tolist(), [3.0] * 25)

    def test_window_one_is_identity(self):
        values = [1.0, 5.0, 2.0, 8.0]
        self.assertEqual(smooth(values, window=1).tolist(), values)

    def test_step_series(self):
        values = [0.0] * 5 + [10.0] * 15
        smoothed = smooth(values, window=10).tolist()
        expected = []
        for i in range(len(values)):
            window = values[max(0, i - 9): i + 1]
            expected.append(sum(window) / len(window))
        np.testing.assert_allclose(smoothed, expected, atol=1e-12)
        self.assertEqual(smoothed[4], 0.0)
        self.assertAlmostEqual(smoothed[5], 10 / 6, places=12)
        self.assertAlmostEqual(smoothed[-1], 10.0, places=12)

    def test_window_must_be_positive(self):
        with self.assertRaises(ValueError):
            smooth([1.0], window=0)


class TrainingLogTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_learning_curve_over_seeds(self):
        a = write_log(self.dir / "a.csv", [10, 20, 30])
        b = write_log(self.dir / "b.csv", [20, 40, 60])
        curve = learning_curve([a, b], window=2)
        self.assertEqual(curve["epoch"].tolist(), [1, 2, 3])
        # smoothed a: 10, 15, 25; smoothed b: 20, 30, 50
        self.assertEqual(curve["mean"].tolist(), [15.0, 22.5, 37.5])
        np.testing.assert_allclose(curve["std"], np.sqrt([50.0, 112.5, 312.5]))
        self.assertEqual(curve["seeds"].tolist(), [2, 2, 2])

    def test_single_log_has_empty_std(self):
        path = write_log(self.dir / "a.csv", [1, 2])
        out = write_learning_curve([path], self.dir / "curve.csv", window=10)
        curve = pd.read_csv(out)
        self.assertEqual(curve["mean"].tolist(), [1.0, 1.5])
        self.assertTrue(curve["std"].isna().all())

    def test_bad_value_reports_line(self):
        path = self.dir / "bad.csv"
        path.write_text("epoch,scheduled_length\n1,3\n2,oops\n", encoding="utf-8")
        with self.assertRaises(LogParseError) as cm:
            read_training_log(path)
        self.assertEqual(cm.exception.line, 3)
        self.assertIsInstance(cm.exception, ParseError)

    def test_missing_column(self):
        path = self.dir / "bad.csv"
        path.write_text("epoch,loss\n1,0.3\n", encoding="utf-8")
        with self.assertRaises(LogParseError):
            read_training_log(path)

    def test_missing_and_empty_files(self):
        with self.assertRaises(LogParseError):
            read_training_log(self.dir / "absent.csv")
        empty = self.dir / "empty.csv"
        empty.write_text("", encoding="utf-8")
        with self.assertRaises(LogParseError):
            read_training_log(empty)
        with self.assertRaises(EmptyInput):
            learning_curve([])


class TableTests(SimpleTestCase):
    def setUp(self):
        rows = []
        for warm_start in (0.0, 0.3):
            scenario = ScenarioConfig(n_pms_initial=5, warm_start_ratio=warm_start)
            label = scenario.descriptor(with_warm_start=False)
            for policy, base in (("best_fit", 100), ("random", 80)):
                for seed in range(2):
                    rows.append(result_row(result(base + seed * 10, 0.5, 1.0), seed, label, warm_start, policy))
        self.results = results_frame(rows)

    def test_summary_table(self):
        table = summary_table(self.results)
        self.assertEqual(len(table), 2 * 3 * 2)
        row = table[
            (table.policy == "best_fit") & (table.metric == "scheduled_length") & (table.warm_start == 0.3)
        ].iloc[0]
        self.assertEqual(row["mean"], 105.0)
        self.assertAlmostEqual(row["std"], math.sqrt(50))
        self.assertEqual(row["n"], 2)

    def test_summary_ignores_row_order(self):
        shuffled = self.results.sample(frac=1.0, random_state=3)
        pd.testing.assert_frame_equal(summary_table(self.results), summary_table(shuffled))

    def test_comparison_table_shape(self):
        wide = comparison_table(summary_table(self.results))
        self.assertEqual(list(wide.columns), ["scenario", "metric", "policy", "ws=0", "ws=0.3"])
        self.assertEqual(len(wide), 3 * 2)
        cell = wide[(wide.policy == "random") & (wide.metric == "scheduled_length")]["ws=0"].iloc[0]
        self.assertEqual(cell, "85 (±7.1)")

    def test_comparison_table_fills_every_warm_start(self):
        wide = comparison_table(summary_table(self.results))
        self.assertEqual(list(wide.scenario.unique()), ["non-expansion/N=5"])
        self.assertFalse(wide[["ws=0", "ws=0.3"]].isna().any().any())

    def test_empty_table(self):
        with self.assertRaises(EmptyInput):
            summary_table(results_frame([]))
