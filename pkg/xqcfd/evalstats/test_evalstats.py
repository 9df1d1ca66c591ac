# Copyright (c) 2025, xqcfd contributors
# See license.txt

import tempfile
import unittest
from pathlib import Path

import numpy as np
import numpy.testing as npt

from xqcfd.agent.agent import write_metrics
from xqcfd.evalstats.evalstats import (
	AGGREGATE_FILE,
	RunMatrix,
	aggregate_runs,
	bootstrap_distribution,
	iqm,
	iqm_curve,
	read_aggregate,
	stratified_bootstrap_ci,
)
from xqcfd.exceptions import ConfigError, EmptyDatasetError, ShapeError


def _rows(variant, seed, scores, steps=None):
	steps = steps or [1000 * i for i in range(len(scores))]
	return [
		{
			"step": step,
			"variant": variant,
			"seed": seed,
			"success_rate": float(score),
			"actor_loss": 0.0,
			"critic_loss": 0.0,
			"kl_to_prior": 0.0,
			"temperature": 0.01,
			"buffer_size": step,
		}
		for step, score in zip(steps, scores)
	]


class UnitTestIqm(unittest.TestCase):
	def test_middle_of_four(self):
		self.assertEqual(iqm([1, 2, 3, 4]), 2.5)

	def test_constant(self):
		self.assertAlmostEqual(iqm([0.7] * 10), 0.7, places=15)

	def test_sort_and_slice(self):
		values = np.random.default_rng(0).standard_normal(100)
		self.assertAlmostEqual(iqm(values), np.sort(values)[25:75].mean(), places=12)

	def test_equivariance(self):
		values = np.random.default_rng(1).uniform(size=10)
		self.assertAlmostEqual(iqm(3.0 * values + 2.0), 3.0 * iqm(values) + 2.0, places=12)

	def test_empty(self):
		with self.assertRaises(EmptyDatasetError):
			iqm([])


class UnitTestRunMatrix(unittest.TestCase):
	def test_shape_checks(self):
		with self.assertRaises(ShapeError):
			RunMatrix([[1.0, 2.0], [3.0]], seeds=[0, 1])
		with self.assertRaises(ShapeError):
			RunMatrix([[1.0, np.nan]], seeds=[0])
		with self.assertRaises(ShapeError):
			RunMatrix([[1.0, 2.0]], seeds=[0, 1])
		self.assertEqual(RunMatrix([[1.0, 2.0]], seeds=[4]).steps, (0, 1))


class UnitTestBootstrap(unittest.TestCase):
	def test_identical_seeds(self):
		curve = [0.1, 0.5, 0.9]
		lo, hi = stratified_bootstrap_ci(RunMatrix([curve] * 5, range(5)), rng=np.random.default_rng(2))
		npt.assert_allclose(lo, curve, atol=1e-15)
		npt.assert_allclose(hi, curve, atol=1e-15)

	def test_extreme_percentiles(self):
		matrix = RunMatrix(np.random.default_rng(3).uniform(size=(6, 4)), range(6))
		lo, hi = stratified_bootstrap_ci(matrix, 1000, 0.0, 100.0, np.random.default_rng(4))
		samples = bootstrap_distribution(matrix, 1000, np.random.default_rng(4))
		npt.assert_array_equal(lo, samples.min(axis=0))
		npt.assert_array_equal(hi, samples.max(axis=0))

	def test_two_seed_distribution(self):
		samples = bootstrap_distribution(RunMatrix([[0.0], [1.0]], [0, 1]), 10_000, np.random.default_rng(5)).ravel()
		support, counts = np.unique(samples, return_counts=True)
		npt.assert_array_equal(support, [0.0, 0.5, 1.0])
		for count, p in zip(counts, (0.25, 0.5, 0.25)):
			self.assertLess(abs(count / 10_000 - p), 3 * np.sqrt(p * (1 - p) / 10_000))

	def test_band_contains_point(self):
		matrix = RunMatrix(np.random.default_rng(6).uniform(size=(10, 5)), range(10))
		lo, hi = stratified_bootstrap_ci(matrix, 2000, 10.0, 90.0, np.random.default_rng(7))
		point = iqm_curve(matrix)
		self.assertTrue(np.all(lo <= point) and np.all(point <= hi))

	def test_deterministic(self):
		matrix = RunMatrix(np.random.default_rng(8).uniform(size=(5, 3)), range(5))
		first = stratified_bootstrap_ci(matrix, rng=np.random.default_rng(9))
		second = stratified_bootstrap_ci(matrix, rng=np.random.default_rng(9))
		npt.assert_array_equal(first, second)

	def test_single_seed(self):
		with self.assertLogs("xqcfd.evalstats.evalstats", level="WARNING"):
			lo, hi = stratified_bootstrap_ci(RunMatrix([[0.2, 0.4]], [0]))
		npt.assert_array_equal(lo, [0.2, 0.4])
		npt.assert_array_equal(hi, [0.2, 0.4])

	def test_arguments(self):
		matrix = RunMatrix([[0.0], [1.0]], [0, 1])
		with self.assertRaises(ConfigError):
			stratified_bootstrap_ci(matrix, resamples=999)
		with self.assertRaises(ConfigError):
			stratified_bootstrap_ci(matrix, lo=90.0, hi=10.0)


class IntegrationTestAggregate(unittest.TestCase):
	def test_aggregate_file(self):
		with tempfile.TemporaryDirectory() as tmp:
			for seed, scores in enumerate(([0.2, 0.6], [0.4, 0.8], [0.3, 0.7])):
				write_metrics(_rows("xqcfd", seed, scores), Path(tmp) / f"point-reach-v0_xqcfd_{seed}.csv")
			write_metrics(_rows("xqc-od", 0, [0.0, 0.1]), Path(tmp) / "point-reach-v0_xqc-od_0.csv")
			aggregate_runs(tmp, seed=1)
			text = (Path(tmp) / AGGREGATE_FILE).read_text()
			rows = read_aggregate(Path(tmp) / AGGREGATE_FILE)
			aggregate_runs(tmp, seed=1)
			self.assertEqual((Path(tmp) / AGGREGATE_FILE).read_text(), text)

		self.assertTrue(text.startswith("step,variant,iqm,ci_lo,ci_hi\n"))
		self.assertEqual([(row["variant"], row["step"]) for row in rows], [("xqc-od", 0), ("xqc-od", 1000), ("xqcfd", 0), ("xqcfd", 1000)])
		self.assertAlmostEqual(rows[2]["iqm"], 0.3, places=12)
		self.assertEqual(rows[0]["ci_lo"], rows[0]["iqm"])
		for row in rows:
			self.assertLessEqual(row["ci_lo"], row["iqm"] + 1e-12)
			self.assertGreaterEqual(row["ci_hi"], row["iqm"] - 1e-12)

	def test_mismatched_steps(self):
		with tempfile.TemporaryDirectory() as tmp:
			write_metrics(_rows("xqcfd", 0, [0.2, 0.6]), Path(tmp) / "a.csv")
			write_metrics(_rows("xqcfd", 1, [0.2, 0.6], steps=[0, 500]), Path(tmp) / "b.csv")
			with self.assertRaises(ShapeError):
				aggregate_runs(tmp)

	def test_empty_directory(self):
		with tempfile.TemporaryDirectory() as tmp:
			with self.assertRaises(EmptyDatasetError):
				aggregate_runs(tmp)
