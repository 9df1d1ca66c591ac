# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Interquartile means and stratified bootstrap confidence bands over seeds."""

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import trim_mean

from xqcfd.agent.agent import read_metrics
from xqcfd.exceptions import ConfigError, EmptyDatasetError, ShapeError
from xqcfd.utils import get_logger, throw

logger = get_logger(__name__)

AGGREGATE_FILE = "aggregate.csv"
AGGREGATE_COLUMNS = ("step", "variant", "iqm", "ci_lo", "ci_hi")


@dataclass(eq=False)
class RunMatrix:
	"""Scores of every seed (rows) at every evaluation point (columns)."""

	values: np.ndarray
	seeds: tuple
	steps: tuple = None

	def __post_init__(self):
		try:
			self.values = np.array(self.values, dtype=np.float64)
		except ValueError:
			throw("Run matrix rows differ in length", ShapeError)
		if self.values.ndim != 2 or self.values.size == 0:
			throw("Run matrix must be a non-empty seeds x points table, got {0}".format(self.values.shape), ShapeError)
		if not np.all(np.isfinite(self.values)):
			throw("Run matrix has missing or non-finite entries", ShapeError)
		self.seeds = tuple(self.seeds)
		if len(self.seeds) != self.values.shape[0]:
			throw("{0} seed ids for {1} rows".format(len(self.seeds), self.values.shape[0]), ShapeError)
		if self.steps is None:
			self.steps = tuple(range(self.values.shape[1]))
		self.steps = tuple(self.steps)
		if len(self.steps) != self.values.shape[1]:
			throw("{0} steps for {1} columns".format(len(self.steps), self.values.shape[1]), ShapeError)

	@property
	def seed_count(self) -> int:
		return self.values.shape[0]


def iqm(values) -> float:
	"""Mean after dropping floor(n/4) values from each tail."""
	values = np.asarray(values, dtype=np.float64).ravel()
	if values.size == 0:
		throw("IQM of an empty list", EmptyDatasetError)
	return float(trim_mean(values, 0.25))


def iqm_curve(matrix: RunMatrix) -> np.ndarray:
	return trim_mean(matrix.values, 0.25, axis=0)


def bootstrap_distribution(matrix: RunMatrix, resamples: int, rng: np.random.Generator) -> np.ndarray:
	"""IQM of each seed resample at each point, (resamples x points).

	One set of resampled seed indices is shared by all points, so every bootstrap draw is a curve.
	"""
	index = rng.integers(0, matrix.seed_count, (resamples, matrix.seed_count))
	return trim_mean(matrix.values[index], 0.25, axis=1)


def stratified_bootstrap_ci(
	matrix: RunMatrix,
	resamples: int = 2000,
	lo: float = 10.0,
	hi: float = 90.0,
	rng: np.random.Generator = None,
) -> tuple[np.ndarray, np.ndarray]:
	"""Nearest-rank `lo` and `hi` percentiles of the bootstrapped IQM curve."""
	if resamples < 1000:
		throw("Use at least 1000 bootstrap resamples, got {0}".format(resamples), ConfigError)
	if not 0.0 <= lo < hi <= 100.0:
		throw("Percentiles must satisfy 0 <= lo < hi <= 100, got {0}, {1}".format(lo, hi), ConfigError)
	if matrix.seed_count == 1:
		logger.warning("Single seed: the confidence band collapses to the point values")
		point = matrix.values[0].copy()
		return point, point.copy()
	rng = rng if rng is not None else np.random.default_rng(0)
	samples = bootstrap_distribution(matrix, resamples, rng)
	band = np.percentile(samples, [lo, hi], axis=0, method="inverted_cdf")
	return band[0], band[1]


def group_runs(rows) -> dict[str, RunMatrix]:
	"""Success-rate matrices per variant from metric rows of several runs."""
	curves = defaultdict(dict)
	for row in rows:
		curves[row["variant"]].setdefault(row["seed"], []).append((row["step"], row["success_rate"]))

	matrices = {}
	for variant, by_seed in sorted(curves.items()):
		seeds = sorted(by_seed)
		steps = [step for step, _ in sorted(by_seed[seeds[0]])]
		values = []
		for seed in seeds:
			curve = sorted(by_seed[seed])
			if [step for step, _ in curve] != steps:
				throw("Seed {0} of {1} was evaluated at different steps".format(seed, variant), ShapeError)
			values.append([score for _, score in curve])
		matrices[variant] = RunMatrix(values, seeds, steps)
	return matrices


def aggregate_runs(
	run_dir,
	resamples: int = 2000,
	lo: float = 10.0,
	hi: float = 90.0,
	seed: int = 0,
	out=None,
) -> list[dict]:
	"""Read every metrics CSV under `run_dir` and write `aggregate.csv` next to them."""
	run_dir = Path(run_dir)
	paths = sorted(p for p in run_dir.glob("*.csv") if p.name != AGGREGATE_FILE)
	if not paths:
		throw("No metrics files in {0}".format(run_dir), EmptyDatasetError)
	rows = [row for path in paths for row in read_metrics(path)]

	aggregate = []
	for variant, matrix in group_runs(rows).items():
		point = iqm_curve(matrix)
		ci_lo, ci_hi = stratified_bootstrap_ci(matrix, resamples, lo, hi, np.random.default_rng(seed))
		for i, step in enumerate(matrix.steps):
			aggregate.append(
				{
					"step": step,
					"variant": variant,
					"iqm": float(point[i]),
					"ci_lo": float(ci_lo[i]),
					"ci_hi": float(ci_hi[i]),
				}
			)
		logger.info("%s: %s seeds, final IQM %.3f", variant, matrix.seed_count, point[-1])

	out = Path(out) if out is not None else run_dir / AGGREGATE_FILE
	out.write_text(format_aggregate(aggregate), encoding="utf-8")
	return aggregate


def format_aggregate(rows) -> str:
	buffer = io.StringIO()
	writer = csv.writer(buffer, lineterminator="\n")
	writer.writerow(AGGREGATE_COLUMNS)
	for row in rows:
		writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in AGGREGATE_COLUMNS])
	return buffer.getvalue()


def read_aggregate(path) -> list[dict]:
	with open(path, encoding="utf-8", newline="") as f:
		rows = list(csv.DictReader(f))
	for row in rows:
		row["step"] = int(row["step"])
		for key in ("iqm", "ci_lo", "ci_hi"):
			row[key] = float(row[key])
	return rows
