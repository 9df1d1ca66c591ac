# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

from dataclasses import dataclass

import numpy as np

from xqcfd.bc.bc import pretrain_policy
from xqcfd.config.agent_config import BcConfig
from xqcfd.policy.policy import HetStatPolicy


@dataclass
class SineFit:
	"""Summary of a one-dimensional regression fit."""

	mean_error: float
	in_distribution_std: float
	far_std: float
	prior_std: float


def fit_sine_regression(
	seed: int = 0,
	points: int = 256,
	feature_dim: int = 512,
	epochs: int = 300,
	prior_std: float = 0.5,
	noise: float = 0.1,
	far_x: float = 8.0,
) -> SineFit:
	"""Fit latent sin(x) + noise on x in [-3, 3] and read the predictive std at `far_x`.

	The policy has no trunk, so its features are random Fourier features of x itself and the
	point `far_x` lies outside the kernel bandwidth of every training point.
	"""
	rng = np.random.default_rng(seed)
	x = rng.uniform(-3.0, 3.0, (points, 1))
	latent = np.sin(x) + noise * rng.standard_normal((points, 1))
	policy = HetStatPolicy(1, 1, rng, hidden_layers=0, feature_dim=feature_dim, prior_std=prior_std)
	cfg = BcConfig(epochs=epochs, batch_size=64, learning_rate=1e-2)
	pretrain_policy(policy, StateActionPairs(x, np.tanh(latent)), cfg, rng)

	grid = np.linspace(-2.5, 2.5, 51).reshape(-1, 1)
	dist = policy.predict_dist(grid, mode="eval")
	far_dist = policy.predict_dist(np.array([[far_x]]), mode="eval")
	return SineFit(
		mean_error=float(np.max(np.abs(dist.mean.values - np.sin(grid)))),
		in_distribution_std=float(np.sqrt(dist.variance.values).mean()),
		far_std=float(np.sqrt(far_dist.variance.item())),
		prior_std=prior_std,
	)


@dataclass
class StateActionPairs:
	"""Bare (s, a) demonstrations, enough for policy pretraining."""

	s: np.ndarray
	a: np.ndarray

	def __len__(self):
		return len(self.s)
