# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

import numpy as np

from xqcfd.diffmath.diffmath import Tensor, as_tensor, constant, interleave_cols
from xqcfd.diffmath.layers import Module
from xqcfd.exceptions import ShapeError
from xqcfd.utils import throw

LOG_2 = float(np.log(2.0))
LOG_2PI = float(np.log(2.0 * np.pi))


class RffLayer(Module):
	"""Random Fourier features with a fixed standard-normal projection."""

	buffers = ("projection",)

	def __init__(self, trunk_dim: int, feature_dim: int, rng: np.random.Generator):
		if feature_dim < 2 or feature_dim % 2:
			throw("feature_dim must be even, got {0}".format(feature_dim), ShapeError)
		self.trunk_dim = trunk_dim
		self.feature_dim = feature_dim
		self.projection = rng.standard_normal((feature_dim // 2, trunk_dim))
		self.projection.flags.writeable = False

	def __call__(self, h) -> Tensor:
		return rff_features(self, h)


def rff_features(layer: RffLayer, trunk_out) -> Tensor:
	"""sqrt(2/F) * [cos(Vh), sin(Vh)], interleaved per projection row."""
	h = as_tensor(trunk_out)
	if h.shape[-1] != layer.trunk_dim:
		throw("Trunk output has {0} features, expected {1}".format(h.shape[-1], layer.trunk_dim), ShapeError)
	projected = h @ constant(layer.projection.T)
	scale = np.sqrt(2.0 / layer.feature_dim)
	return interleave_cols(projected.cos(), projected.sin()) * scale


def pair_expansion(feature_dim: int) -> np.ndarray:
	"""(F/2 x F) matrix copying each pair value onto its cos and sin column."""
	expand = np.zeros((feature_dim // 2, feature_dim))
	pairs = np.arange(feature_dim // 2)
	expand[pairs, 2 * pairs] = 1.0
	expand[pairs, 2 * pairs + 1] = 1.0
	return expand


def tanh_log_det(latent) -> Tensor:
	"""Per-row sum of log(1 - tanh(z)^2), as 2(log 2 - z - softplus(-2z))."""
	z = as_tensor(latent)
	return (2.0 * (LOG_2 - z - (-2.0 * z).softplus())).sum(axis=1)


def gaussian_log_density(latent, mean, variance) -> Tensor:
	z, mu, var = as_tensor(latent), as_tensor(mean), as_tensor(variance)
	return (-0.5 * ((z - mu).square() / var + var.log() + LOG_2PI)).sum(axis=1)


def kl_squashed_mc(mean_q, var_q, mean_p, var_p, samples: int, rng: np.random.Generator):
	"""Monte Carlo KL(q || p) between two tanh-squashed diagonal Gaussians, in action space.

	Returns (estimate, standard error) for one pair of distributions given as vectors.
	"""
	mean_q, var_q, mean_p, var_p = (np.asarray(x, dtype=np.float64).reshape(1, -1) for x in (mean_q, var_q, mean_p, var_p))
	z = mean_q + np.sqrt(var_q) * rng.standard_normal((samples, mean_q.shape[1]))
	actions = np.tanh(z)
	recovered = np.arctanh(np.clip(actions, -1.0 + 1e-16, 1.0 - 1e-16))
	jacobian = np.sum(np.log1p(-(actions**2)), axis=1)

	def _log_density(mean, var):
		return -0.5 * np.sum((recovered - mean) ** 2 / var + np.log(var) + LOG_2PI, axis=1) - jacobian

	ratios = _log_density(mean_q, var_q) - _log_density(mean_p, var_p)
	return float(ratios.mean()), float(ratios.std(ddof=1) / np.sqrt(samples))
