# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

import numpy as np
from scipy.special import logsumexp

from xqcfd.exceptions import ConfigError, NonFiniteError
from xqcfd.utils import throw


def action_grid(size: int) -> np.ndarray:
	"""`size` evenly spaced actions strictly inside (-1, 1)."""
	return np.linspace(-1.0, 1.0, size + 2)[1:-1]


def squashed_gaussian_density(actions, mean: float, std: float) -> np.ndarray:
	"""Density of tanh(z), z ~ N(mean, std^2), at each action."""
	actions = np.asarray(actions, dtype=np.float64)
	z = np.arctanh(actions)
	gauss = np.exp(-0.5 * ((z - mean) / std) ** 2) / (std * np.sqrt(2.0 * np.pi))
	return gauss / (1.0 - actions**2)


def pseudo_posterior(q, prior_weights, alpha: float) -> np.ndarray:
	"""Normalized exp(Q / alpha) p over a discrete action grid."""
	if alpha <= 0.0:
		throw("Temperature must be positive, got {0}".format(alpha), ConfigError)
	q = np.asarray(q, dtype=np.float64)
	with np.errstate(divide="ignore"):
		logits = q / alpha + np.log(np.asarray(prior_weights, dtype=np.float64))
	return np.exp(logits - logsumexp(logits))


def policy_improvement(critic_fn, prior, alpha: float, grid_size: int = 1001) -> float:
	"""E_pi[Q] - E_p[Q] for the pseudo-posterior pi of a 1-D action prior on a grid.

	`critic_fn` and `prior` map an array of actions to Q values and (unnormalized) prior
	densities; plain arrays of grid values are accepted as well.
	"""
	if grid_size < 100:
		throw("Grid needs at least 100 points, got {0}".format(grid_size), ConfigError)
	grid = action_grid(grid_size)
	q = np.asarray(critic_fn(grid) if callable(critic_fn) else critic_fn, dtype=np.float64).ravel()
	p = np.asarray(prior(grid) if callable(prior) else prior, dtype=np.float64).ravel()
	if q.shape != grid.shape or p.shape != grid.shape:
		throw("Expected {0} grid values".format(grid_size), ConfigError)
	if not np.all(np.isfinite(q)):
		throw("Non-finite Q on the action grid", NonFiniteError)
	if np.any(p < 0.0) or not p.sum() > 0.0:
		throw("Prior weights must be non-negative with positive mass", ConfigError)
	p = p / p.sum()
	return float(pseudo_posterior(q, p, alpha) @ q - p @ q)


def monotonic_improvement_check(critic_fn, prior, alpha: float, grid_size: int = 1001) -> bool:
	"""Whether reweighting the prior by exp(Q / alpha) does not lower the expected Q."""
	improvement = policy_improvement(critic_fn, prior, alpha, grid_size)
	q = np.asarray(critic_fn(action_grid(grid_size)) if callable(critic_fn) else critic_fn)
	return improvement >= -1e-12 * max(1.0, float(np.max(np.abs(q))))
