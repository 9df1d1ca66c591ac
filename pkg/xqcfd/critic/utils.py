# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

from dataclasses import dataclass, field

import numpy as np

from xqcfd.diffmath.diffmath import Tensor, as_tensor, constant
from xqcfd.exceptions import SupportError
from xqcfd.utils import throw


@dataclass(frozen=True)
class AtomSupport:
	"""Fixed return atoms, uniformly spaced from `v_min` to `v_max`."""

	v_min: float = 0.0
	v_max: float = 1.0
	count: int = 101
	atoms: np.ndarray = field(init=False, repr=False, compare=False)

	def __post_init__(self):
		if self.count < 2:
			throw("An atom support needs at least 2 atoms, got {0}".format(self.count), SupportError)
		if not self.v_min < self.v_max:
			throw("Support bounds must satisfy v_min < v_max, got [{0}, {1}]".format(self.v_min, self.v_max), SupportError)
		atoms = np.linspace(self.v_min, self.v_max, self.count)
		atoms.flags.writeable = False
		object.__setattr__(self, "atoms", atoms)

	@property
	def delta(self) -> float:
		return (self.v_max - self.v_min) / (self.count - 1)

	@classmethod
	def for_discount(cls, gamma: float, count: int = 101, reward_max: float = 1.0) -> "AtomSupport":
		"""[0, reward_max / (1 - gamma)]: the range of discounted returns of rewards in [0, reward_max]."""
		if not 0.0 <= gamma < 1.0:
			throw("Discount must lie in [0, 1), got {0}".format(gamma), SupportError)
		return cls(0.0, reward_max / (1.0 - gamma), count)


def project_target(support: AtomSupport, r, done, gamma: float, next_probs) -> np.ndarray:
	"""Project r + gamma z (or r alone where done) back onto the atoms.

	Works on batches: `r` and `done` have one entry per row of `next_probs` (B x N).
	"""
	next_probs = np.atleast_2d(np.asarray(next_probs, dtype=np.float64))
	if next_probs.shape[1] != support.count:
		throw("Expected {0} atom probabilities, got {1}".format(support.count, next_probs.shape[1]), SupportError)
	r = np.asarray(r, dtype=np.float64).reshape(-1, 1)
	live = 1.0 - np.asarray(done, dtype=np.float64).reshape(-1, 1)
	shifted = np.clip(r + live * gamma * support.atoms, support.v_min, support.v_max)
	# weights[b, j, i]: share of source atom j landing on atom i
	weights = np.clip(1.0 - np.abs(shifted[:, :, None] - support.atoms[None, None, :]) / support.delta, 0.0, 1.0)
	return np.einsum("bj,bji->bi", next_probs, weights)


def expected_value(probs, support: AtomSupport):
	"""Sum_i p_i z_i per row. Tensors stay on the tape as a (B x 1) column."""
	if isinstance(probs, Tensor):
		return probs @ constant(support.atoms.reshape(-1, 1))
	probs = np.asarray(probs, dtype=np.float64)
	return probs @ support.atoms


def pessimistic_mask(values_a, values_b) -> np.ndarray:
	"""(B x 1) selector, 1.0 where critic a has the lower (or equal) expected value."""
	values_a = np.asarray(values_a, dtype=np.float64).reshape(-1, 1)
	values_b = np.asarray(values_b, dtype=np.float64).reshape(-1, 1)
	return (values_a <= values_b).astype(np.float64)


def aggregate_pair(probs_a, probs_b, support: AtomSupport) -> np.ndarray:
	"""Row-wise pick of the distribution with the smaller expected value; ties go to a."""
	probs_a = np.atleast_2d(np.asarray(probs_a, dtype=np.float64))
	probs_b = np.atleast_2d(np.asarray(probs_b, dtype=np.float64))
	mask = pessimistic_mask(expected_value(probs_a, support), expected_value(probs_b, support))
	return np.where(mask > 0.0, probs_a, probs_b)


def cross_entropy(target, log_probs) -> Tensor:
	"""-mean_b sum_i m_bi log p_bi."""
	return -(constant(target) * as_tensor(log_probs)).sum(axis=1).mean()
