# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Categorical critic pair with joint-batch normalization and polyak targets.

The online critics see the current and the next state-action pairs in one train-mode batch, so
batch statistics cover both marginals. Bellman targets come from the target copies in eval mode.
"""

from dataclasses import dataclass

import numpy as np

from xqcfd import hooks
from xqcfd.critic.utils import AtomSupport, aggregate_pair, cross_entropy, expected_value, project_target
from xqcfd.diffmath.checkpoint import load_checkpoint, save_checkpoint
from xqcfd.diffmath.diffmath import Param, Tape, Tensor, as_tensor, backward, concat_cols, concat_rows, stop_gradient
from xqcfd.diffmath.layers import Linear, Mlp, Module
from xqcfd.exceptions import BatchNormError, ShapeError
from xqcfd.utils import get_logger, throw

logger = get_logger(__name__)


class CategoricalCritic(Module):
	"""[Linear(WN) -> BN -> relu] x 2 on concat(s, a), then a plain linear layer to atom logits."""

	def __init__(
		self,
		obs_dim: int,
		act_dim: int,
		atom_count: int,
		rng: np.random.Generator,
		hidden_width: int = 64,
		hidden_layers: int = 2,
		bn_momentum: float = 0.01,
		bn_epsilon: float = 1e-5,
	):
		self.obs_dim = obs_dim
		self.act_dim = act_dim
		self.body = Mlp(
			obs_dim + act_dim,
			[hidden_width] * hidden_layers,
			rng,
			activation="relu",
			normalize=True,
			bn_momentum=bn_momentum,
			bn_epsilon=bn_epsilon,
		)
		self.head = Linear(self.body.out_features, atom_count, rng)

	def __call__(self, s, a, mode: str = "train") -> Tensor:
		s, a = as_tensor(s), as_tensor(a)
		if s.shape[1] != self.obs_dim or a.shape[1] != self.act_dim or s.shape[0] != a.shape[0]:
			throw("Critic got states {0} and actions {1}".format(s.shape, a.shape), ShapeError)
		return self.head(self.body(concat_cols([s, a]), mode))

	def log_probs(self, s, a, mode: str = "train") -> Tensor:
		return self(s, a, mode).log_softmax_rows()

	def probs(self, s, a, mode: str = "train") -> Tensor:
		return self(s, a, mode).softmax_rows()

	def q_value(self, s, a, support: AtomSupport, mode: str = "eval") -> np.ndarray:
		"""Expected return of each (s, a) row as a plain vector."""
		return expected_value(self.probs(s, a, mode).values, support)


class CriticPair(Module):
	"""Two online critics and their polyak-averaged targets, running statistics included."""

	def __init__(self, critic_a: CategoricalCritic, critic_b: CategoricalCritic, polyak: float = 0.005):
		self.critic_a = critic_a
		self.critic_b = critic_b
		self.target_a = critic_a.clone()
		self.target_b = critic_b.clone()
		self.polyak = polyak

	@classmethod
	def from_config(cls, obs_dim: int, act_dim: int, cfg, rng: np.random.Generator) -> "CriticPair":
		def _critic():
			return CategoricalCritic(
				obs_dim,
				act_dim,
				cfg.atom_count,
				rng,
				hidden_width=cfg.hidden_width,
				bn_momentum=cfg.bn_momentum,
				bn_epsilon=cfg.bn_epsilon,
			)

		return cls(_critic(), _critic(), polyak=cfg.polyak)

	@property
	def online(self) -> tuple[CategoricalCritic, CategoricalCritic]:
		return self.critic_a, self.critic_b

	@property
	def targets(self) -> tuple[CategoricalCritic, CategoricalCritic]:
		return self.target_a, self.target_b

	def parameters(self) -> list[Param]:
		return self.critic_a.parameters() + self.critic_b.parameters()

	def save(self, path):
		return save_checkpoint(path, hooks.critic_checkpoint_magic, self.named_arrays())

	def load(self, path) -> "CriticPair":
		self.load_named_arrays(load_checkpoint(path, hooks.critic_checkpoint_magic))
		return self


@dataclass
class JointForward:
	"""Online log-probabilities of (s, a) and next-state target probabilities, per critic."""

	log_probs: tuple[Tensor, Tensor]
	next_probs: tuple[np.ndarray, np.ndarray]


def forward_joint(pair: CriticPair, s, a, s_next, a_next, use_target_network: bool = True) -> JointForward:
	s, a, s_next, a_next = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (s, a, s_next, a_next))
	n = s.shape[0]
	if s_next.shape[0] != n or a.shape[0] != n or a_next.shape[0] != n:
		throw("Joint forward needs equally sized batches", ShapeError)
	if n < 2:
		throw("Joint forward needs a batch of at least 2, got {0}".format(n), BatchNormError)

	joint_s = concat_rows([s, s_next])
	joint_a = concat_rows([a, a_next])
	log_probs, next_probs = [], []
	for online, target in zip(pair.online, pair.targets):
		joint = online.log_probs(joint_s, joint_a, mode="train")
		log_probs.append(joint.rows(0, n))
		if use_target_network:
			next_probs.append(target.probs(s_next, a_next, mode="eval").values)
		else:
			next_probs.append(np.exp(stop_gradient(joint.rows(n, 2 * n)).values))
	return JointForward(tuple(log_probs), tuple(next_probs))


def critic_loss(
	pair: CriticPair,
	batch,
	policy,
	support: AtomSupport,
	gamma: float,
	rng: np.random.Generator,
	use_target_network: bool = True,
) -> Tensor:
	"""Cross-entropy to the projected pessimistic target, summed over both online critics."""
	a_next = policy.act(batch.s_next, rng)
	joint = forward_joint(pair, batch.s, batch.a, batch.s_next, a_next, use_target_network=use_target_network)
	target = project_target(support, batch.r, batch.done, gamma, aggregate_pair(*joint.next_probs, support))
	return cross_entropy(target, joint.log_probs[0]) + cross_entropy(target, joint.log_probs[1])


def target_update(pair: CriticPair, polyak: float = None) -> None:
	"""target = (1 - tau) target + tau online, for weights and running statistics alike."""
	tau = pair.polyak if polyak is None else polyak
	for online, target in zip(pair.online, pair.targets):
		for source, dest in zip(online.parameters(), target.parameters()):
			dest.assign((1.0 - tau) * dest.data + tau * source.data)
		for (_, source), (_, dest) in zip(online.named_states(), target.named_states()):
			dest.running_mean = (1.0 - tau) * dest.running_mean + tau * source.running_mean
			dest.running_var = (1.0 - tau) * dest.running_var + tau * source.running_var


def critic_update(
	pair: CriticPair,
	optimizer,
	batch,
	policy,
	support: AtomSupport,
	gamma: float,
	rng: np.random.Generator,
	use_target_network: bool = True,
) -> float:
	"""One gradient step on both online critics followed by a target update."""
	with Tape(watch=pair.parameters()):
		loss = critic_loss(pair, batch, policy, support, gamma, rng, use_target_network=use_target_network)
		grads = backward(loss)
	optimizer.step(grads)
	target_update(pair)
	logger.debug("critic loss %.6f", loss.item())
	return loss.item()
