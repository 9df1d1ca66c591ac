# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Behavioral-cloning pretraining of the policy and of the critics on demonstrations."""

from dataclasses import dataclass

import numpy as np

from xqcfd.config.agent_config import BcConfig
from xqcfd.critic.critic import CriticPair, critic_update
from xqcfd.critic.utils import AtomSupport
from xqcfd.diffmath.diffmath import Tape, Tensor, backward, constant, stop_gradient
from xqcfd.diffmath.optim import Adam, sgd_step
from xqcfd.exceptions import ActionRangeError, EmptyDatasetError
from xqcfd.policy.policy import Policy
from xqcfd.policy.utils import gaussian_log_density, tanh_log_det
from xqcfd.utils import get_logger, throw

logger = get_logger(__name__)

ACTION_CLIP = 1.0 - 1e-6
VARIANCE_GRAD_CLIP = 1.0


@dataclass
class FaithfulLoss:
	mse: Tensor
	nllh: Tensor

	@property
	def total(self) -> Tensor:
		return self.mse + self.nllh


def clip_actions(a) -> np.ndarray:
	return np.clip(np.asarray(a, dtype=np.float64), -ACTION_CLIP, ACTION_CLIP)


def faithful_loss(policy: Policy, s, a, mode: str = "train") -> FaithfulLoss:
	"""Squared error of the squashed mean plus the variance likelihood.

	The likelihood term sees the mean through a stop-gradient, so it only moves the variance
	parameters; the squared error only depends on the mean.
	"""
	a = np.atleast_2d(np.asarray(a, dtype=np.float64))
	if np.any(np.abs(a) >= 1.0):
		throw("Demo actions must lie strictly inside (-1, 1)", ActionRangeError)
	latent = constant(np.arctanh(a))
	dist = policy.predict_dist(s, mode=mode)
	mse = (constant(a) - dist.mean.tanh()).square().sum(axis=1).mean()
	# -log N(z; sg(mean), var) - log|d tanh(z)/dz|
	nllh = (-gaussian_log_density(latent, stop_gradient(dist.mean), dist.variance) - tanh_log_det(latent)).mean()
	return FaithfulLoss(mse, nllh)


def pretrain_policy(
	policy: Policy, demos, cfg: BcConfig, rng: np.random.Generator, epochs: int = None
) -> tuple[Policy, Policy, list[float]]:
	"""Minibatch fit of `faithful_loss` on the demo (s, a) pairs.

	Mean parameters follow Adam, variance parameters plain clipped SGD. Returns the trained
	policy, a frozen copy of it (the KL prior) and the mean loss of every epoch.
	"""
	if len(demos) == 0:
		throw("Behavioral cloning needs at least one demonstration", EmptyDatasetError)
	epochs = cfg.epochs if epochs is None else epochs
	states, actions = np.asarray(demos.s), clip_actions(demos.a)
	mean_optimizer = Adam(policy.mean_parameters(), lr=cfg.learning_rate)
	variance_params = policy.variance_parameters()
	n = len(states)

	history = []
	for epoch in range(epochs):
		order = rng.permutation(n)
		losses = []
		for start in range(0, n, cfg.batch_size):
			index = order[start : start + cfg.batch_size]
			if len(index) < 2:
				continue
			with Tape(watch=policy.parameters()):
				loss = faithful_loss(policy, states[index], actions[index]).total
				grads = backward(loss)
			mean_optimizer.step(grads)
			sgd_step(variance_params, grads, cfg.variance_learning_rate, max_norm=VARIANCE_GRAD_CLIP)
			losses.append(loss.item())
		if losses:
			history.append(float(np.mean(losses)))
			logger.debug("bc epoch %s loss %.6f", epoch, history[-1])

	if history:
		logger.info("Policy pretraining finished after %s epochs, loss %.4f", epochs, history[-1])
	return policy, policy.clone(), history


def pretrain_critic(
	pair: CriticPair,
	demos,
	policy: Policy,
	support: AtomSupport,
	gamma: float,
	steps: int,
	rng: np.random.Generator,
	optimizer=None,
	batch_size: int = 256,
	normalizer=None,
	learning_rate: float = 3e-4,
	use_target_network: bool = True,
) -> list[float]:
	"""`steps` critic updates on demo minibatches with next actions from the pretrained policy."""
	if len(demos) == 0:
		throw("Critic pretraining needs at least one demonstration", EmptyDatasetError)
	optimizer = optimizer or Adam(pair.parameters(), lr=learning_rate)
	history = []
	for _ in range(steps):
		batch = demos.sample(batch_size, rng, normalizer)
		history.append(
			critic_update(pair, optimizer, batch, policy, support, gamma, rng, use_target_network=use_target_network)
		)
	if history:
		logger.info("Critic pretraining finished after %s steps, loss %.4f", steps, history[-1])
	return history
