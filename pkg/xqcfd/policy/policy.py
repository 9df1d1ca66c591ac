# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Tanh-squashed Gaussian policies.

Both policies predict a diagonal Gaussian over latent actions z and act with a = tanh(z).
The variance path only sees stop-gradient features, so a mean fit and a variance fit never
compete for the shared trunk.
"""

from dataclasses import dataclass

import numpy as np

from xqcfd import hooks
from xqcfd.diffmath.checkpoint import load_checkpoint, save_checkpoint
from xqcfd.diffmath.diffmath import Param, Tensor, as_tensor, concat_cols, constant, stop_gradient
from xqcfd.diffmath.layers import Linear, Mlp, Module
from xqcfd.policy.utils import RffLayer, gaussian_log_density, pair_expansion, tanh_log_det
from xqcfd.utils import get_logger, resolve

logger = get_logger(__name__)

LOG_STD_BOUNDS = (-10.0, 2.0)


@dataclass
class ActionDistribution:
	"""Batched latent Gaussian; `mean` and `variance` are (batch x action-dim)."""

	mean: Tensor
	variance: Tensor

	@property
	def std(self) -> Tensor:
		return self.variance.sqrt()

	@property
	def action_dim(self) -> int:
		return self.mean.shape[1]


def sample(dist: ActionDistribution, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
	"""Reparameterized draw. Returns (action, latent)."""
	noise = constant(rng.standard_normal(dist.mean.shape))
	latent = dist.mean + dist.std * noise
	return latent.tanh(), latent


def log_prob(dist: ActionDistribution, latent) -> Tensor:
	"""Log-density of the squashed action tanh(latent), one value per row."""
	return gaussian_log_density(latent, dist.mean, dist.variance) - tanh_log_det(latent)


def kl_latent(dist_q: ActionDistribution, dist_p: ActionDistribution) -> Tensor:
	"""Closed-form KL(q || p) between diagonal Gaussians, summed over action dimensions."""
	var_q, var_p = dist_q.variance, dist_p.variance
	diff = dist_q.mean - dist_p.mean
	return (0.5 * (var_p.log() - var_q.log()) + (var_q + diff.square()) / (2.0 * var_p) - 0.5).sum(axis=1)


def deterministic_action(policy: "Policy", s) -> np.ndarray:
	"""tanh of the latent mean with eval-mode normalization."""
	return np.tanh(policy.predict_dist(s, mode="eval").mean.values)


class Policy(Module):
	obs_dim: int
	act_dim: int

	def predict_dist(self, s, mode: str = "train") -> ActionDistribution:
		raise NotImplementedError

	def mean_parameters(self) -> list[Param]:
		raise NotImplementedError

	def variance_parameters(self) -> list[Param]:
		raise NotImplementedError

	def act(self, s, rng: np.random.Generator = None, deterministic: bool = False) -> np.ndarray:
		"""Action for a single state (or batch) as a plain array, eval-mode normalization."""
		if deterministic:
			return deterministic_action(self, s)
		action, _ = sample(self.predict_dist(s, mode="eval"), rng)
		return action.values

	def save(self, path):
		return save_checkpoint(path, hooks.policy_checkpoint_magic, self.named_arrays())

	def load(self, path) -> "Policy":
		self.load_named_arrays(load_checkpoint(path, hooks.policy_checkpoint_magic))
		return self


class HetStatPolicy(Policy):
	"""Stationary heteroscedastic policy: MLP trunk, random Fourier features, Gaussian last layer.

	Latent mean is mu @ phi. Latent variance of action dim d is |(I + A_d) D_d phi|^2 with
	D_d = diag(exp(rho_d)) pair-expanded, so it equals phi' Sigma_d phi for
	Sigma_d = D_d (I + A_d)' (I + A_d) D_d. With A_d = 0 and constant rho the variance is
	exp(2 rho) for every state.
	"""

	def __init__(
		self,
		obs_dim: int,
		act_dim: int,
		rng: np.random.Generator,
		hidden_width: int = 64,
		hidden_layers: int = 2,
		feature_dim: int = 128,
		prior_std: float = 0.5,
		use_bn_wn: bool = True,
		bn_momentum: float = 0.01,
		bn_epsilon: float = 1e-5,
	):
		self.obs_dim = obs_dim
		self.act_dim = act_dim
		self.trunk = Mlp(
			obs_dim,
			[hidden_width] * hidden_layers,
			rng,
			activation="tanh",
			normalize=use_bn_wn,
			bn_momentum=bn_momentum,
			bn_epsilon=bn_epsilon,
		)
		self.rff = RffLayer(self.trunk.out_features, feature_dim, rng)
		self.mu = Param("mu", np.zeros((act_dim, feature_dim)))
		self.rho = Param("rho", np.full((act_dim, feature_dim // 2), np.log(prior_std)))
		self.mix = [Param(f"mix{d}", np.zeros((feature_dim, feature_dim))) for d in range(act_dim)]
		self.expand = pair_expansion(feature_dim)

	@classmethod
	def from_config(cls, obs_dim, act_dim, cfg, rng) -> "HetStatPolicy":
		return cls(
			obs_dim,
			act_dim,
			rng,
			hidden_width=cfg.hidden_width,
			feature_dim=cfg.feature_dim,
			prior_std=cfg.prior_std,
			use_bn_wn=cfg.use_bn_wn_actor,
			bn_momentum=cfg.bn_momentum,
			bn_epsilon=cfg.bn_epsilon,
		)

	def features(self, s, mode: str = "train") -> Tensor:
		return self.rff(self.trunk(s, mode))

	def predict_dist(self, s, mode: str = "train") -> ActionDistribution:
		phi = self.features(s, mode)
		mean = phi @ as_tensor(self.mu).T
		return ActionDistribution(mean, self._variance(stop_gradient(phi)))

	def _variance(self, phi: Tensor) -> Tensor:
		scales = (as_tensor(self.rho) @ constant(self.expand)).exp()
		columns = []
		for d, mix in enumerate(self.mix):
			u = phi * scales.rows(d, d + 1)
			w = u + u @ as_tensor(mix).T
			columns.append(w.square().sum(axis=1))
		return concat_cols(columns)

	def mean_parameters(self) -> list[Param]:
		return self.trunk.parameters() + [self.mu]

	def variance_parameters(self) -> list[Param]:
		return [self.rho] + self.mix


class MlpPolicy(Policy):
	"""Plain MLP baseline with a mean head and a clipped log-std head."""

	def __init__(
		self,
		obs_dim: int,
		act_dim: int,
		rng: np.random.Generator,
		hidden_width: int = 64,
		hidden_layers: int = 2,
		prior_std: float = 0.5,
		use_bn_wn: bool = True,
		bn_momentum: float = 0.01,
		bn_epsilon: float = 1e-5,
	):
		self.obs_dim = obs_dim
		self.act_dim = act_dim
		self.trunk = Mlp(
			obs_dim,
			[hidden_width] * hidden_layers,
			rng,
			activation="tanh",
			normalize=use_bn_wn,
			bn_momentum=bn_momentum,
			bn_epsilon=bn_epsilon,
		)
		self.mean_head = Linear(self.trunk.out_features, act_dim, rng)
		self.log_std_head = Linear(self.trunk.out_features, act_dim, rng)
		self.log_std_head.weight.assign(0.1 * self.log_std_head.weight.data)
		self.log_std_head.bias.assign(np.full((1, act_dim), np.log(prior_std)))

	@classmethod
	def from_config(cls, obs_dim, act_dim, cfg, rng) -> "MlpPolicy":
		return cls(
			obs_dim,
			act_dim,
			rng,
			hidden_width=cfg.hidden_width,
			prior_std=cfg.prior_std,
			use_bn_wn=cfg.use_bn_wn_actor,
			bn_momentum=cfg.bn_momentum,
			bn_epsilon=cfg.bn_epsilon,
		)

	def log_std(self, h: Tensor) -> Tensor:
		return self.log_std_head(stop_gradient(h)).clip(*LOG_STD_BOUNDS)

	def predict_dist(self, s, mode: str = "train") -> ActionDistribution:
		h = self.trunk(s, mode)
		variance = (2.0 * self.log_std(h)).exp()
		return ActionDistribution(self.mean_head(h), variance)

	def mean_parameters(self) -> list[Param]:
		return self.trunk.parameters() + self.mean_head.parameters()

	def variance_parameters(self) -> list[Param]:
		return self.log_std_head.parameters()


def build_policy(kind: str, obs_dim: int, act_dim: int, cfg, rng: np.random.Generator) -> Policy:
	"""Instantiate the policy class registered under `kind` in `hooks.policy_kinds`."""
	policy_cls = resolve("policy_kinds", kind)
	logger.debug("Building %s policy for obs_dim=%s act_dim=%s", kind, obs_dim, act_dim)
	return policy_cls.from_config(obs_dim, act_dim, cfg, rng)
