# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Online fine-tuning loop: BC prior, categorical critic pair and a KL (or entropy) regularized actor.

One `train_step` is one environment interaction followed by `utd_ratio` critic updates; the actor
is updated after every `policy_delay`-th critic update.
"""

import copy
import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from xqcfd.bc.bc import pretrain_critic, pretrain_policy
from xqcfd.config.agent_config import AgentConfig
from xqcfd.critic.critic import CriticPair, critic_update
from xqcfd.critic.utils import AtomSupport, expected_value, pessimistic_mask
from xqcfd.diffmath.diffmath import Param, Tape, Tensor, as_tensor, backward, constant
from xqcfd.diffmath.optim import Adam
from xqcfd.exceptions import CheckpointError, ConfigError, EmptyDatasetError
from xqcfd.policy.policy import Policy, build_policy, kl_latent, log_prob, sample
from xqcfd.replay.replay import ReplayBuffer, RewardNormalizer, Transition, fit_normalizer, sample_online, sample_symmetric
from xqcfd.utils import get_logger, throw

logger = get_logger(__name__)

METRIC_COLUMNS = (
	"step",
	"variant",
	"seed",
	"success_rate",
	"actor_loss",
	"critic_loss",
	"kl_to_prior",
	"temperature",
	"buffer_size",
)


@dataclass
class ActorObjective:
	loss: Tensor
	q: float
	kl: float
	entropy: float


def actor_objective(
	policy: Policy,
	prior: Policy | None,
	critics,
	support: AtomSupport,
	states,
	alpha: float,
	rng: np.random.Generator,
	use_kl: bool = True,
) -> ActorObjective:
	"""-E[Q(s, a)] + alpha KL(pi || prior), or + alpha E[log pi(a|s)] without a prior term.

	Q is the expected value of the pessimistic critic of the pair, evaluated with running
	statistics. Critic parameters enter as constants unless the active tape watches them.
	"""
	states = np.atleast_2d(np.asarray(states, dtype=np.float64))
	dist = policy.predict_dist(states, mode="train")
	action, latent = sample(dist, rng)
	critic_a, critic_b = critics.online
	q_a = expected_value(critic_a.probs(states, action, mode="eval"), support)
	q_b = expected_value(critic_b.probs(states, action, mode="eval"), support)
	mask = pessimistic_mask(q_a.values, q_b.values)
	q = q_a * constant(mask) + q_b * constant(1.0 - mask)

	logp = log_prob(dist, latent)
	entropy = float(-logp.values.mean())
	kl = math.nan
	if prior is not None:
		kl_rows = kl_latent(dist, prior.predict_dist(states, mode="batch"))
		kl = float(kl_rows.values.mean())

	loss = -q.mean()
	if use_kl:
		if prior is None:
			throw("The KL-regularized actor needs a prior policy", ConfigError)
		if alpha != 0.0:
			loss = loss + alpha * kl_rows.mean()
	elif alpha != 0.0:
		loss = loss + alpha * logp.mean()
	return ActorObjective(loss, float(q.values.mean()), kl, entropy)


class XqcfdAgent:
	"""Policy, frozen prior, critic pair, replay buffer and demonstrations of one run."""

	def __init__(self, cfg: AgentConfig, env, demos=None):
		cfg = cfg.resolved()
		needs_demos = cfg.pretrain_bc or cfg.use_offline_data
		if needs_demos and (demos is None or len(demos) == 0):
			throw("Variant {0} needs demonstrations".format(cfg.variant), EmptyDatasetError)
		if cfg.auto_temperature and cfg.temperature <= 0.0:
			throw("Auto-tuned temperature needs a positive starting value", ConfigError)

		self.cfg = cfg
		self.env = env
		self.demos = demos if needs_demos else None
		self.gamma = cfg.gamma if cfg.gamma is not None else env.discount
		self.support = AtomSupport.for_discount(self.gamma, cfg.atom_count)
		streams = np.random.SeedSequence(cfg.seed).spawn(4)
		init_rng, self.rng, self.env_rng, self.eval_rng = (np.random.default_rng(s) for s in streams)

		obs_dim, act_dim = env.spec.obs_dim, env.spec.act_dim
		self.act_dim = act_dim
		self.policy = build_policy(cfg.policy_kind, obs_dim, act_dim, cfg, init_rng)
		self.prior = None
		self.critics = CriticPair.from_config(obs_dim, act_dim, cfg, init_rng)
		self.buffer = ReplayBuffer(obs_dim, act_dim, cfg.buffer_capacity)
		self.normalizer = fit_normalizer(self.demos) if self.demos is not None else RewardNormalizer()

		self.actor_optimizer = Adam(self.policy.parameters(), lr=cfg.learning_rate)
		self.critic_optimizer = Adam(self.critics.parameters(), lr=cfg.learning_rate)
		self.log_alpha = Param("log_alpha", [[math.log(cfg.temperature) if cfg.auto_temperature else 0.0]])
		self.alpha_optimizer = Adam([self.log_alpha], lr=cfg.learning_rate)
		self.target_entropy = cfg.target_entropy if cfg.target_entropy is not None else act_dim / 2.0

		self.state = None
		self.env_steps = 0
		self.critic_updates = 0
		self.actor_updates = 0

	@property
	def temperature(self) -> float:
		if not self.cfg.auto_temperature:
			return self.cfg.temperature
		return float(np.exp(self.log_alpha.data.item()))

	def pretrain(self) -> dict:
		"""BC on the demos, then critic pretraining under the BC policy. No-op for scratch variants."""
		if not self.cfg.pretrain_bc:
			return {}
		self.policy, self.prior, bc_history = pretrain_policy(self.policy, self.demos, self.cfg.bc, self.rng)
		critic_history = pretrain_critic(
			self.critics,
			self.demos,
			self.policy,
			self.support,
			self.gamma,
			self.cfg.bc.critic_pretrain_steps,
			self.rng,
			optimizer=self.critic_optimizer,
			batch_size=self.cfg.batch_size,
			normalizer=self.normalizer,
			use_target_network=self.cfg.use_target_network,
		)
		# online fine-tuning starts from fresh Adam moments
		for p in self.policy.parameters():
			p.m, p.v, p.step = np.zeros_like(p.data), np.zeros_like(p.data), 0
		return {
			"bc_loss": bc_history[-1] if bc_history else math.nan,
			"critic_loss": critic_history[-1] if critic_history else math.nan,
		}

	def sample_batch(self, rng: np.random.Generator = None):
		rng = rng or self.rng
		if self.cfg.use_offline_data:
			return sample_symmetric(self.buffer, self.demos, self.cfg.batch_size, rng, self.normalizer)
		return sample_online(self.buffer, self.cfg.batch_size, rng, self.normalizer)

	def actor_loss(self, batch, rng: np.random.Generator = None) -> ActorObjective:
		"""Actor objective on the states of `batch`; record under a tape to differentiate it."""
		return actor_objective(
			self.policy,
			self.prior,
			self.critics,
			self.support,
			batch.s,
			self.temperature,
			rng or self.rng,
			use_kl=self.cfg.use_kl,
		)

	def actor_update(self, batch) -> ActorObjective:
		with Tape(watch=self.policy.parameters()):
			objective = self.actor_loss(batch)
			grads = backward(objective.loss)
		self.actor_optimizer.step(grads)
		if self.cfg.auto_temperature:
			self.temperature_update(objective.entropy)
		self.actor_updates += 1
		logger.debug("actor loss %.6f kl %.6f entropy %.4f", objective.loss.item(), objective.kl, objective.entropy)
		return objective

	def temperature_update(self, entropy: float) -> float:
		"""One Adam step on log alpha against the target entropy; returns the gradient."""
		with Tape(watch=[self.log_alpha]):
			loss = (as_tensor(self.log_alpha) * (entropy - self.target_entropy)).sum()
			grads = backward(loss)
		self.alpha_optimizer.step(grads)
		return float(grads[self.log_alpha].item())

	def act(self, state) -> np.ndarray:
		if self.env_steps < self.cfg.warmup_steps:
			return self.rng.uniform(-1.0, 1.0, self.act_dim)
		return self.policy.act(state, self.rng).ravel()

	def train_step(self) -> dict:
		if self.state is None:
			self.state = self.env.reset(self.env_rng)
		action = self.act(self.state)
		next_state, reward, done = self.env.step(action)
		self.buffer.push(Transition(self.state, action, reward, next_state, done))
		self.state = None if done else next_state
		self.env_steps += 1

		critic_losses, objective = [], None
		for _ in range(self.cfg.utd_ratio):
			batch = self.sample_batch()
			critic_losses.append(
				critic_update(
					self.critics,
					self.critic_optimizer,
					batch,
					self.policy,
					self.support,
					self.gamma,
					self.rng,
					use_target_network=self.cfg.use_target_network,
				)
			)
			self.critic_updates += 1
			if self.critic_updates % self.cfg.policy_delay == 0:
				objective = self.actor_update(batch)

		return {
			"actor_loss": objective.loss.item() if objective is not None else math.nan,
			"critic_loss": float(np.mean(critic_losses)),
			"kl_to_prior": objective.kl if objective is not None else math.nan,
			"entropy": objective.entropy if objective is not None else math.nan,
			"temperature": self.temperature,
			"buffer_size": len(self.buffer),
			"demo_size": len(self.demos) if self.demos is not None else 0,
			"actor_updates": self.actor_updates,
			"critic_updates": self.critic_updates,
		}

	def save_checkpoints(self, directory) -> None:
		directory = Path(directory)
		try:
			directory.mkdir(parents=True, exist_ok=True)
		except OSError as e:
			throw("Cannot create checkpoint directory {0}: {1}".format(directory, e), CheckpointError)
		self.policy.save(directory / "policy.xqcp")
		self.critics.save(directory / "critic.xqcc")
		if self.prior is not None:
			self.prior.save(directory / "prior.xqcp")


def eval_policy(policy, env, episodes: int, rng: np.random.Generator, threads: int = 1) -> float:
	"""Fraction of deterministic-action episodes that reach the goal.

	Each episode runs on its own copy of the environment and of the policy, seeded from a child of
	one draw of `rng`, so the result does not depend on `threads`.
	"""
	if episodes < 1:
		throw("Evaluation needs at least one episode", ConfigError)
	seeds = np.random.SeedSequence(int(rng.integers(2**63))).spawn(episodes)

	def _episode(seed) -> bool:
		episode_rng = np.random.default_rng(seed)
		episode_env, snapshot = copy.deepcopy(env), policy.clone()
		state, done, reward = episode_env.reset(episode_rng), False, 0.0
		while not done:
			action = snapshot.act(state, episode_rng, deterministic=True).ravel()
			state, reward, done = episode_env.step(action)
		return reward == 1.0

	if threads > 1:
		with ThreadPoolExecutor(max_workers=threads) as pool:
			results = list(pool.map(_episode, seeds))
	else:
		results = [_episode(seed) for seed in seeds]
	return sum(results) / episodes


def run(cfg: AgentConfig, env, demos=None, out=None, checkpoint_dir=None, label: str = None) -> list[dict]:
	"""Pretrain per variant, then `total_steps` train steps with an evaluation row every `eval_every`.

	The first row (step 0) evaluates the policy before any online interaction. `label` replaces the
	variant name in the rows (sweep runs).
	"""
	agent = XqcfdAgent(cfg, env, demos)
	cfg, eval_rng = agent.cfg, agent.eval_rng
	agent.pretrain()

	window = {"actor_loss": [], "critic_loss": [], "kl_to_prior": []}
	rows = [_metrics_row(agent, 0, eval_policy(agent.policy, env, cfg.eval_episodes, eval_rng, cfg.eval_threads), window, label)]
	_log_row(rows[-1])
	for step in range(1, cfg.total_steps + 1):
		metrics = agent.train_step()
		for key in window:
			if not math.isnan(metrics[key]):
				window[key].append(metrics[key])
		if step % cfg.eval_every == 0:
			success = eval_policy(agent.policy, env, cfg.eval_episodes, eval_rng, cfg.eval_threads)
			rows.append(_metrics_row(agent, step, success, window, label))
			_log_row(rows[-1])
			window = {key: [] for key in window}

	if out is not None:
		write_metrics(rows, out)
	if checkpoint_dir is not None:
		agent.save_checkpoints(checkpoint_dir)
	return rows


def _metrics_row(agent: XqcfdAgent, step: int, success: float, window: dict, label: str = None) -> dict:
	def _mean(values):
		return float(np.mean(values)) if values else math.nan

	return {
		"step": step,
		"variant": label or agent.cfg.variant,
		"seed": agent.cfg.seed,
		"success_rate": float(success),
		"actor_loss": _mean(window["actor_loss"]),
		"critic_loss": _mean(window["critic_loss"]),
		"kl_to_prior": _mean(window["kl_to_prior"]),
		"temperature": agent.temperature,
		"buffer_size": len(agent.buffer),
	}


def _log_row(row: dict) -> None:
	logger.info(
		"%s seed %s step %s: success %.3f, critic %.4f, actor %.4f, kl %.4g, alpha %.4g",
		row["variant"],
		row["seed"],
		row["step"],
		row["success_rate"],
		row["critic_loss"],
		row["actor_loss"],
		row["kl_to_prior"],
		row["temperature"],
	)


def format_metrics(rows: list[dict]) -> str:
	"""CSV text of metric rows; floats printed with repr so the bytes are reproducible."""
	buffer = io.StringIO()
	writer = csv.writer(buffer, lineterminator="\n")
	writer.writerow(METRIC_COLUMNS)
	for row in rows:
		writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in METRIC_COLUMNS])
	return buffer.getvalue()


def write_metrics(rows: list[dict], path) -> Path:
	path = Path(path)
	try:
		path.parent.mkdir(parents=True, exist_ok=True)
		path.write_text(format_metrics(rows), encoding="utf-8")
	except OSError as e:
		throw("Cannot write metrics {0}: {1}".format(path, e), CheckpointError)
	return path


def read_metrics(path) -> list[dict]:
	"""Metric rows back from a CSV written by `write_metrics`."""
	with open(path, encoding="utf-8", newline="") as f:
		rows = list(csv.DictReader(f))
	for row in rows:
		for key in METRIC_COLUMNS:
			if key in ("step", "seed", "buffer_size"):
				row[key] = int(row[key])
			elif key != "variant":
				row[key] = float(row[key])
	return rows
