# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Sparse-reward reaching tasks on the unit box.

The observation is [position, goal]. The reward is 1 on the step that ends within `goal_radius`
of the goal and 0 otherwise, and that step ends the episode.
"""

import copy
from dataclasses import dataclass

import numpy as np

from xqcfd.envs.expert import ScriptedExpert, expert_action
from xqcfd.exceptions import ActionRangeError, ConfigError, EnvironmentFault, ExpertFailure
from xqcfd.replay.replay import DemoDataset, Transition
from xqcfd.utils import get_logger, resolve, throw

logger = get_logger(__name__)

GOAL = (0.8, 0.8)
START_LOW, START_HIGH = -1.0, -0.6
WALL_X = (-0.3, 0.3)
WALL_Y = 0.2
WALL_GAP = 1e-3


@dataclass(frozen=True)
class EnvSpec:
	env_id: str
	obs_dim: int = 4
	act_dim: int = 2
	horizon: int = 100
	goal_radius: float = 0.1
	step_scale: float = 0.05

	def __post_init__(self):
		if self.horizon < 1:
			throw("Horizon must be at least 1, got {0}".format(self.horizon), ConfigError)
		if self.goal_radius <= 0.0:
			throw("Goal radius must be positive", ConfigError)


def discount_for_horizon(horizon: int) -> float:
	"""(T/5 - 1) / (T/5), clipped to [0.95, 0.995]."""
	if horizon < 1:
		throw("Horizon must be at least 1, got {0}".format(horizon), ConfigError)
	effective = horizon / 5.0
	return float(np.clip((effective - 1.0) / effective, 0.95, 0.995))


class ReachEnv:
	spec: EnvSpec

	def __init__(self):
		self.goal = np.array(GOAL)
		self.position = None
		self.steps = 0
		self.done = True

	@property
	def discount(self) -> float:
		return discount_for_horizon(self.spec.horizon)

	def observation(self) -> np.ndarray:
		return np.concatenate([self.position, self.goal])

	def reset(self, rng: np.random.Generator) -> np.ndarray:
		self.position = rng.uniform(START_LOW, START_HIGH, 2)
		self.steps = 0
		self.done = False
		return self.observation()

	def step(self, action) -> tuple[np.ndarray, float, bool]:
		if self.done:
			throw("step() called on a finished episode; call reset() first", EnvironmentFault)
		action = np.asarray(action, dtype=np.float64).ravel()
		if action.shape != (self.spec.act_dim,) or not np.all(np.isfinite(action)):
			throw("Expected {0} finite action values, got {1}".format(self.spec.act_dim, action), ActionRangeError)
		if np.any(np.abs(action) > 1.0):
			throw("Action {0} outside [-1, 1]".format(action.tolist()), ActionRangeError)

		target = np.clip(self.position + self.spec.step_scale * action, -1.0, 1.0)
		self.position = self.collide(self.position, target)
		self.steps += 1
		reward = 1.0 if np.linalg.norm(self.position - self.goal) < self.spec.goal_radius else 0.0
		self.done = reward == 1.0 or self.steps >= self.spec.horizon
		return self.observation(), reward, self.done

	def collide(self, start: np.ndarray, end: np.ndarray) -> np.ndarray:
		return end


class PointReach(ReachEnv):
	spec = EnvSpec("point-reach-v0")


class ObstructedReach(ReachEnv):
	"""PointReach with a wall segment across the direct path to the goal."""

	spec = EnvSpec("obstructed-reach-v0")

	def collide(self, start: np.ndarray, end: np.ndarray) -> np.ndarray:
		"""Truncate a move that would pass through the wall WALL_GAP short of the contact point."""
		dy = end[1] - start[1]
		crosses = (start[1] < WALL_Y <= end[1]) or (start[1] > WALL_Y >= end[1])
		if not crosses:
			return end
		x_at_wall = start[0] + (WALL_Y - start[1]) / dy * (end[0] - start[0])
		if not WALL_X[0] <= x_at_wall <= WALL_X[1]:
			return end
		move = end - start
		t = max((WALL_Y - start[1]) / dy - WALL_GAP / np.linalg.norm(move), 0.0)
		return start + t * move


def make_env(env_id: str) -> ReachEnv:
	return resolve("environments", env_id)()


def make_expert(env_id: str, **kwargs) -> ScriptedExpert:
	return resolve("experts", env_id)(**kwargs)


def generate_demos(env: ReachEnv, expert: ScriptedExpert, n: int, rng: np.random.Generator) -> DemoDataset:
	"""Roll out the expert until `n` successful episodes are recorded; failures are dropped."""
	if n < 1:
		throw("Need at least one demonstration, got {0}".format(n), ConfigError)
	trajectories, failures = [], 0
	while len(trajectories) < n:
		trajectory = rollout(env, lambda s: expert_action(expert, s, rng), rng, on_reset=expert.reset)
		if trajectory[-1].reward == 1.0:
			trajectories.append(trajectory)
			failures = 0
			continue
		failures += 1
		if failures >= 10 * n:
			throw(
				"Expert failed {0} consecutive episodes on {1}".format(failures, env.spec.env_id),
				ExpertFailure,
			)
	logger.info("Generated %s expert trajectories on %s", n, env.spec.env_id)
	return DemoDataset(env.spec.env_id, env.spec.obs_dim, env.spec.act_dim, trajectories)


def expert_success_rate(env: ReachEnv, expert: ScriptedExpert, episodes: int, rng: np.random.Generator) -> float:
	"""Fraction of noisy expert episodes that reach the goal."""
	expert = copy.deepcopy(expert)
	successes = 0
	for _ in range(episodes):
		trajectory = rollout(env, lambda s: expert_action(expert, s, rng), rng, on_reset=expert.reset)
		successes += trajectory[-1].reward == 1.0
	return successes / episodes


def rollout(env: ReachEnv, act, rng: np.random.Generator, on_reset=None) -> list[Transition]:
	"""One episode driven by `act(state) -> action`."""
	state = env.reset(rng)
	if on_reset is not None:
		on_reset()
	transitions, done = [], False
	while not done:
		action = np.asarray(act(state), dtype=np.float64).ravel()
		next_state, reward, done = env.step(action)
		transitions.append(Transition(state, action, reward, next_state, done))
		state = next_state
	return transitions


class ExpertPolicy:
	"""Noise-free scripted expert behind the policy `act` interface."""

	def __init__(self, expert: ScriptedExpert):
		self.expert = copy.deepcopy(expert)
		self.expert.noise_std = 0.0
		self.expert.reset()

	def act(self, s, rng: np.random.Generator = None, deterministic: bool = True) -> np.ndarray:
		return expert_action(self.expert, np.ravel(s), rng).reshape(1, -1)

	def clone(self) -> "ExpertPolicy":
		return ExpertPolicy(self.expert)

	def checksum(self) -> str:
		return self.expert.checksum()


class RandomPolicy:
	"""Uniform actions on [-1, 1], whatever the state."""

	def __init__(self, act_dim: int):
		self.act_dim = act_dim

	def act(self, s, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
		return rng.uniform(-1.0, 1.0, (1, self.act_dim))

	def clone(self) -> "RandomPolicy":
		return RandomPolicy(self.act_dim)

	def checksum(self) -> str:
		return "random-{0}".format(self.act_dim)
