# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

from dataclasses import dataclass, field

import numpy as np

from xqcfd.utils import checksum


@dataclass
class ScriptedExpert:
	"""Proportional controller through a list of waypoints, with clipped Gaussian action noise.

	The last waypoint is the goal. Earlier ones are dropped once the agent is within
	`advance_radius` of them.
	"""

	waypoints: list
	gain: float = 2.0
	noise_std: float = 0.05
	advance_radius: float = 0.15
	current: int = field(default=0)

	def reset(self) -> None:
		self.current = 0

	@property
	def target(self) -> np.ndarray:
		return np.asarray(self.waypoints[self.current], dtype=np.float64)

	def checksum(self) -> str:
		return checksum(np.asarray(self.waypoints, dtype=np.float64), np.array([self.gain, self.noise_std, self.current]))


def expert_action(expert: ScriptedExpert, state, rng: np.random.Generator = None) -> np.ndarray:
	"""k (waypoint - position) plus noise, clipped to [-1, 1]."""
	position = np.asarray(state, dtype=np.float64).ravel()[:2]
	while expert.current < len(expert.waypoints) - 1 and np.linalg.norm(position - expert.target) < expert.advance_radius:
		expert.current += 1
	action = expert.gain * (expert.target - position)
	if expert.noise_std > 0.0:
		action = action + expert.noise_std * rng.standard_normal(action.shape)
	return np.clip(action, -1.0, 1.0)


def point_reach_expert(noise_std: float = 0.05) -> ScriptedExpert:
	return ScriptedExpert([(0.8, 0.8)], noise_std=noise_std)


def obstructed_reach_expert(noise_std: float = 0.05) -> ScriptedExpert:
	"""Around the east end of the wall, then to the goal."""
	return ScriptedExpert([(0.45, 0.2), (0.8, 0.8)], noise_std=noise_std)
