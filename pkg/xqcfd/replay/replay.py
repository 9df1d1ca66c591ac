# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Online replay buffer, demonstration dataset and symmetric minibatches.

Demo files are plain text:

	# env=point-reach-v0 obs_dim=4 act_dim=2
	traj_id=0;s=[0.1,0.2,0.0,0.0];a=[0.5,-0.1];r=0.0;s_next=[...];done=0

Floats are written with `repr`, which round-trips every fp64 value.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xqcfd.exceptions import (
	ActionRangeError,
	DemoFormatError,
	EmptyDatasetError,
	NormalizationError,
	ShapeError,
)
from xqcfd.utils import checksum, get_logger, throw

logger = get_logger(__name__)

ONLINE = "online"
DEMO = "demo"

_HEADER = re.compile(r"^#\s*env=(?P<env>\S+)\s+obs_dim=(?P<obs>\d+)\s+act_dim=(?P<act>\d+)\s*$")
_RECORD_KEYS = ("traj_id", "s", "a", "r", "s_next", "done")


@dataclass(frozen=True, eq=False)
class Transition:
	state: np.ndarray
	action: np.ndarray
	reward: float
	next_state: np.ndarray
	done: bool

	def __post_init__(self):
		for name in ("state", "action", "next_state"):
			object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64).ravel())
		object.__setattr__(self, "reward", float(self.reward))
		object.__setattr__(self, "done", bool(self.done))
		if np.any(np.abs(self.action) > 1.0):
			throw("Action {0} outside [-1, 1]".format(self.action.tolist()), ActionRangeError)
		if self.state.shape != self.next_state.shape:
			throw("State and next state differ in shape", ShapeError)


@dataclass
class Batch:
	"""Column-stacked transitions; `sources` labels each row online or demo."""

	s: np.ndarray
	a: np.ndarray
	r: np.ndarray
	s_next: np.ndarray
	done: np.ndarray
	sources: np.ndarray

	@property
	def size(self) -> int:
		return self.s.shape[0]

	def concat(self, other: "Batch") -> "Batch":
		return Batch(
			*(np.concatenate([getattr(self, f), getattr(other, f)]) for f in ("s", "a", "r", "s_next", "done", "sources"))
		)


@dataclass(frozen=True)
class RewardNormalizer:
	"""Affine reward map r' = r * scale + shift."""

	scale: float = 1.0
	shift: float = 0.0

	def __post_init__(self):
		if not self.scale > 0.0:
			throw("Reward scale must be positive, got {0}".format(self.scale), NormalizationError)

	def __call__(self, r):
		return np.asarray(r, dtype=np.float64) * self.scale + self.shift


def fit_normalizer(demos: "DemoDataset") -> RewardNormalizer:
	"""Min-max map of demo rewards onto [0, 1]."""
	if len(demos) == 0:
		throw("Cannot fit reward statistics on an empty demo set", EmptyDatasetError)
	lo, hi = float(demos.r.min()), float(demos.r.max())
	if hi == lo:
		throw("Demo rewards are all {0}; the reward range is zero".format(lo), NormalizationError)
	scale = 1.0 / (hi - lo)
	return RewardNormalizer(scale=scale, shift=-lo * scale)


class ReplayBuffer:
	"""Ring buffer B of online transitions. Storage grows by doubling up to `capacity`."""

	def __init__(self, obs_dim: int, act_dim: int, capacity: int = 1_000_000):
		if capacity < 1:
			throw("Replay capacity must be positive", ShapeError)
		self.obs_dim = obs_dim
		self.act_dim = act_dim
		self.capacity = capacity
		self.cursor = 0
		self.size = 0
		self._allocate(min(capacity, 1024))

	def __len__(self):
		return self.size

	def push(self, t: Transition) -> None:
		if t.state.shape != (self.obs_dim,) or t.action.shape != (self.act_dim,):
			throw(
				"Transition dims ({0}, {1}) do not match buffer ({2}, {3})".format(
					t.state.size, t.action.size, self.obs_dim, self.act_dim
				),
				ShapeError,
			)
		if self.cursor == len(self._r) and len(self._r) < self.capacity:
			self._grow()
		i = self.cursor
		self._s[i], self._a[i], self._r[i], self._s_next[i], self._done[i] = (
			t.state,
			t.action,
			t.reward,
			t.next_state,
			t.done,
		)
		self.cursor = (i + 1) % self.capacity
		self.size = min(self.size + 1, self.capacity)

	def contents(self) -> list[Transition]:
		"""Stored transitions, oldest first."""
		start = self.cursor if self.size == self.capacity else 0
		order = [(start + k) % self.capacity for k in range(self.size)]
		return [Transition(self._s[i], self._a[i], self._r[i], self._s_next[i], self._done[i]) for i in order]

	def sample(self, n: int, rng: np.random.Generator, normalizer: RewardNormalizer = None) -> Batch:
		"""Uniform draw with replacement."""
		if self.size == 0:
			throw("Cannot sample from an empty replay buffer", EmptyDatasetError)
		index = rng.integers(0, self.size, size=n)
		r = self._r[index]
		return Batch(
			self._s[index],
			self._a[index],
			normalizer(r) if normalizer is not None else r.copy(),
			self._s_next[index],
			self._done[index],
			np.full(n, ONLINE),
		)

	def _allocate(self, rows: int):
		self._s = np.zeros((rows, self.obs_dim))
		self._a = np.zeros((rows, self.act_dim))
		self._r = np.zeros(rows)
		self._s_next = np.zeros((rows, self.obs_dim))
		self._done = np.zeros(rows, dtype=bool)

	def _grow(self):
		old = (self._s, self._a, self._r, self._s_next, self._done)
		self._allocate(min(2 * len(self._r), self.capacity))
		for new, values in zip((self._s, self._a, self._r, self._s_next, self._done), old):
			new[: len(values)] = values


@dataclass(eq=False)
class DemoDataset:
	"""Immutable set D of expert trajectories, each closed by a done transition."""

	env_id: str
	obs_dim: int
	act_dim: int
	trajectories: tuple = field(default_factory=tuple)

	def __post_init__(self):
		self.trajectories = tuple(tuple(traj) for traj in self.trajectories)
		for k, traj in enumerate(self.trajectories):
			if not traj or not traj[-1].done:
				throw("Trajectory {0} does not end with a done transition".format(k), DemoFormatError)
			for t in traj:
				if t.state.shape != (self.obs_dim,) or t.action.shape != (self.act_dim,):
					throw("Trajectory {0} has transitions of the wrong size".format(k), ShapeError)
		flat = [t for traj in self.trajectories for t in traj]
		self._arrays = {
			"s": _stack([t.state for t in flat], self.obs_dim),
			"a": _stack([t.action for t in flat], self.act_dim),
			"r": np.array([t.reward for t in flat], dtype=np.float64),
			"s_next": _stack([t.next_state for t in flat], self.obs_dim),
			"done": np.array([t.done for t in flat], dtype=bool),
			"traj_ids": np.array([k for k, traj in enumerate(self.trajectories) for _ in traj], dtype=np.int64),
		}
		for values in self._arrays.values():
			values.flags.writeable = False

	def __len__(self):
		return self._arrays["r"].size

	s = property(lambda self: self._arrays["s"])
	a = property(lambda self: self._arrays["a"])
	r = property(lambda self: self._arrays["r"])
	s_next = property(lambda self: self._arrays["s_next"])
	done = property(lambda self: self._arrays["done"])
	traj_ids = property(lambda self: self._arrays["traj_ids"])

	@property
	def trajectory_count(self) -> int:
		return len(self.trajectories)

	def subset(self, n_trajectories: int) -> "DemoDataset":
		"""The first `n_trajectories` trajectories."""
		if not 0 < n_trajectories <= self.trajectory_count:
			throw(
				"Cannot take {0} of {1} trajectories".format(n_trajectories, self.trajectory_count),
				EmptyDatasetError,
			)
		return DemoDataset(self.env_id, self.obs_dim, self.act_dim, self.trajectories[:n_trajectories])

	def sample(self, n: int, rng: np.random.Generator, normalizer: RewardNormalizer = None) -> Batch:
		"""Uniform draw of transitions with replacement."""
		if len(self) == 0:
			throw("Cannot sample from an empty demo set", EmptyDatasetError)
		index = rng.integers(0, len(self), size=n)
		r = self.r[index]
		return Batch(
			self.s[index],
			self.a[index],
			normalizer(r) if normalizer is not None else r.copy(),
			self.s_next[index],
			self.done[index],
			np.full(n, DEMO),
		)

	def checksum(self) -> str:
		return checksum(*self._arrays.values())

	def save(self, path) -> Path:
		path = Path(path)
		lines = ["# env={0} obs_dim={1} act_dim={2}".format(self.env_id, self.obs_dim, self.act_dim)]
		for k, traj in enumerate(self.trajectories):
			for t in traj:
				lines.append(
					"traj_id={0};s={1};a={2};r={3};s_next={4};done={5}".format(
						k, _format_list(t.state), _format_list(t.action), repr(t.reward), _format_list(t.next_state), int(t.done)
					)
				)
		try:
			path.parent.mkdir(parents=True, exist_ok=True)
			path.write_text("\n".join(lines) + "\n", encoding="utf-8")
		except OSError as e:
			throw("Cannot write demo file {0}: {1}".format(path, e), DemoFormatError)
		logger.info("Wrote %s demo trajectories to %s", self.trajectory_count, path)
		return path

	@classmethod
	def load(cls, path) -> "DemoDataset":
		path = Path(path)
		try:
			text = path.read_text(encoding="utf-8")
		except OSError as e:
			throw("Cannot read demo file {0}: {1}".format(path, e), DemoFormatError)
		lines = text.splitlines()
		header = _HEADER.match(lines[0]) if lines else None
		if header is None:
			throw("Line 1: expected '# env=<id> obs_dim=<n> act_dim=<m>'", DemoFormatError)
		env_id, obs_dim, act_dim = header["env"], int(header["obs"]), int(header["act"])

		trajectories: dict[int, list[Transition]] = {}
		for lineno, line in enumerate(lines[1:], start=2):
			if not line.strip():
				continue
			traj_id, transition = _parse_record(line, lineno, obs_dim, act_dim)
			trajectories.setdefault(traj_id, []).append(transition)
		return cls(env_id, obs_dim, act_dim, tuple(trajectories[k] for k in sorted(trajectories)))


def sample_symmetric(
	buffer: ReplayBuffer, demos: DemoDataset, batch_size: int, rng: np.random.Generator, normalizer=None
) -> Batch:
	"""Half the minibatch from the replay buffer, half from the demos, in that order."""
	if batch_size < 2 or batch_size % 2:
		throw("Symmetric sampling needs an even batch size, got {0}".format(batch_size), ShapeError)
	half = batch_size // 2
	return buffer.sample(half, rng, normalizer).concat(demos.sample(half, rng, normalizer))


def sample_online(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator, normalizer=None) -> Batch:
	return buffer.sample(batch_size, rng, normalizer)


def _stack(rows, width: int) -> np.ndarray:
	return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def _format_list(values) -> str:
	return "[" + ",".join(repr(float(v)) for v in values) + "]"


def _parse_record(line: str, lineno: int, obs_dim: int, act_dim: int) -> tuple[int, Transition]:
	fields = {}
	for part in line.split(";"):
		key, sep, value = part.partition("=")
		if not sep or key.strip() not in _RECORD_KEYS or key.strip() in fields:
			throw("Line {0}: malformed field '{1}'".format(lineno, part), DemoFormatError)
		fields[key.strip()] = value.strip()
	missing = [key for key in _RECORD_KEYS if key not in fields]
	if missing:
		throw("Line {0}: missing fields {1}".format(lineno, missing), DemoFormatError)

	try:
		traj_id = int(fields["traj_id"])
		s = _parse_list(fields["s"], obs_dim)
		a = _parse_list(fields["a"], act_dim)
		s_next = _parse_list(fields["s_next"], obs_dim)
		r = float(fields["r"])
		if fields["done"] not in ("0", "1"):
			raise ValueError("done must be 0 or 1")
		return traj_id, Transition(s, a, r, s_next, fields["done"] == "1")
	except (ValueError, ActionRangeError, ShapeError) as e:
		throw("Line {0}: {1}".format(lineno, e), DemoFormatError)


def _parse_list(text: str, width: int) -> np.ndarray:
	if not (text.startswith("[") and text.endswith("]")):
		raise ValueError("expected a bracketed list, got '{0}'".format(text))
	inner = text[1:-1].strip()
	values = [float(v) for v in inner.split(",")] if inner else []
	if len(values) != width:
		raise ValueError("expected {0} values, got {1}".format(width, len(values)))
	return np.array(values, dtype=np.float64)
