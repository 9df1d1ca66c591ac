# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Flat `key = value` experiment files.

	# point reach, two variants
	env = point-reach-v0
	variant = xqcfd, xqc-od
	seed = 0, 1, 2
	temperature = 0.001
"""

import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from xqcfd import hooks
from xqcfd.config.agent_config import PRESETS, AgentConfig, BcConfig
from xqcfd.exceptions import ConfigError
from xqcfd.utils import throw

BC_KEYS = {
	"bc_epochs": "epochs",
	"bc_batch_size": "batch_size",
	"bc_learning_rate": "learning_rate",
	"bc_variance_learning_rate": "variance_learning_rate",
	"critic_pretrain_steps": "critic_pretrain_steps",
}
LIST_KEYS = {"variant": str, "seed": int, "temperature": float, "demo_counts": int}
EXPERIMENT_KEYS = {"env": str, "out": str, "demos": str, "n_demos": int, "preset": str, "threads": int}
TRUE_WORDS = ("true", "yes", "on", "1")
FALSE_WORDS = ("false", "no", "off", "0")


@dataclass
class ExperimentConfig:
	env: str = "point-reach-v0"
	variants: list[str] = field(default_factory=lambda: ["xqcfd"])
	seeds: list[int] = field(default_factory=lambda: [0])
	agent: AgentConfig = field(default_factory=AgentConfig)
	out: str = "runs"
	demos: str | None = None
	n_demos: int = 50
	temperatures: list[float] = field(default_factory=list)
	demo_counts: list[int] = field(default_factory=list)
	threads: int | None = None

	def __post_init__(self):
		if not self.variants:
			throw("At least one variant is required", ConfigError)
		if not self.seeds:
			throw("At least one seed is required", ConfigError)
		if self.env not in hooks.environments:
			throw("Unknown environment {0}".format(self.env), ConfigError)
		for variant in self.variants:
			# validates the variant name
			self.agent.with_overrides(variant=variant)

	@property
	def out_dir(self) -> Path:
		return Path(self.out)

	def demo_path(self) -> Path:
		if self.demos:
			return Path(self.demos)
		return self.out_dir / f"{self.env}_demos.txt"


def load_config(path) -> ExperimentConfig:
	try:
		text = Path(path).read_text(encoding="utf-8")
	except OSError as e:
		throw("Cannot read config {0}: {1}".format(path, e), ConfigError)
	return parse_config(text)


def parse_config(text: str) -> ExperimentConfig:
	"""Parse a flat experiment file. Unknown or duplicate keys and bad values raise `ConfigError`."""
	entries = {}
	for lineno, raw in enumerate(text.splitlines(), start=1):
		line = raw.split("#", 1)[0].strip()
		if not line:
			continue
		key, sep, value = line.partition("=")
		key, value = key.strip(), value.strip()
		if not sep or not key:
			throw("line {0}: expected `key = value`".format(lineno), ConfigError)
		if key in entries:
			throw("line {0}: duplicate key {1}".format(lineno, key), ConfigError)
		entries[key] = (lineno, value)

	agent_types = typing.get_type_hints(AgentConfig)
	bc_types = typing.get_type_hints(BcConfig)
	preset = entries.pop("preset", (0, "desk"))
	if preset[1] not in PRESETS:
		throw("line {0}: unknown preset {1}. Known: {2}".format(preset[0], preset[1], ", ".join(PRESETS)), ConfigError)
	agent_values, bc_values, experiment = {}, {}, {}

	for key, (lineno, value) in entries.items():
		if key in LIST_KEYS:
			experiment[key] = [_coerce(item, LIST_KEYS[key], key, lineno) for item in _split(value)]
		elif key in EXPERIMENT_KEYS:
			experiment[key] = _coerce(value, EXPERIMENT_KEYS[key], key, lineno)
		elif key in BC_KEYS:
			name = BC_KEYS[key]
			bc_values[name] = _coerce(value, bc_types[name], key, lineno)
		elif key in agent_types and key not in ("variant", "seed", "bc"):
			agent_values[key] = _coerce(value, agent_types[key], key, lineno)
		else:
			throw("line {0}: unknown key {1}".format(lineno, key), ConfigError)

	temperatures = experiment.pop("temperature", [])
	if len(temperatures) == 1:
		agent_values["temperature"] = temperatures[0]
		temperatures = []

	agent = AgentConfig.preset(preset[1], **agent_values)
	if bc_values:
		agent = replace(agent, bc=replace(agent.bc, **bc_values))

	return ExperimentConfig(
		env=experiment.get("env", "point-reach-v0"),
		variants=experiment.get("variant", ["xqcfd"]),
		seeds=experiment.get("seed", [0]),
		agent=agent,
		out=experiment.get("out", "runs"),
		demos=experiment.get("demos"),
		n_demos=experiment.get("n_demos", 50),
		temperatures=temperatures,
		demo_counts=experiment.get("demo_counts", []),
		threads=experiment.get("threads"),
	)


def _split(value: str) -> list[str]:
	items = [item.strip() for item in value.split(",")]
	return [item for item in items if item]


def _coerce(value: str, kind, key: str, lineno: int):
	origin_args = typing.get_args(kind)
	if origin_args and type(None) in origin_args:
		if value.lower() == "none":
			return None
		kind = next(arg for arg in origin_args if arg is not type(None))
	try:
		if kind is bool:
			lowered = value.lower()
			if lowered in TRUE_WORDS:
				return True
			if lowered in FALSE_WORDS:
				return False
			raise ValueError(value)
		if kind is int:
			return int(value.replace("_", ""))
		if kind is float:
			return float(value)
		if kind is str:
			if not value:
				raise ValueError(value)
			return value
	except ValueError:
		throw("line {0}: {1} expects {2}, got {3!r}".format(lineno, key, kind.__name__, value), ConfigError)
	throw("line {0}: unsupported type for {1}".format(lineno, key), ConfigError)
