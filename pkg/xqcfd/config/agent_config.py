# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

from dataclasses import asdict, dataclass, field, fields, replace

from xqcfd.exceptions import ConfigError
from xqcfd.utils import throw

VARIANTS = ("xqcfd", "xqc-bc", "xqc-od", "xqc-scratch", "maxent-sac")
POLICY_KINDS = ("hetstat", "mlp")

# variant: (pretrain_bc, use_offline_data, use_kl, auto_temperature, warmup_steps)
VARIANT_TABLE = {
	"xqcfd": (True, True, True, False, 0),
	"xqc-bc": (True, False, False, True, 0),
	"xqc-od": (False, True, False, True, 1000),
	"xqc-scratch": (False, False, False, True, 1000),
	"maxent-sac": (True, True, False, True, 0),
}


@dataclass(frozen=True)
class BcConfig:
	epochs: int = 200
	batch_size: int = 256
	learning_rate: float = 1e-3
	variance_learning_rate: float = 0.01
	critic_pretrain_steps: int = 5000

	def __post_init__(self):
		for f in fields(self):
			if getattr(self, f.name) <= 0:
				throw("bc {0} must be positive, got {1}".format(f.name, getattr(self, f.name)), ConfigError)


@dataclass(frozen=True)
class AgentConfig:
	"""Hyper-parameters of one training run.

	Switches left at None are filled from the variant in `resolved()`.
	"""

	variant: str = "xqcfd"
	seed: int = 0
	temperature: float = 0.01
	auto_temperature: bool | None = None
	target_entropy: float | None = None
	use_kl: bool | None = None
	pretrain_bc: bool | None = None
	use_offline_data: bool | None = None
	warmup_steps: int | None = None
	utd_ratio: int = 2
	policy_delay: int = 3
	polyak: float = 0.005
	learning_rate: float = 3e-4
	hidden_width: int = 64
	feature_dim: int = 128
	prior_std: float = 0.5
	batch_size: int = 256
	gamma: float | None = None
	atom_count: int = 101
	policy_kind: str = "hetstat"
	use_bn_wn_actor: bool = True
	use_target_network: bool = True
	bn_momentum: float = 0.01
	bn_epsilon: float = 1e-5
	buffer_capacity: int = 1_000_000
	total_steps: int = 20_000
	eval_every: int = 1000
	eval_episodes: int = 50
	eval_threads: int = 1
	bc: BcConfig = field(default_factory=BcConfig)

	def __post_init__(self):
		if self.variant not in VARIANTS:
			throw("Unknown variant {0}. Known: {1}".format(self.variant, ", ".join(VARIANTS)), ConfigError)
		if self.policy_kind not in POLICY_KINDS:
			throw("Unknown policy kind {0}".format(self.policy_kind), ConfigError)
		if self.utd_ratio < 1 or self.policy_delay < 1:
			throw("utd_ratio and policy_delay must be at least 1", ConfigError)
		if self.temperature < 0:
			throw("temperature must be non-negative, got {0}".format(self.temperature), ConfigError)
		if not 0.0 <= self.polyak <= 1.0:
			throw("polyak must lie in [0, 1], got {0}".format(self.polyak), ConfigError)
		if self.batch_size < 2 or self.batch_size % 2:
			throw("batch_size must be even and at least 2, got {0}".format(self.batch_size), ConfigError)
		if self.feature_dim < 2 or self.feature_dim % 2:
			throw("feature_dim must be even, got {0}".format(self.feature_dim), ConfigError)
		if self.atom_count < 2:
			throw("atom_count must be at least 2", ConfigError)
		if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
			throw("gamma must lie in [0, 1), got {0}".format(self.gamma), ConfigError)
		if self.prior_std <= 0:
			throw("prior_std must be positive", ConfigError)
		for name in ("hidden_width", "buffer_capacity", "eval_every", "eval_episodes", "eval_threads"):
			if getattr(self, name) < 1:
				throw("{0} must be at least 1".format(name), ConfigError)
		if self.total_steps < 0:
			throw("total_steps must be non-negative", ConfigError)

	@classmethod
	def preset(cls, name: str, **overrides) -> "AgentConfig":
		if name not in PRESETS:
			throw("Unknown preset {0}. Known: {1}".format(name, ", ".join(PRESETS)), ConfigError)
		return replace(cls(), **{**PRESETS[name], **overrides})

	def with_overrides(self, **overrides) -> "AgentConfig":
		unknown = set(overrides) - {f.name for f in fields(self)}
		if unknown:
			throw("Unknown AgentConfig fields: {0}".format(", ".join(sorted(unknown))), ConfigError)
		return replace(self, **overrides)

	def resolved(self) -> "AgentConfig":
		"""Copy with every variant-dependent switch filled in."""
		pretrain_bc, offline, use_kl, auto, warmup = VARIANT_TABLE[self.variant]
		use_kl = use_kl if self.use_kl is None else self.use_kl
		if self.auto_temperature is not None:
			auto = self.auto_temperature
		elif use_kl:
			auto = False
		elif self.variant == "xqcfd":
			# KL switched off on xqcfd: entropy term at the same fixed temperature
			auto = False
		pretrain_bc = pretrain_bc if self.pretrain_bc is None else self.pretrain_bc
		if use_kl and not pretrain_bc:
			throw("use_kl needs a BC prior; variant {0} does not pretrain".format(self.variant), ConfigError)
		return replace(
			self,
			pretrain_bc=pretrain_bc,
			use_offline_data=offline if self.use_offline_data is None else self.use_offline_data,
			use_kl=use_kl,
			auto_temperature=auto,
			warmup_steps=warmup if self.warmup_steps is None else self.warmup_steps,
		)

	def as_dict(self) -> dict:
		return asdict(self)


PRESETS = {
	"desk": {},
	"full": {
		"hidden_width": 512,
		"feature_dim": 512,
		"total_steps": 1_000_000,
		"eval_every": 10_000,
		"eval_episodes": 100,
	},
}
