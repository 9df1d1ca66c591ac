# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt


class XqcfdError(Exception):
	"""Base class for every error raised by xqcfd."""


class ShapeError(XqcfdError):
	pass


class NonFiniteError(XqcfdError):
	pass


class TapeError(XqcfdError):
	pass


class BatchNormError(XqcfdError):
	pass


class WeightNormError(XqcfdError):
	pass


class SupportError(XqcfdError):
	pass


class ConfigError(XqcfdError):
	pass


class UnknownIdentifierError(ConfigError):
	pass


class DemoFormatError(XqcfdError):
	pass


class EmptyDatasetError(XqcfdError):
	pass


class NormalizationError(XqcfdError):
	pass


class EnvironmentFault(XqcfdError):
	pass


class ActionRangeError(XqcfdError):
	pass


class ExpertFailure(XqcfdError):
	pass


class CheckpointError(XqcfdError):
	pass
