# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

import copy
from dataclasses import dataclass, field

import numpy as np

from xqcfd.diffmath.diffmath import Param, Tensor, as_tensor, record_op
from xqcfd.diffmath.utils import orthogonal_init
from xqcfd.exceptions import BatchNormError, ShapeError, WeightNormError
from xqcfd.utils import checksum, throw

BN_MODES = ("train", "eval", "batch")
ACTIVATIONS = ("tanh", "relu")


@dataclass
class BatchNormState:
	"""Running statistics of one batch-norm layer."""

	features: int
	momentum: float = 0.01
	epsilon: float = 1e-5
	running_mean: np.ndarray = field(default=None, repr=False)
	running_var: np.ndarray = field(default=None, repr=False)
	updates: int = 0

	def __post_init__(self):
		if not 0.0 < self.momentum < 1.0:
			throw("Batch-norm momentum must lie in (0, 1), got {0}".format(self.momentum), BatchNormError)
		if self.epsilon <= 0.0:
			throw("Batch-norm epsilon must be positive", BatchNormError)
		if self.running_mean is None:
			self.running_mean = np.zeros((1, self.features))
		if self.running_var is None:
			self.running_var = np.ones((1, self.features))

	def update(self, mean: np.ndarray, var: np.ndarray) -> None:
		m = self.momentum
		self.running_mean = (1.0 - m) * self.running_mean + m * mean
		self.running_var = (1.0 - m) * self.running_var + m * var
		self.updates += 1


def batch_norm(x, state: BatchNormState, mode: str = "train") -> Tensor:
	"""Normalize the columns of `x`, before any scale and shift.

	`train` uses in-batch statistics and updates the running ones, `batch` uses in-batch
	statistics only, `eval` uses the running statistics.
	"""
	x = as_tensor(x)
	if mode not in BN_MODES:
		throw("Unknown batch-norm mode {0}".format(mode), BatchNormError)
	if len(x.shape) != 2 or x.shape[1] != state.features:
		throw("Batch norm over {0} features got shape {1}".format(state.features, x.shape), ShapeError)

	values = x.values
	if mode == "eval":
		std = np.sqrt(state.running_var + state.epsilon)
		out = (values - state.running_mean) / std
		return record_op("batch_norm", [x], out, lambda grad: (grad / std,))

	n = values.shape[0]
	if n < 2:
		throw("Batch norm needs at least 2 rows in {0} mode, got {1}".format(mode, n), BatchNormError)
	mean = values.mean(axis=0, keepdims=True)
	var = values.var(axis=0, keepdims=True)
	std = np.sqrt(var + state.epsilon)
	out = (values - mean) / std
	if mode == "train":
		state.update(mean, var)

	def _backward(grad):
		g_sum = grad.sum(axis=0, keepdims=True)
		gx_sum = (grad * out).sum(axis=0, keepdims=True)
		return ((n * grad - g_sum - out * gx_sum) / (n * std),)

	return record_op("batch_norm", [x], out, _backward)


def weight_norm_project(w) -> Tensor:
	"""Rows of `w` scaled to unit Euclidean norm. There is no gain."""
	w = as_tensor(w)
	if len(w.shape) != 2:
		throw("Weight norm needs a 2-D matrix, got shape {0}".format(w.shape), ShapeError)
	norms = np.linalg.norm(w.values, axis=1, keepdims=True)
	if np.any(norms == 0.0):
		throw("Weight norm of a zero row", WeightNormError)
	out = w.values / norms

	def _backward(grad):
		radial = np.sum(grad * out, axis=1, keepdims=True)
		return ((grad - out * radial) / norms,)

	return record_op("weight_norm", [w], out, _backward)


class Module:
	"""Container of parameters, batch-norm states and sub-modules, discovered by attribute.

	Names listed in `buffers` are fixed arrays saved with the module but never optimized.
	"""

	buffers: tuple = ()

	def named_parameters(self, prefix: str = "") -> list[tuple[str, Param]]:
		found = []
		for name, value in self._members():
			if isinstance(value, Param):
				found.append((prefix + name, value))
			elif isinstance(value, Module):
				found.extend(value.named_parameters(prefix + name + "."))
		return found

	def parameters(self) -> list[Param]:
		return [p for _, p in self.named_parameters()]

	def named_states(self, prefix: str = "") -> list[tuple[str, BatchNormState]]:
		found = []
		for name, value in self._members():
			if isinstance(value, BatchNormState):
				found.append((prefix + name, value))
			elif isinstance(value, Module):
				found.extend(value.named_states(prefix + name + "."))
		return found

	def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
		found = [(prefix + name, getattr(self, name)) for name in self.buffers]
		for name, value in self._members():
			if isinstance(value, Module):
				found.extend(value.named_buffers(prefix + name + "."))
		return found

	def named_arrays(self) -> list[tuple[str, np.ndarray]]:
		"""Parameters, fixed buffers and running statistics, in declaration order."""
		arrays = [(name, p.data) for name, p in self.named_parameters()]
		arrays.extend(self.named_buffers())
		for name, state in self.named_states():
			arrays.append((name + ".running_mean", state.running_mean))
			arrays.append((name + ".running_var", state.running_var))
		return arrays

	def load_named_arrays(self, arrays) -> None:
		arrays = dict(arrays)
		expected = [name for name, _ in self.named_arrays()]
		missing = [name for name in expected if name not in arrays]
		extra = [name for name in arrays if name not in expected]
		if missing or extra:
			throw("Array names do not match: missing {0}, unexpected {1}".format(missing, extra), ShapeError)
		for name, p in self.named_parameters():
			p.assign(arrays[name])
		for name, state in self.named_states():
			for stat in ("running_mean", "running_var"):
				values = np.asarray(arrays[f"{name}.{stat}"], dtype=np.float64).reshape(1, -1)
				if values.shape != getattr(state, stat).shape:
					throw("Shape mismatch for {0}.{1}".format(name, stat), ShapeError)
				setattr(state, stat, values.copy())
		for name, current in self.named_buffers():
			owner, attr = self._locate(name)
			values = np.array(arrays[name], dtype=np.float64).reshape(current.shape)
			values.flags.writeable = False
			setattr(owner, attr, values)

	def clone(self):
		return copy.deepcopy(self)

	def checksum(self) -> str:
		return checksum(*(array for _, array in self.named_arrays()))

	def _locate(self, dotted: str):
		owner = self
		*path, attr = dotted.split(".")
		for part in path:
			owner = owner[int(part)] if isinstance(owner, (list, tuple)) else getattr(owner, part)
		return owner, attr

	def _members(self):
		for name, value in vars(self).items():
			if isinstance(value, (list, tuple)):
				for i, item in enumerate(value):
					yield f"{name}.{i}", item
			else:
				yield name, value


class Linear(Module):
	def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias=True, weight_norm=False):
		self.weight = Param("weight", orthogonal_init(rng, out_features, in_features))
		self.bias = Param("bias", np.zeros((1, out_features))) if bias else None
		self.weight_norm = weight_norm

	def __call__(self, x) -> Tensor:
		w = weight_norm_project(self.weight) if self.weight_norm else as_tensor(self.weight)
		out = as_tensor(x) @ w.T
		return out + self.bias if self.bias is not None else out


class BatchNorm(Module):
	"""Batch normalization with a learnable scale and shift."""

	def __init__(self, features: int, momentum: float = 0.01, epsilon: float = 1e-5):
		self.state = BatchNormState(features, momentum=momentum, epsilon=epsilon)
		self.scale = Param("scale", np.ones((1, features)))
		self.shift = Param("shift", np.zeros((1, features)))

	def __call__(self, x, mode: str = "train") -> Tensor:
		return batch_norm(x, self.state, mode) * self.scale + self.shift


class Mlp(Module):
	"""Hidden stack of [Linear -> optional BatchNorm -> activation] blocks."""

	def __init__(
		self,
		in_features: int,
		widths: list[int],
		rng: np.random.Generator,
		activation: str = "tanh",
		normalize: bool = True,
		bn_momentum: float = 0.01,
		bn_epsilon: float = 1e-5,
	):
		if activation not in ACTIVATIONS:
			throw("Unknown activation {0}".format(activation), ShapeError)
		self.activation = activation
		self.normalize = normalize
		self.linears = []
		self.norms = []
		fan_in = in_features
		for width in widths:
			self.linears.append(Linear(fan_in, width, rng, bias=not normalize, weight_norm=normalize))
			if normalize:
				self.norms.append(BatchNorm(width, momentum=bn_momentum, epsilon=bn_epsilon))
			fan_in = width
		self.out_features = fan_in

	def __call__(self, x, mode: str = "train") -> Tensor:
		h = as_tensor(x)
		for i, linear in enumerate(self.linears):
			h = linear(h)
			if self.normalize:
				h = self.norms[i](h, mode)
			h = h.tanh() if self.activation == "tanh" else h.relu()
		return h
