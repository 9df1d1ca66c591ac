# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

"""Reverse-mode differentiation over dense fp64 arrays.

A `Tape` records every operation whose inputs live on it. Parameters enter the
tape through `Tape.param`; everything else is a constant. Arrays are scalars or
2-D matrices, binary elementwise operations broadcast scalars, row vectors and
column vectors against matrices.

	with Tape(watch=policy.parameters()) as tape:
		loss = (x @ w.T).tanh().sum()
		grads = tape.backward(loss)
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from xqcfd.exceptions import NonFiniteError, ShapeError, TapeError
from xqcfd.utils import throw

OP_KINDS = frozenset(
	{
		"add",
		"sub",
		"mul",
		"div",
		"neg",
		"matmul",
		"transpose",
		"tanh",
		"exp",
		"log",
		"sin",
		"cos",
		"square",
		"sqrt",
		"relu",
		"softplus",
		"sum",
		"mean",
		"broadcast",
		"concat-rows",
		"concat-cols",
		"interleave-cols",
		"slice-rows",
		"slice-cols",
		"clip",
		"softmax-rows",
		"log-softmax-rows",
	}
)

_local = threading.local()


def _tape_stack() -> list:
	if not hasattr(_local, "stack"):
		_local.stack = []
	return _local.stack


def current_tape() -> "Tape | None":
	stack = _tape_stack()
	return stack[-1] if stack else None


@dataclass(eq=False)
class Param:
	"""A trainable array together with its Adam moments."""

	name: str
	data: np.ndarray
	m: np.ndarray = field(default=None, repr=False)
	v: np.ndarray = field(default=None, repr=False)
	step: int = 0

	def __post_init__(self):
		self.data = _as_array(self.data)
		if self.m is None:
			self.m = np.zeros_like(self.data)
		if self.v is None:
			self.v = np.zeros_like(self.data)

	@property
	def shape(self) -> tuple:
		return self.data.shape

	def assign(self, values) -> None:
		values = _as_array(values)
		if values.shape != self.data.shape:
			throw(
				"Cannot assign shape {0} to parameter {1} of shape {2}".format(
					values.shape, self.name, self.data.shape
				),
				ShapeError,
			)
		self.data = values.copy()


class Tensor:
	"""A value on (or off) a tape. `node` is None for constants."""

	__slots__ = ("values", "node", "tape")
	__array_ufunc__ = None

	def __init__(self, values, node: int = None, tape: "Tape" = None):
		self.values = _as_array(values)
		self.node = node
		self.tape = tape

	def __repr__(self):
		return f"Tensor(shape={self.shape}, node={self.node})"

	@property
	def shape(self) -> tuple:
		return self.values.shape

	@property
	def size(self) -> int:
		return self.values.size

	@property
	def T(self) -> "Tensor":
		return forward_op("transpose", self)

	def item(self) -> float:
		return float(self.values.reshape(-1)[0])

	def numpy(self) -> np.ndarray:
		return self.values.copy()

	def __add__(self, other):
		return forward_op("add", self, other)

	def __radd__(self, other):
		return forward_op("add", other, self)

	def __sub__(self, other):
		return forward_op("sub", self, other)

	def __rsub__(self, other):
		return forward_op("sub", other, self)

	def __mul__(self, other):
		return forward_op("mul", self, other)

	def __rmul__(self, other):
		return forward_op("mul", other, self)

	def __truediv__(self, other):
		return forward_op("div", self, other)

	def __rtruediv__(self, other):
		return forward_op("div", other, self)

	def __neg__(self):
		return forward_op("neg", self)

	def __matmul__(self, other):
		return forward_op("matmul", self, other)

	def __rmatmul__(self, other):
		return forward_op("matmul", other, self)

	def tanh(self):
		return forward_op("tanh", self)

	def exp(self):
		return forward_op("exp", self)

	def log(self):
		return forward_op("log", self)

	def sin(self):
		return forward_op("sin", self)

	def cos(self):
		return forward_op("cos", self)

	def square(self):
		return forward_op("square", self)

	def sqrt(self):
		return forward_op("sqrt", self)

	def relu(self):
		return forward_op("relu", self)

	def softplus(self):
		return forward_op("softplus", self)

	def sum(self, axis: int = None):
		return forward_op("sum", self, axis=axis)

	def mean(self, axis: int = None):
		return forward_op("mean", self, axis=axis)

	def clip(self, lo: float, hi: float):
		return forward_op("clip", self, lo=lo, hi=hi)

	def broadcast_to(self, shape: tuple):
		return forward_op("broadcast", self, shape=tuple(shape))

	def rows(self, start: int, stop: int):
		return forward_op("slice-rows", self, start=start, stop=stop)

	def cols(self, start: int, stop: int):
		return forward_op("slice-cols", self, start=start, stop=stop)

	def softmax_rows(self):
		return forward_op("softmax-rows", self)

	def log_softmax_rows(self):
		return forward_op("log-softmax-rows", self)


@dataclass
class _Node:
	parents: tuple
	backward: Callable | None


class Tape:
	"""Ordered record of operations. Consumed by a single `backward` call."""

	def __init__(self, watch: Iterable[Param] = None):
		self._watch = None if watch is None else {id(p) for p in watch}
		self._nodes: list[_Node] = []
		self._leaves: dict[int, tuple[int, Param]] = {}
		self.consumed = False

	def __enter__(self) -> "Tape":
		_tape_stack().append(self)
		return self

	def __exit__(self, *exc_info):
		stack = _tape_stack()
		if stack and stack[-1] is self:
			stack.pop()

	def __len__(self):
		return len(self._nodes)

	def watches(self, param: Param) -> bool:
		return self._watch is None or id(param) in self._watch

	def param(self, param: Param) -> Tensor:
		"""Leaf tensor for a watched parameter, a constant for any other."""
		if not self.watches(param):
			return Tensor(param.data)
		if id(param) in self._leaves:
			node, _ = self._leaves[id(param)]
			return Tensor(param.data, node=node, tape=self)
		self._check_open()
		node = len(self._nodes)
		self._nodes.append(_Node(parents=(), backward=None))
		self._leaves[id(param)] = (node, param)
		return Tensor(param.data, node=node, tape=self)

	def record(self, values: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
		"""Append an operation. `backward(grad)` returns one gradient (or None) per parent."""
		self._check_open()
		node = len(self._nodes)
		self._nodes.append(_Node(parents=tuple(p.node for p in parents), backward=backward))
		return Tensor(values, node=node, tape=self)

	def backward(self, loss: Tensor) -> dict[Param, np.ndarray]:
		"""Return d(loss)/d(param) for every watched parameter seen by this tape."""
		if self.consumed:
			throw("Tape already consumed by a previous backward pass", TapeError)
		if loss.size != 1:
			throw("Loss must be scalar, got shape {0}".format(loss.shape), ShapeError)
		if loss.tape is not self:
			throw("Loss was not recorded on this tape", TapeError)

		grads: list[np.ndarray | None] = [None] * len(self._nodes)
		grads[loss.node] = np.ones_like(loss.values)
		for node in range(loss.node, -1, -1):
			grad = grads[node]
			entry = self._nodes[node]
			if grad is None or entry.backward is None:
				continue
			for parent, parent_grad in zip(entry.parents, entry.backward(grad)):
				if parent is None or parent_grad is None:
					continue
				if grads[parent] is None:
					grads[parent] = parent_grad
				else:
					grads[parent] = grads[parent] + parent_grad

		self.consumed = True
		result = {}
		for node, param in self._leaves.values():
			grad = grads[node]
			result[param] = np.zeros_like(param.data) if grad is None else grad.reshape(param.shape)
		return result

	def _check_open(self):
		if self.consumed:
			throw("Cannot record on a consumed tape", TapeError)


def backward(loss: Tensor) -> dict[Param, np.ndarray]:
	"""Run the backward pass of the tape `loss` was recorded on."""
	if loss.tape is None:
		throw("Loss is a constant; nothing to differentiate", TapeError)
	return loss.tape.backward(loss)


def constant(values) -> Tensor:
	return Tensor(values)


def as_tensor(value) -> Tensor:
	"""Wrap arrays, floats and parameters. Parameters go through the active tape."""
	if isinstance(value, Tensor):
		return value
	if isinstance(value, Param):
		tape = current_tape()
		return tape.param(value) if tape is not None else Tensor(value.data)
	return Tensor(value)


def stop_gradient(x) -> Tensor:
	"""Same values as `x`, with no path back to its ancestors."""
	return Tensor(as_tensor(x).values.copy())


def concat_rows(tensors: Sequence) -> Tensor:
	return forward_op("concat-rows", *tensors)


def concat_cols(tensors: Sequence) -> Tensor:
	return forward_op("concat-cols", *tensors)


def interleave_cols(a, b) -> Tensor:
	"""Columns a0, b0, a1, b1, ... of two equally shaped matrices."""
	return forward_op("interleave-cols", a, b)


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
	"""Evaluate `kind` on `inputs` and record it when any input is on a tape."""
	if kind not in OP_KINDS:
		throw("Unknown op kind {0}".format(kind), TapeError)
	tensors = [as_tensor(x) for x in inputs]
	if not tensors:
		throw("{0} needs at least one input".format(kind), ShapeError)
	forward, local_grad = _OPS[kind]
	values = [t.values for t in tensors]
	out = forward(values, **attrs)
	check_finite(out, kind)

	tape = _common_tape(tensors)
	if tape is None:
		return Tensor(out)

	def _backward(grad):
		return local_grad(grad, out, values, **attrs)

	return tape.record(out, tensors, _backward)


def record_op(name: str, inputs: Sequence[Tensor], out: np.ndarray, local_grad: Callable) -> Tensor:
	"""Record a fused operation (batch norm, weight norm) with its own local gradient."""
	check_finite(out, name)
	tape = _common_tape(inputs)
	if tape is None:
		return Tensor(out)
	return tape.record(out, inputs, local_grad)


def check_finite(values: np.ndarray, where: str) -> None:
	if not np.all(np.isfinite(values)):
		throw("Non-finite output from {0}".format(where), NonFiniteError)


def _common_tape(tensors: Sequence[Tensor]) -> "Tape | None":
	tape = None
	for t in tensors:
		if t.tape is None or t.node is None:
			continue
		if tape is None:
			tape = t.tape
		elif t.tape is not tape:
			throw("Inputs recorded on different tapes", TapeError)
	return tape


def _as_array(values) -> np.ndarray:
	array = np.asarray(values, dtype=np.float64)
	if array.ndim == 1:
		array = array.reshape(1, -1)
	if array.ndim > 2:
		throw("Only scalars and 2-D arrays are supported, got {0}-D".format(array.ndim), ShapeError)
	return array


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
	if grad.shape == shape:
		return grad
	if len(shape) == 0:
		return np.asarray(grad.sum())
	axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
	return grad.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> tuple:
	try:
		return np.broadcast_shapes(a.shape, b.shape)
	except ValueError:
		throw("Incompatible shapes {0} and {1}".format(a.shape, b.shape), ShapeError)


# Forward / local-gradient pairs
# ------------------------------


def _add(values):
	a, b = values
	_broadcast_shape(a, b)
	return a + b


def _add_grad(grad, out, values):
	a, b = values
	return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


def _sub(values):
	a, b = values
	_broadcast_shape(a, b)
	return a - b


def _sub_grad(grad, out, values):
	a, b = values
	return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


def _mul(values):
	a, b = values
	_broadcast_shape(a, b)
	return a * b


def _mul_grad(grad, out, values):
	a, b = values
	return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


def _div(values):
	a, b = values
	_broadcast_shape(a, b)
	with np.errstate(divide="ignore", invalid="ignore"):
		return a / b


def _div_grad(grad, out, values):
	a, b = values
	return _unbroadcast(grad / b, a.shape), _unbroadcast(-grad * a / (b * b), b.shape)


def _matmul(values):
	a, b = values
	if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
		throw("Cannot multiply {0} by {1}".format(a.shape, b.shape), ShapeError)
	return a @ b


def _matmul_grad(grad, out, values):
	a, b = values
	return grad @ b.T, a.T @ grad


def _unary(fn):
	def _forward(values):
		(x,) = values
		with np.errstate(all="ignore"):
			return fn(x)

	return _forward


def _reduce(fn):
	def _forward(values, axis=None):
		(x,) = values
		if axis is None:
			return np.asarray(fn(x))
		return fn(x, axis=axis, keepdims=True)

	return _forward


def _sum_grad(grad, out, values, axis=None):
	(x,) = values
	return (np.broadcast_to(grad, x.shape).copy(),)


def _mean_grad(grad, out, values, axis=None):
	(x,) = values
	count = x.size if axis is None else x.shape[axis]
	return (np.broadcast_to(grad, x.shape) / count,)


def _broadcast(values, shape):
	(x,) = values
	try:
		return np.broadcast_to(x, shape).copy()
	except ValueError:
		throw("Cannot broadcast {0} to {1}".format(x.shape, shape), ShapeError)


def _broadcast_grad(grad, out, values, shape):
	(x,) = values
	return (_unbroadcast(grad, x.shape),)


def _concat(axis):
	def _forward(values):
		if any(v.ndim != 2 for v in values):
			throw("Concatenation needs 2-D inputs", ShapeError)
		try:
			return np.concatenate(values, axis=axis)
		except ValueError:
			throw("Cannot concatenate shapes {0}".format([v.shape for v in values]), ShapeError)

	def _grad(grad, out, values):
		bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
		return tuple(np.split(grad, bounds, axis=axis))

	return _forward, _grad


def _interleave(values):
	a, b = values
	if a.shape != b.shape or a.ndim != 2:
		throw("Cannot interleave {0} with {1}".format(a.shape, b.shape), ShapeError)
	out = np.empty((a.shape[0], 2 * a.shape[1]))
	out[:, 0::2] = a
	out[:, 1::2] = b
	return out


def _interleave_grad(grad, out, values):
	return grad[:, 0::2].copy(), grad[:, 1::2].copy()


def _slice(axis):
	def _forward(values, start, stop):
		(x,) = values
		if x.ndim != 2 or not 0 <= start < stop <= x.shape[axis]:
			throw("Slice [{0}:{1}] out of range for {2}".format(start, stop, x.shape), ShapeError)
		return x[start:stop, :].copy() if axis == 0 else x[:, start:stop].copy()

	def _grad(grad, out, values, start, stop):
		(x,) = values
		full = np.zeros_like(x)
		if axis == 0:
			full[start:stop, :] = grad
		else:
			full[:, start:stop] = grad
		return (full,)

	return _forward, _grad


def _clip(values, lo, hi):
	(x,) = values
	return np.clip(x, lo, hi)


def _clip_grad(grad, out, values, lo, hi):
	(x,) = values
	return (grad * ((x >= lo) & (x <= hi)),)


def _softmax(values):
	(x,) = values
	if x.ndim != 2:
		throw("softmax-rows needs a 2-D input", ShapeError)
	return np.exp(x - logsumexp(x, axis=1, keepdims=True))


def _softmax_grad(grad, out, values):
	return (out * (grad - np.sum(grad * out, axis=1, keepdims=True)),)


def _log_softmax(values):
	(x,) = values
	if x.ndim != 2:
		throw("log-softmax-rows needs a 2-D input", ShapeError)
	return x - logsumexp(x, axis=1, keepdims=True)


def _log_softmax_grad(grad, out, values):
	return (grad - np.exp(out) * np.sum(grad, axis=1, keepdims=True),)


_OPS = {
	"add": (_add, _add_grad),
	"sub": (_sub, _sub_grad),
	"mul": (_mul, _mul_grad),
	"div": (_div, _div_grad),
	"neg": (_unary(np.negative), lambda g, out, v: (-g,)),
	"matmul": (_matmul, _matmul_grad),
	"transpose": (_unary(lambda x: x.T.copy()), lambda g, out, v: (g.T.copy(),)),
	"tanh": (_unary(np.tanh), lambda g, out, v: (g * (1.0 - out * out),)),
	"exp": (_unary(np.exp), lambda g, out, v: (g * out,)),
	"log": (_unary(np.log), lambda g, out, v: (g / v[0],)),
	"sin": (_unary(np.sin), lambda g, out, v: (g * np.cos(v[0]),)),
	"cos": (_unary(np.cos), lambda g, out, v: (-g * np.sin(v[0]),)),
	"square": (_unary(np.square), lambda g, out, v: (2.0 * g * v[0],)),
	"sqrt": (_unary(np.sqrt), lambda g, out, v: (g / (2.0 * out),)),
	"relu": (_unary(lambda x: np.maximum(x, 0.0)), lambda g, out, v: (g * (v[0] > 0.0),)),
	"softplus": (_unary(lambda x: np.logaddexp(0.0, x)), lambda g, out, v: (g * expit(v[0]),)),
	"sum": (_reduce(np.sum), _sum_grad),
	"mean": (_reduce(np.mean), _mean_grad),
	"broadcast": (_broadcast, _broadcast_grad),
	"concat-rows": _concat(0),
	"concat-cols": _concat(1),
	"interleave-cols": (_interleave, _interleave_grad),
	"slice-rows": _slice(0),
	"slice-cols": _slice(1),
	"clip": (_clip, _clip_grad),
	"softmax-rows": (_softmax, _softmax_grad),
	"log-softmax-rows": (_log_softmax, _log_softmax_grad),
}
