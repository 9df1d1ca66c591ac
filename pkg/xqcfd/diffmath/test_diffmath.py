# Copyright (c) 2025, xqcfd contributors
# See license.txt

import tempfile
import unittest
from pathlib import Path

import numpy as np
import numpy.testing as npt

from xqcfd.diffmath.checkpoint import decode_arrays, encode_arrays, load_checkpoint, save_checkpoint
from xqcfd.diffmath.diffmath import (
	Param,
	Tape,
	backward,
	concat_cols,
	constant,
	forward_op,
	interleave_cols,
	stop_gradient,
)
from xqcfd.diffmath.layers import BatchNorm, BatchNormState, Linear, Mlp, batch_norm, weight_norm_project
from xqcfd.diffmath.optim import Adam, adam_step, sgd_step
from xqcfd.diffmath.utils import gradient_check, orthogonal_init
from xqcfd.exceptions import (
	BatchNormError,
	CheckpointError,
	NonFiniteError,
	ShapeError,
	TapeError,
	WeightNormError,
)


def _weighted_sum(out, rng):
	"""Scalar loss with non-trivial gradients into every entry of `out`."""
	weights = rng.standard_normal(out.shape) if out.shape else rng.standard_normal()
	return (out * constant(weights)).sum()


def _op_cases(rng):
	"""(name, params, builder) triples, one random instance per op kind."""
	m, n = rng.integers(2, 5), rng.integers(2, 5)

	def p(*shape, lo=-1.0, hi=1.0):
		return Param("p", rng.uniform(lo, hi, shape))

	a, b = p(m, n), p(m, n)
	row, col, scalar = p(1, n), p(m, 1), Param("s", np.float64(rng.uniform(0.5, 1.5)))
	pos = p(m, n, lo=0.5, hi=2.0)
	away = Param("p", rng.choice([-1.0, 1.0], (m, n)) * rng.uniform(0.1, 1.0, (m, n)))
	right = p(n, 3)
	return [
		("add", [a, b], lambda: forward_op("add", a, b)),
		("add-row", [a, row], lambda: forward_op("add", a, row)),
		("sub-col", [a, col], lambda: forward_op("sub", a, col)),
		("mul-scalar", [a, scalar], lambda: forward_op("mul", a, scalar)),
		("mul", [a, b], lambda: forward_op("mul", a, b)),
		("div", [a, pos], lambda: forward_op("div", a, pos)),
		("neg", [a], lambda: forward_op("neg", a)),
		("matmul", [a, right], lambda: forward_op("matmul", a, right)),
		("transpose", [a], lambda: forward_op("transpose", a)),
		("tanh", [a], lambda: forward_op("tanh", a)),
		("exp", [a], lambda: forward_op("exp", a)),
		("log", [pos], lambda: forward_op("log", pos)),
		("sin", [a], lambda: forward_op("sin", a)),
		("cos", [a], lambda: forward_op("cos", a)),
		("square", [a], lambda: forward_op("square", a)),
		("sqrt", [pos], lambda: forward_op("sqrt", pos)),
		("relu", [away], lambda: forward_op("relu", away)),
		("softplus", [a], lambda: forward_op("softplus", a)),
		("sum", [a], lambda: forward_op("sum", a)),
		("sum-rows", [a], lambda: forward_op("sum", a, axis=0)),
		("mean-cols", [a], lambda: forward_op("mean", a, axis=1)),
		("mean", [a], lambda: forward_op("mean", a)),
		("broadcast", [row], lambda: forward_op("broadcast", row, shape=(m, n))),
		("concat-rows", [a, row], lambda: forward_op("concat-rows", a, row)),
		("concat-cols", [a, col], lambda: forward_op("concat-cols", a, col)),
		("interleave-cols", [a, b], lambda: forward_op("interleave-cols", a, b)),
		("slice-rows", [a], lambda: forward_op("slice-rows", a, start=1, stop=m)),
		("slice-cols", [a], lambda: forward_op("slice-cols", a, start=0, stop=n - 1)),
		("clip", [away], lambda: forward_op("clip", away, lo=-0.5, hi=0.5)),
		("softmax-rows", [a], lambda: forward_op("softmax-rows", a)),
		("log-softmax-rows", [a], lambda: forward_op("log-softmax-rows", a)),
	]


class UnitTestForwardOp(unittest.TestCase):
	def test_tanh_at_zero(self):
		x = Param("x", np.zeros((1, 1)))
		with Tape() as tape:
			y = forward_op("tanh", x).sum()
			grads = tape.backward(y)
		self.assertEqual(y.item(), 0.0)
		self.assertEqual(grads[x][0, 0], 1.0)

	def test_matmul_identity(self):
		a = np.arange(9.0).reshape(3, 3)
		npt.assert_array_equal(forward_op("matmul", a, np.eye(3)).values, a)

	def test_square(self):
		x = Param("x", np.full((1, 1), 3.0))
		with Tape() as tape:
			y = forward_op("square", x).sum()
			grads = tape.backward(y)
		self.assertEqual(y.item(), 9.0)
		self.assertEqual(grads[x][0, 0], 6.0)

	def test_shape_mismatch(self):
		with self.assertRaises(ShapeError):
			forward_op("add", np.ones((2, 3)), np.ones((3, 2)))
		with self.assertRaises(ShapeError):
			forward_op("matmul", np.ones((2, 3)), np.ones((2, 3)))

	def test_non_finite_output(self):
		with self.assertRaises(NonFiniteError):
			forward_op("log", np.full((1, 2), -1.0))
		with self.assertRaises(NonFiniteError):
			forward_op("div", np.ones((1, 1)), np.zeros((1, 1)))

	def test_unknown_op(self):
		with self.assertRaises(TapeError):
			forward_op("cosh", np.ones((1, 1)))

	def test_interleave(self):
		a = np.array([[1.0, 2.0]])
		b = np.array([[3.0, 4.0]])
		npt.assert_array_equal(interleave_cols(a, b).values, [[1.0, 3.0, 2.0, 4.0]])

	def test_every_op_matches_finite_differences(self):
		rng = np.random.default_rng(0)
		for _ in range(50):
			for name, params, build in _op_cases(rng):
				error = gradient_check(lambda: _weighted_sum(build(), np.random.default_rng(7)), params)
				self.assertLess(error, 1e-6, msg=name)


class UnitTestStopGradient(unittest.TestCase):
	def test_forward_identity_and_zero_upstream(self):
		rng = np.random.default_rng(1)
		x = Param("x", rng.standard_normal((3, 2)))
		w = Param("w", rng.standard_normal((3, 2)))
		with Tape() as tape:
			frozen = stop_gradient(forward_op("mul", x, 1.0))
			npt.assert_array_equal(frozen.values, x.data)
			loss = forward_op("mul", frozen, w).sum()
			grads = tape.backward(loss)
		self.assertTrue(np.all(grads[x] == 0.0))
		npt.assert_array_equal(grads[w], x.data)


class UnitTestTape(unittest.TestCase):
	def test_sum_gradient_is_ones(self):
		x = Param("x", np.arange(6.0).reshape(2, 3))
		with Tape() as tape:
			grads = backward(forward_op("sum", x))
		npt.assert_array_equal(grads[x], np.ones((2, 3)))
		self.assertTrue(tape.consumed)

	def test_consumed_tape(self):
		x = Param("x", np.ones((1, 2)))
		with Tape() as tape:
			loss = forward_op("sum", x)
			tape.backward(loss)
			with self.assertRaises(TapeError):
				tape.backward(loss)

	def test_loss_not_scalar(self):
		x = Param("x", np.ones((2, 2)))
		with Tape() as tape:
			with self.assertRaises(ShapeError):
				tape.backward(forward_op("tanh", x))

	def test_unwatched_param_is_constant(self):
		x = Param("x", np.ones((1, 2)))
		y = Param("y", np.ones((1, 2)))
		with Tape(watch=[x]) as tape:
			grads = tape.backward(forward_op("mul", x, y).sum())
		self.assertIn(x, grads)
		self.assertNotIn(y, grads)

	def test_tanh_of_linear_map(self):
		rng = np.random.default_rng(2)
		w = Param("w", 0.3 * rng.standard_normal((4, 3)))
		x = Param("x", rng.standard_normal((5, 3)))
		error = gradient_check(lambda: forward_op("matmul", x, forward_op("transpose", w)).tanh().sum(), [w, x])
		self.assertLess(error, 1e-6)

	def test_composite_graph(self):
		rng = np.random.default_rng(3)
		for _ in range(50):
			x = Param("x", rng.standard_normal((4, 3)))
			w = Param("w", rng.standard_normal((2, 3)))
			v = Param("v", rng.uniform(0.5, 1.5, (1, 2)))

			def loss():
				h = forward_op("matmul", x, weight_norm_project(w).T)
				h = concat_cols([h.tanh(), (h * v).softplus(), h.sin() * h.cos()])
				h = h.rows(0, 3).log_softmax_rows() + h.rows(1, 4).softmax_rows().sqrt()
				return (h.exp().mean(axis=0) / forward_op("sum", v)).square().sum() - h.clip(-2.0, 2.0).mean()

			self.assertLess(gradient_check(loss, [x, w, v]), 1e-6)

	def test_replay_is_deterministic(self):
		def run():
			rng = np.random.default_rng(4)
			w = Param("w", rng.standard_normal((3, 3)))
			x = Param("x", rng.standard_normal((5, 3)))
			with Tape() as tape:
				grads = tape.backward(forward_op("matmul", x, w).tanh().square().mean())
			return grads[w], grads[x]

		for first, second in zip(run(), run()):
			npt.assert_array_equal(first, second)


class UnitTestBatchNorm(unittest.TestCase):
	def test_constant_batch(self):
		out = batch_norm(np.full((4, 2), 3.0), BatchNormState(2), "train")
		npt.assert_allclose(out.values, 0.0, atol=1e-12)

	def test_unit_std_batch(self):
		out = batch_norm(np.array([[-1.0], [1.0]]), BatchNormState(1), "train")
		npt.assert_allclose(out.values, [[-1.0], [1.0]], atol=1e-5)

	def test_train_output_moments(self):
		rng = np.random.default_rng(5)
		x = 10.0 * rng.standard_normal((64, 3)) + 4.0
		out = batch_norm(x, BatchNormState(3), "train").values
		self.assertTrue(np.all(np.abs(out.mean(axis=0)) < 1e-10))
		npt.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)

	def test_eval_converges_to_batch_statistics(self):
		rng = np.random.default_rng(6)
		x = rng.normal(2.0, 3.0, (16, 2))
		state = BatchNormState(2)
		for _ in range(3000):
			train_out = batch_norm(x, state, "train").values
		npt.assert_allclose(batch_norm(x, state, "eval").values, train_out, atol=1e-6)

	def test_batch_mode_leaves_statistics(self):
		state = BatchNormState(2)
		batch_norm(np.random.default_rng(7).standard_normal((8, 2)), state, "batch")
		self.assertEqual(state.updates, 0)
		npt.assert_array_equal(state.running_var, np.ones((1, 2)))

	def test_small_batch(self):
		with self.assertRaises(BatchNormError):
			batch_norm(np.ones((1, 2)), BatchNormState(2), "train")

	def test_gradients(self):
		rng = np.random.default_rng(8)
		layer = BatchNorm(3)
		x = Param("x", rng.standard_normal((6, 3)))
		for mode in ("train", "batch", "eval"):
			c = rng.standard_normal((6, 3))
			error = gradient_check(lambda: (layer(x, mode) * c).tanh().sum(), [x, layer.scale, layer.shift])
			self.assertLess(error, 1e-6, msg=mode)


class UnitTestWeightNorm(unittest.TestCase):
	def test_three_four_five(self):
		npt.assert_allclose(weight_norm_project(np.array([[3.0, 4.0]])).values, [[0.6, 0.8]], atol=1e-15)

	def test_unit_row_unchanged(self):
		row = np.array([[0.6, 0.8]])
		npt.assert_allclose(weight_norm_project(row).values, row, atol=1e-15)

	def test_rows_have_unit_norm(self):
		w = np.random.default_rng(9).standard_normal((7, 5)) * 30.0
		norms = np.linalg.norm(weight_norm_project(w).values, axis=1)
		self.assertTrue(np.all(np.abs(norms - 1.0) < 1e-12))

	def test_gradient_orthogonal_to_rows(self):
		rng = np.random.default_rng(10)
		w = Param("w", rng.standard_normal((3, 4)))
		x = rng.standard_normal((5, 4))
		build = lambda: (constant(x) @ weight_norm_project(w).T).tanh().sum()
		with Tape() as tape:
			grads = tape.backward(build())
		npt.assert_allclose(np.sum(grads[w] * w.data, axis=1), 0.0, atol=1e-12)
		self.assertLess(gradient_check(build, [w]), 1e-6)

	def test_zero_row(self):
		with self.assertRaises(WeightNormError):
			weight_norm_project(np.zeros((2, 3)))


class UnitTestAdam(unittest.TestCase):
	def test_zero_gradient(self):
		x = Param("x", np.array([[0.5, -0.5]]))
		adam_step([x], {x: np.zeros((1, 2))}, lr=3e-4)
		npt.assert_array_equal(x.data, [[0.5, -0.5]])

	def test_descent_direction(self):
		x = Param("x", np.full((1, 1), 1.0))
		adam_step([x], {x: np.full((1, 1), 2.0)}, lr=3e-4)
		self.assertLess(x.data[0, 0], 1.0)

	def test_quadratic(self):
		x = Param("x", np.full((1, 1), 0.1))
		optimizer = Adam([x], lr=3e-4)
		for _ in range(2000):
			with Tape() as tape:
				grads = tape.backward(forward_op("square", x).sum())
			optimizer.step(grads)
		self.assertLess(abs(x.data[0, 0]), 1e-3)

	def test_sgd_clipped_step(self):
		x = Param("x", np.zeros((1, 2)))
		y = Param("y", np.zeros((1, 1)))
		sgd_step([x, y], {x: np.array([[3.0, 0.0]]), y: np.array([[4.0]])}, lr=0.5, max_norm=1.0)
		npt.assert_allclose(x.data, [[-0.3, 0.0]])
		npt.assert_allclose(y.data, [[-0.4]])
		sgd_step([x], {x: np.array([[0.2, 0.0]])}, lr=1.0, max_norm=1.0)
		npt.assert_allclose(x.data, [[-0.5, 0.0]])


class UnitTestModules(unittest.TestCase):
	def test_orthogonal_init(self):
		q = orthogonal_init(np.random.default_rng(11), 4, 6)
		npt.assert_allclose(q @ q.T, np.eye(4), atol=1e-12)

	def test_mlp_named_arrays_round_trip(self):
		mlp = Mlp(3, [5, 5], np.random.default_rng(12))
		mlp(np.random.default_rng(13).standard_normal((8, 3)), "train")
		copy = Mlp(3, [5, 5], np.random.default_rng(99))
		copy.load_named_arrays(mlp.named_arrays())
		self.assertEqual(copy.checksum(), mlp.checksum())

	def test_linear_gradient(self):
		rng = np.random.default_rng(14)
		layer = Linear(3, 2, rng, weight_norm=True)
		x = rng.standard_normal((4, 3))
		self.assertLess(gradient_check(lambda: layer(x).tanh().sum(), [layer.weight, layer.bias]), 1e-6)


class UnitTestCheckpoint(unittest.TestCase):
	def test_file_round_trip(self):
		arrays = [("w", np.random.default_rng(15).standard_normal((3, 2))), ("b", np.array(0.1))]
		with tempfile.TemporaryDirectory() as tmp:
			path = save_checkpoint(Path(tmp) / "net.xqcp", b"XQCP", arrays)
			loaded = load_checkpoint(path, b"XQCP")
		self.assertEqual([name for name, _ in loaded], ["w", "b"])
		npt.assert_array_equal(loaded[0][1], arrays[0][1])
		self.assertEqual(loaded[1][1].shape, ())

	def test_wrong_magic(self):
		with self.assertRaises(CheckpointError):
			decode_arrays(b"XQCC", encode_arrays(b"XQCP", [("w", np.ones((1, 1)))]))

	def test_truncated(self):
		payload = encode_arrays(b"XQCP", [("w", np.ones((2, 2)))])
		with self.assertRaises(CheckpointError):
			decode_arrays(b"XQCP", payload[:-3])

	def test_scalar_and_transposed_arrays(self):
		matrix = np.arange(6.0).reshape(2, 3).T
		loaded = dict(decode_arrays(b"XQCP", encode_arrays(b"XQCP", [("count", np.array(3.0)), ("t", matrix)])))
		self.assertEqual(loaded["count"].shape, ())
		self.assertEqual(float(loaded["count"]), 3.0)
		npt.assert_array_equal(loaded["t"], matrix)
