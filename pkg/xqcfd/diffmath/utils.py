# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

from typing import Callable, Sequence

import numpy as np

from xqcfd.diffmath.diffmath import Param, Tape


def orthogonal_init(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> np.ndarray:
	"""A (rows x cols) matrix with orthonormal rows or columns, whichever is fewer."""
	flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
	q, r = np.linalg.qr(flat)
	q = q * np.sign(np.diag(r))
	if rows < cols:
		q = q.T
	return gain * q[:rows, :cols]


def numerical_gradient(fn: Callable[[], float], param: Param, step: float = 1e-5) -> np.ndarray:
	"""Central finite differences of `fn` with respect to every entry of `param`."""
	base = param.data.copy()
	grad = np.zeros_like(base)
	try:
		for index in np.ndindex(base.shape):
			plus = base.copy()
			plus[index] += step
			param.data = plus
			f_plus = float(fn())
			minus = base.copy()
			minus[index] -= step
			param.data = minus
			f_minus = float(fn())
			grad[index] = (f_plus - f_minus) / (2.0 * step)
	finally:
		param.data = base
	return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
	scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
	return float(np.linalg.norm(analytic - numeric) / scale)


def gradient_check(loss_fn: Callable, params: Sequence[Param], step: float = 1e-5) -> float:
	"""Largest relative error between tape gradients and finite differences over `params`.

	`loss_fn()` builds the loss from the parameters; it is called under a fresh tape for the
	analytic pass and without a tape for the numerical one.
	"""
	with Tape(watch=params) as tape:
		loss = loss_fn()
		grads = tape.backward(loss)

	def _value():
		return loss_fn().item()

	worst = 0.0
	for param in params:
		numeric = numerical_gradient(_value, param, step=step)
		analytic = grads.get(param, np.zeros_like(param.data))
		worst = max(worst, relative_error(analytic, numeric))
	return worst
