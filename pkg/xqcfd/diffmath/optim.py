# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

from typing import Iterable

import numpy as np

from xqcfd.diffmath.diffmath import Param


def adam_step(
	params: Iterable[Param],
	grads: dict,
	lr: float,
	beta1: float = 0.9,
	beta2: float = 0.999,
	eps: float = 1e-8,
) -> None:
	"""Bias-corrected Adam update. Parameters without a gradient entry are left alone."""
	for param in params:
		grad = grads.get(param)
		if grad is None:
			continue
		grad = np.asarray(grad, dtype=np.float64).reshape(param.shape)
		param.step += 1
		param.m = beta1 * param.m + (1.0 - beta1) * grad
		param.v = beta2 * param.v + (1.0 - beta2) * grad * grad
		m_hat = param.m / (1.0 - beta1**param.step)
		v_hat = param.v / (1.0 - beta2**param.step)
		param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
	"""Adam over a fixed parameter group; moments live on the parameters."""

	def __init__(self, params: Iterable[Param], lr: float = 3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
		self.params = list(params)
		self.lr = lr
		self.beta1 = beta1
		self.beta2 = beta2
		self.eps = eps

	def step(self, grads: dict) -> None:
		adam_step(self.params, grads, self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


def clip_grad_norm(params: Iterable[Param], grads: dict, max_norm: float) -> float:
	"""Scale the gradients of `params` in place to a joint norm of at most `max_norm`.

	Returns the norm before clipping.
	"""
	params = [p for p in params if grads.get(p) is not None]
	norm = float(np.sqrt(sum(np.sum(np.square(grads[p])) for p in params)))
	if norm > max_norm:
		for p in params:
			grads[p] = grads[p] * (max_norm / norm)
	return norm


def sgd_step(params: Iterable[Param], grads: dict, lr: float, max_norm: float = None) -> None:
	"""Plain gradient descent; the update of each parameter stays in the span of its gradients."""
	params = list(params)
	if max_norm is not None:
		clip_grad_norm(params, grads, max_norm)
	for param in params:
		grad = grads.get(param)
		if grad is not None:
			param.data = param.data - lr * np.asarray(grad, dtype=np.float64).reshape(param.shape)
