# Copyright (c) 2025, xqcfd contributors
# See license.txt

import tempfile
import unittest
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import numpy.testing as npt

from xqcfd.critic.critic import CategoricalCritic, CriticPair, critic_loss, forward_joint, target_update
from xqcfd.critic.utils import AtomSupport, aggregate_pair, cross_entropy, expected_value, project_target
from xqcfd.diffmath.diffmath import constant
from xqcfd.diffmath.utils import gradient_check
from xqcfd.exceptions import BatchNormError, CheckpointError, SupportError
from xqcfd.policy.policy import HetStatPolicy


def _scatter_oracle(support, r, done, gamma, next_probs):
	out = np.zeros_like(next_probs)
	for b in range(next_probs.shape[0]):
		for j, z in enumerate(support.atoms):
			value = r[b] if done[b] else r[b] + gamma * z
			value = min(max(value, support.v_min), support.v_max)
			position = (value - support.v_min) / support.delta
			lower = min(int(np.floor(position)), support.count - 1)
			upper = min(lower + 1, support.count - 1)
			frac = position - lower
			out[b, lower] += next_probs[b, j] * (1.0 - frac)
			if upper != lower:
				out[b, upper] += next_probs[b, j] * frac
	return out


def _pair(rng, obs_dim=3, act_dim=2, atoms=5, width=8, polyak=0.005):
	return CriticPair(
		CategoricalCritic(obs_dim, act_dim, atoms, rng, hidden_width=width),
		CategoricalCritic(obs_dim, act_dim, atoms, rng, hidden_width=width),
		polyak=polyak,
	)


def _batch(rng, n=6, obs_dim=3, act_dim=2):
	return SimpleNamespace(
		s=rng.standard_normal((n, obs_dim)),
		a=rng.uniform(-1.0, 1.0, (n, act_dim)),
		r=rng.uniform(0.0, 1.0, n),
		s_next=rng.standard_normal((n, obs_dim)),
		done=rng.uniform(size=n) < 0.3,
	)


class UnitTestAtomSupport(unittest.TestCase):
	def test_atoms(self):
		support = AtomSupport(0.0, 2.0, 3)
		npt.assert_array_equal(support.atoms, [0.0, 1.0, 2.0])
		self.assertEqual(support.delta, 1.0)
		self.assertTrue(np.all(np.diff(AtomSupport(-3.0, 7.0, 101).atoms) > 0.0))

	def test_degenerate(self):
		with self.assertRaises(SupportError):
			AtomSupport(0.0, 1.0, 1)
		with self.assertRaises(SupportError):
			AtomSupport(1.0, 1.0, 5)

	def test_for_discount(self):
		support = AtomSupport.for_discount(0.99)
		self.assertEqual(support.v_min, 0.0)
		self.assertAlmostEqual(support.v_max, 100.0, places=10)
		self.assertEqual(support.count, 101)


class UnitTestProjectTarget(unittest.TestCase):
	def setUp(self):
		self.support = AtomSupport(0.0, 2.0, 3)

	def test_midpoint_splits_mass(self):
		m = project_target(self.support, [0.5], [False], 1.0, [[0.0, 1.0, 0.0]])
		npt.assert_allclose(m, [[0.0, 0.5, 0.5]], atol=1e-15)

	def test_clipped_to_v_max(self):
		m = project_target(self.support, [5.0], [False], 0.9, [[0.2, 0.3, 0.5]])
		npt.assert_allclose(m, [[0.0, 0.0, 1.0]], atol=1e-15)

	def test_done_drops_bootstrap(self):
		m = project_target(self.support, [1.0], [True], 0.99, [[0.0, 0.0, 1.0]])
		npt.assert_allclose(m, [[0.0, 1.0, 0.0]], atol=1e-15)

	def test_matches_scatter_oracle(self):
		rng = np.random.default_rng(0)
		support = AtomSupport(0.0, 10.0, 11)
		for _ in range(20):
			probs = rng.dirichlet(np.ones(11), size=8)
			r = rng.uniform(-1.0, 3.0, 8)
			done = rng.uniform(size=8) < 0.25
			gamma = rng.uniform(0.0, 0.999)
			m = project_target(support, r, done, gamma, probs)
			npt.assert_allclose(m, _scatter_oracle(support, r, done, gamma, probs), atol=1e-12)

	def test_probability_vector_and_expectation(self):
		rng = np.random.default_rng(1)
		support = AtomSupport.for_discount(0.95, 51)
		probs = rng.dirichlet(np.ones(51), size=200)
		r = rng.uniform(-0.5, 1.5, 200)
		m = project_target(support, r, np.zeros(200), 0.95, probs)
		self.assertTrue(np.all(m >= 0.0))
		npt.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)
		clipped = np.clip(r[:, None] + 0.95 * support.atoms, support.v_min, support.v_max)
		npt.assert_allclose(m @ support.atoms, np.sum(probs * clipped, axis=1), atol=1e-10)

	def test_wrong_width(self):
		with self.assertRaises(SupportError):
			project_target(self.support, [0.0], [False], 0.9, [[0.5, 0.5]])


class UnitTestExpectedValue(unittest.TestCase):
	def test_one_hot(self):
		support = AtomSupport(0.0, 2.0, 21)
		probs = np.zeros(21)
		probs[17] = 1.0
		self.assertAlmostEqual(expected_value(probs, support), 1.7, places=12)

	def test_uniform(self):
		self.assertAlmostEqual(expected_value(np.full(3, 1.0 / 3.0), AtomSupport(0.0, 2.0, 3)), 1.0, places=15)

	def test_matches_sampling(self):
		rng = np.random.default_rng(2)
		support = AtomSupport(0.0, 5.0, 11)
		probs = rng.dirichlet(np.ones(11))
		draws = support.atoms[rng.choice(11, size=1_000_000, p=probs)]
		se = draws.std() / np.sqrt(draws.size)
		self.assertLess(abs(expected_value(probs, support) - draws.mean()), 4.0 * se)

	def test_within_support(self):
		rng = np.random.default_rng(3)
		support = AtomSupport(-1.0, 4.0, 7)
		values = expected_value(rng.dirichlet(np.ones(7), size=500), support)
		self.assertTrue(np.all((values >= -1.0) & (values <= 4.0)))


class UnitTestAggregatePair(unittest.TestCase):
	def setUp(self):
		self.support = AtomSupport(0.0, 2.0, 3)

	def test_lower_value_wins(self):
		a = [[0.0, 1.0, 0.0]]
		b = [[0.0, 0.0, 1.0]]
		npt.assert_array_equal(aggregate_pair(a, b, self.support), a)
		npt.assert_array_equal(aggregate_pair(b, a, self.support), a)

	def test_tie_goes_to_a(self):
		a = [[0.5, 0.0, 0.5]]
		b = [[0.0, 1.0, 0.0]]
		npt.assert_array_equal(aggregate_pair(a, b, self.support), a)

	def test_value_is_minimum(self):
		rng = np.random.default_rng(4)
		a, b = rng.dirichlet(np.ones(3), size=(2, 100))
		chosen = expected_value(aggregate_pair(a, b, self.support), self.support)
		npt.assert_array_equal(chosen, np.minimum(expected_value(a, self.support), expected_value(b, self.support)))


class UnitTestCrossEntropy(unittest.TestCase):
	def test_minimum_is_entropy(self):
		logits = np.random.default_rng(5).standard_normal((4, 6))
		log_p = constant(logits).log_softmax_rows()
		p = np.exp(log_p.values)
		entropy = -np.mean(np.sum(p * log_p.values, axis=1))
		self.assertAlmostEqual(cross_entropy(p, log_p).item(), entropy, places=12)

	def test_one_hot(self):
		log_p = constant(np.array([[0.3, -1.0, 2.0]])).log_softmax_rows()
		self.assertAlmostEqual(cross_entropy([[0.0, 1.0, 0.0]], log_p).item(), -log_p.values[0, 1], places=15)


class UnitTestForwardJoint(unittest.TestCase):
	def test_probability_rows(self):
		rng = np.random.default_rng(6)
		pair = _pair(rng)
		batch = _batch(rng)
		joint = forward_joint(pair, batch.s, batch.a, batch.s_next, batch.a)
		for log_probs, next_probs in zip(joint.log_probs, joint.next_probs):
			npt.assert_allclose(np.exp(log_probs.values).sum(axis=1), 1.0, atol=1e-12)
			npt.assert_allclose(next_probs.sum(axis=1), 1.0, atol=1e-12)
			self.assertEqual(log_probs.shape, (6, 5))

	def test_statistics_cover_both_batches(self):
		rng = np.random.default_rng(7)
		pair = _pair(rng)
		batch = _batch(rng)
		a_next = rng.uniform(-1.0, 1.0, batch.a.shape)
		forward_joint(pair, batch.s, batch.a, batch.s_next, a_next)
		linear = pair.critic_a.body.linears[0]
		w = linear.weight.data / np.linalg.norm(linear.weight.data, axis=1, keepdims=True)
		joint = np.vstack([np.hstack([batch.s, batch.a]), np.hstack([batch.s_next, a_next])]) @ w.T
		state = pair.critic_a.body.norms[0].state
		npt.assert_allclose(state.running_mean, 0.01 * joint.mean(axis=0, keepdims=True), atol=1e-14)
		npt.assert_allclose(state.running_var, 0.99 + 0.01 * joint.var(axis=0, keepdims=True), atol=1e-14)
		half = np.hstack([batch.s, batch.a]) @ w.T
		self.assertGreater(np.max(np.abs(state.running_mean - 0.01 * half.mean(axis=0))), 1e-6)

	def test_online_next_probabilities(self):
		rng = np.random.default_rng(8)
		pair = _pair(rng)
		batch = _batch(rng)
		joint = forward_joint(pair, batch.s, batch.a, batch.s_next, batch.a, use_target_network=False)
		npt.assert_allclose(joint.next_probs[0].sum(axis=1), 1.0, atol=1e-12)
		rows = pair.critic_a.probs(np.vstack([batch.s, batch.s_next]), np.vstack([batch.a, batch.a]), mode="batch")
		npt.assert_allclose(joint.next_probs[0], rows.values[6:], atol=1e-12)

	def test_single_row(self):
		rng = np.random.default_rng(9)
		pair = _pair(rng)
		with self.assertRaises(BatchNormError):
			forward_joint(pair, np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 2)))


class UnitTestTargetUpdate(unittest.TestCase):
	def _perturbed(self, seed, polyak):
		rng = np.random.default_rng(seed)
		pair = _pair(rng, polyak=polyak)
		for p in pair.parameters():
			p.assign(p.data + 0.5 * rng.standard_normal(p.shape))
		batch = _batch(rng)
		forward_joint(pair, batch.s, batch.a, batch.s_next, batch.a)
		return pair, batch

	def test_tau_zero(self):
		pair, _ = self._perturbed(10, 0.0)
		before = [array.copy() for _, array in pair.target_a.named_arrays()]
		target_update(pair)
		for old, (_, new) in zip(before, pair.target_a.named_arrays()):
			npt.assert_array_equal(new, old)

	def test_tau_one(self):
		pair, batch = self._perturbed(11, 1.0)
		target_update(pair)
		for online, target in zip(pair.online, pair.targets):
			for (_, a), (_, b) in zip(online.named_arrays(), target.named_arrays()):
				npt.assert_array_equal(b, a)
			npt.assert_array_equal(target.probs(batch.s, batch.a, "eval").values, online.probs(batch.s, batch.a, "eval").values)

	def test_geometric_convergence(self):
		pair, _ = self._perturbed(12, 0.1)

		def gap():
			return np.sqrt(sum(np.sum((a - b) ** 2) for (_, a), (_, b) in zip(pair.critic_b.named_arrays(), pair.target_b.named_arrays())))

		previous = gap()
		self.assertGreater(previous, 0.0)
		for _ in range(20):
			target_update(pair)
			current = gap()
			self.assertAlmostEqual(current / previous, 0.9, places=9)
			previous = current


class UnitTestCriticLoss(unittest.TestCase):
	def test_gradients(self):
		rng = np.random.default_rng(13)
		pair = _pair(rng)
		for p in pair.parameters():
			p.assign(p.data + 0.2 * rng.standard_normal(p.shape))
		policy = HetStatPolicy(3, 2, rng, hidden_width=4, feature_dim=8)
		batch = _batch(rng)
		support = AtomSupport.for_discount(0.8, 5)

		def loss():
			return critic_loss(pair, batch, policy, support, 0.8, np.random.default_rng(0))

		self.assertLess(gradient_check(loss, pair.parameters()), 1e-5)

	def test_finite_and_positive(self):
		rng = np.random.default_rng(14)
		pair = _pair(rng)
		policy = HetStatPolicy(3, 2, rng, hidden_width=4, feature_dim=8)
		value = critic_loss(pair, _batch(rng), policy, AtomSupport.for_discount(0.9, 5), 0.9, rng).item()
		self.assertTrue(np.isfinite(value))
		self.assertGreater(value, 0.0)


class UnitTestCriticPair(unittest.TestCase):
	def test_parameters_are_online_only(self):
		pair = _pair(np.random.default_rng(15))
		ids = {id(p) for p in pair.parameters()}
		self.assertFalse(ids & {id(p) for p in pair.target_a.parameters()})
		self.assertEqual(len(ids), len(pair.critic_a.parameters()) * 2)

	def test_q_value(self):
		rng = np.random.default_rng(16)
		critic = CategoricalCritic(3, 2, 5, rng, hidden_width=8)
		support = AtomSupport(0.0, 4.0, 5)
		s, a = rng.standard_normal((4, 3)), rng.uniform(-1.0, 1.0, (4, 2))
		npt.assert_allclose(critic.q_value(s, a, support), critic.probs(s, a, "eval").values @ support.atoms)

	def test_checkpoint_round_trip(self):
		pair, _ = UnitTestTargetUpdate()._perturbed(17, 0.3)
		target_update(pair)
		other = _pair(np.random.default_rng(18), polyak=0.3)
		with tempfile.TemporaryDirectory() as tmp:
			path = pair.save(Path(tmp) / "critic.xqcc")
			other.load(path)
			with self.assertRaises(CheckpointError):
				HetStatPolicy(3, 2, np.random.default_rng(0)).load(path)
		self.assertEqual(other.checksum(), pair.checksum())
