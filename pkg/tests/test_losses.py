"""
Unit Tests for Chamfer, repulsion and the composed sampling / total losses
"""

import os
import sys
import unittest

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import losses
import tensor_core as tc
from errors import DomainError
from schemas import LossConfig, TemperatureKind
from tensor_core import Matrix

PAIR = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
COINCIDENT = np.zeros((2, 3))


def chamfer_reference(q: np.ndarray, p: np.ndarray) -> float:
    """Double-loop Chamfer distance"""
    def one_way(a, b):
        total = 0.0
        for x in a:
            total += min(float(((x - y) ** 2).sum()) for y in b)
        return total / len(a)
    return one_way(q, p) + one_way(p, q)


class TestChamfer(unittest.TestCase):

    def test_identical_sets(self):
        p = np.random.default_rng(0).normal(size=(9, 3))
        self.assertEqual(losses.chamfer(p, p).item(), 0.0)

    def test_hand_examples(self):
        """Origin vs (±1,0,0) is 2; origin vs (3,4,0) is 50"""
        self.assertAlmostEqual(losses.chamfer([[0.0, 0, 0]], PAIR).item(), 2.0, places=12)
        self.assertAlmostEqual(losses.chamfer([[0.0, 0, 0]], [[3.0, 4.0, 0]]).item(), 50.0, places=12)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            q, p = rng.normal(size=(int(rng.integers(1, 12)), 3)), rng.normal(size=(int(rng.integers(1, 30)), 3))
            self.assertAlmostEqual(losses.chamfer(q, p).item(), chamfer_reference(q, p), places=10)

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        q, p = rng.normal(size=(5, 3)), rng.normal(size=(8, 3))
        self.assertAlmostEqual(losses.chamfer(q, p).item(), losses.chamfer(p, q).item(), places=12)

    def test_gradient_to_fixed_cloud(self):
        """Chamfer to a fixed P passes a finite-difference check at a generic point"""
        p = Matrix(np.random.default_rng(3).normal(size=(20, 3)))
        q = np.random.default_rng(4).normal(size=(6, 3))
        self.assertLessEqual(tc.grad_check(lambda x: losses.chamfer(x, p), q), 1e-4)

    def test_empty_cloud(self):
        with self.assertRaises(DomainError):
            losses.chamfer(np.zeros((0, 3)), PAIR)


class TestRepulsion(unittest.TestCase):

    def test_far_points_contribute_nothing(self):
        q = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 2.0, 0]])
        self.assertEqual(losses.repulsion(q, LossConfig()).item(), 0.0)

    def test_coincident_pair(self):
        """Two coincident points, one neighbor, h = 0.001 -> 10⁻⁶"""
        value = losses.repulsion(COINCIDENT, LossConfig(h=0.001, k_rep=1)).item()
        self.assertAlmostEqual(value, 1e-6, delta=1e-18)

    def test_threshold_crossing(self):
        """Shrinking the cloud below h switches the penalty on"""
        q = np.random.default_rng(5).uniform(-1, 1, size=(6, 3))
        cfg = LossConfig(h=0.01, k_rep=3)
        self.assertEqual(losses.repulsion(q, cfg).item(), 0.0)
        self.assertGreater(losses.repulsion(q * 1e-4, cfg).item(), 0.0)

    def test_single_point_is_zero(self):
        self.assertEqual(losses.repulsion([[1.0, 2.0, 3.0]], LossConfig()).item(), 0.0)

    def test_rigid_motion_invariance(self):
        """Rotating and translating the sample leaves the penalty unchanged"""
        rng = np.random.default_rng(11)
        q = rng.uniform(0, 0.02, size=(40, 3))
        rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        moved = q @ rotation.T + np.array([0.3, -0.2, 0.1])
        cfg = LossConfig(h=0.01, k_rep=5)
        before = losses.repulsion(q, cfg).item()
        self.assertGreater(before, 0.0)
        self.assertAlmostEqual(losses.repulsion(moved, cfg).item(), before, delta=1e-12)


class TestComposition(unittest.TestCase):

    def test_sampling_hand_example(self):
        """Chamfer 2 + repulsion 10⁻⁶ + eᵗ at t = 0 gives 3.000001"""
        cfg = LossConfig(alpha=1.0, beta=1.0, temperature_kind=TemperatureKind.exp)
        value = losses.sampling_loss(COINCIDENT, COINCIDENT, PAIR, 0.0, cfg).item()
        self.assertAlmostEqual(value, 3.000001, places=12)

    def test_zero_weights_give_chamfer(self):
        q = np.random.default_rng(6).normal(size=(4, 3))
        p = np.random.default_rng(7).normal(size=(10, 3))
        cfg = LossConfig(alpha=0.0, beta=0.0)
        self.assertEqual(losses.sampling_loss(q, q, p, 1.0, cfg).item(), losses.chamfer(q, p).item())

    def test_alpha_linearity(self):
        """Doubling α moves the total by one repulsion value"""
        q = np.random.default_rng(8).normal(scale=1e-4, size=(5, 3))
        p = np.random.default_rng(9).normal(size=(10, 3))
        one = losses.sampling_loss(q, q, p, 0.5, LossConfig(alpha=1.0, h=0.01)).item()
        two = losses.sampling_loss(q, q, p, 0.5, LossConfig(alpha=2.0, h=0.01)).item()
        rep = losses.repulsion(q, LossConfig(h=0.01)).item()
        self.assertGreater(rep, 0.0)
        self.assertAlmostEqual(two - one, rep, places=12)

    def test_terms_report_components(self):
        """Component keys follow the non-zero weights; displacement is a plain diagnostic"""
        gen = np.array([[0.1, 0, 0], [0, 0.2, 0]])
        terms = losses.sampling_loss_terms(gen, COINCIDENT, PAIR, 0.0, LossConfig(beta=0.0))
        self.assertEqual(set(terms), {"chamfer", "displacement", "repulsion", "sampling"})
        self.assertAlmostEqual(terms["displacement"].item(), (0.01 + 0.04) / 2, places=12)

    def test_total_loss_examples(self):
        """δ = 0 -> sampling; task 0 -> sampling; (1.5, 2.0, 0.5) -> 2.5"""
        self.assertEqual(losses.total_loss(1.5, 2.0, LossConfig(delta=0.0)).item(), 1.5)
        self.assertEqual(losses.total_loss(1.5, 0.0, LossConfig(delta=1.0)).item(), 1.5)
        self.assertEqual(losses.total_loss(1.5, 2.0, LossConfig(delta=0.5)).item(), 2.5)


class TestSampleMetrics(unittest.TestCase):

    def test_full_cloud_sample(self):
        """The cloud as its own sample has zero Chamfer and zero coverage radius"""
        p = np.random.default_rng(10).normal(size=(7, 3))
        metrics = losses.sample_metrics(p, p, "fps", "cloud.xyz")
        self.assertEqual(metrics.chamfer, 0.0)
        self.assertEqual(metrics.coverage_radius, 0.0)
        self.assertEqual((metrics.n, metrics.m), (7, 7))

    def test_single_point_sample(self):
        metrics = losses.sample_metrics([[0.0, 0, 0]], [[0.0, 0, 0], [3.0, 4.0, 0]], "random")
        self.assertEqual(metrics.min_pairwise_distance, 0.0)
        self.assertAlmostEqual(metrics.coverage_radius, 5.0, places=12)
        self.assertAlmostEqual(metrics.chamfer, 12.5, places=12)


if __name__ == "__main__":
    unittest.main()
