"""Unit tests for optimizers and gradient clipping."""

import unittest

import numpy as np

from src.basis_distiller import diffcore as dc
from src.basis_distiller.optim import Adam, clip_grad_norm, sgd_step


class TestClipGradNorm(unittest.TestCase):
    """Test global-norm clipping."""

    def test_clips_to_max_norm(self):
        """Test a 3-4 gradient (norm 5) is scaled to norm 1."""
        clipped, norm = clip_grad_norm([np.array([3.0]), np.array([4.0])], 1.0)
        self.assertAlmostEqual(norm, 5.0)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in clipped))
        self.assertLessEqual(total, 1.0 + 1e-9)
        np.testing.assert_allclose(clipped[0] / clipped[1], [0.75])

    def test_small_gradients_untouched(self):
        """Test gradients under the ceiling are returned as copies."""
        grads = [np.array([0.1, -0.2])]
        clipped, _ = clip_grad_norm(grads, 1.0)
        np.testing.assert_array_equal(clipped[0], grads[0])
        self.assertIsNot(clipped[0], grads[0])

    def test_disabled(self):
        """Test max_norm <= 0 disables clipping."""
        clipped, norm = clip_grad_norm([np.array([30.0, 40.0])], 0.0)
        self.assertEqual(norm, 50.0)
        np.testing.assert_array_equal(clipped[0], [30.0, 40.0])


class TestSgdStep(unittest.TestCase):
    """Test the differentiable SGD step."""

    def test_update_and_gradient_flow(self):
        """Test p - lr * g and that the result stays differentiable in g's source."""
        w = dc.parameter([2.0, -1.0])
        p = dc.parameter([1.0, 1.0])
        (updated,) = sgd_step([p], [w * 3.0], lr=0.5)
        np.testing.assert_allclose(updated.data, [-2.0, 2.5])
        grad_w = dc.grad(updated.sum(), [w])[0].data
        np.testing.assert_allclose(grad_w, [-1.5, -1.5])


class TestAdam(unittest.TestCase):
    """Test Adam updates."""

    def test_first_step_magnitude(self):
        """Test the bias-corrected first step moves each entry by about lr."""
        p = dc.parameter([1.0, -1.0])
        opt = Adam([p], lr=0.1)
        opt.step([np.array([5.0, -0.01])])
        np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)

    def test_minimises_quadratic(self):
        """Test convergence on (p - 3)^2."""
        p = dc.parameter([0.0])
        opt = Adam([p], lr=0.1)
        for _ in range(500):
            opt.step([2.0 * (p.data - 3.0)])
        self.assertAlmostEqual(float(p.data[0]), 3.0, delta=0.05)

    def test_weight_decay_shrinks(self):
        """Test weight decay alone pulls parameters toward zero."""
        p = dc.parameter([2.0])
        opt = Adam([p], lr=0.01, weight_decay=1.0)
        opt.step([np.zeros(1)])
        self.assertLess(float(p.data[0]), 2.0)


if __name__ == "__main__":
    unittest.main()
