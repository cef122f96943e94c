"""Unit tests for geometric moments and Dirichlet energy."""

import itertools
import unittest

import numpy as np

from src.basis_distiller import diffcore as dc
from src.basis_distiller.errors import (
    DegenerateGraphError,
    DimensionError,
    EmptyDatasetError,
)
from src.basis_distiller.graphdata import DenseGraph, DomainDataset
from src.basis_distiller.structstats import (
    EPS,
    MomentWeights,
    default_gamma,
    dirichlet_energy,
    moment_tensors,
    moments,
    normalized_laplacian,
    profile,
)

EDGE = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_binary(rng, n, p=0.4):
    upper = np.triu((rng.random((n, n)) < p).astype(np.float64), k=1)
    return upper + upper.T


def count_triangles(a):
    n = a.shape[0]
    return sum(
        1 for i, j, k in itertools.combinations(range(n), 3) if a[i, j] and a[j, k] and a[i, k]
    )


def scalar_moments(a):
    """Independent loop-based recomputation."""
    n = a.shape[0]
    degrees = [sum(a[i, j] for j in range(n)) for i in range(n)]
    total = sum(degrees)
    mean = total / n
    var = sum((d - mean) ** 2 for d in degrees) / n
    return np.array(
        [mean, np.sqrt(var + EPS), total / (n * (n - 1) + EPS), 6 * count_triangles(a) / (6 * n + EPS)]
    )


class TestMoments(unittest.TestCase):
    """Test moment values on hand-checked graphs."""

    def test_triangle(self):
        """Test K3."""
        m = moments(np.ones((3, 3)) - np.eye(3))
        self.assertAlmostEqual(m.deg_mean, 2.0)
        self.assertAlmostEqual(m.density, 1.0, places=7)
        self.assertAlmostEqual(m.tri, 1.0 / 3.0, places=7)

    def test_empty_graph(self):
        """Test the all-zero graph sits at the stabilised floor."""
        m = moments(np.zeros((4, 4)))
        self.assertEqual(m.deg_mean, 0.0)
        self.assertEqual(m.density, 0.0)
        self.assertEqual(m.tri, 0.0)
        self.assertAlmostEqual(m.deg_std, np.sqrt(EPS), places=12)

    def test_path(self):
        """Test P3: degrees (1, 2, 1)."""
        a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.float64)
        m = moments(a)
        self.assertAlmostEqual(m.deg_mean, 4.0 / 3.0)
        self.assertAlmostEqual(m.deg_std, np.sqrt(2.0 / 9.0), places=7)
        self.assertEqual(m.tri, 0.0)

    def test_single_node_rejected(self):
        """Test DegenerateGraphError for n < 2."""
        with self.assertRaises(DegenerateGraphError):
            moments(np.zeros((1, 1)))

    def test_triangle_oracle(self):
        """Test Tr(A^3) == 6 * triangles and all moments against loops."""
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 13))
            a = random_binary(rng, n)
            self.assertEqual(dc.trace_pow3(a).item(), 6 * count_triangles(a))
            np.testing.assert_allclose(moments(a).as_array(), scalar_moments(a), atol=1e-10, rtol=0)

    def test_moment_gradients(self):
        """Test each moment's gradient w.r.t. a weighted adjacency."""
        rng = np.random.default_rng(1)
        for _ in range(10):
            n = int(rng.integers(3, 7))
            w = rng.uniform(0.1, 0.9, size=(n, n))
            a = np.triu(w, k=1) + np.triu(w, k=1).T
            for index in range(4):
                p = dc.parameter(a)
                analytic = dc.grad(moment_tensors(p)[index], [p])[0].data
                numeric = dc.numerical_gradient(
                    lambda: moment_tensors(dc.Tensor(a))[index].item(), [a]
                )[0]
                self.assertLess(dc.relative_error(analytic, numeric), 1e-6)


class TestLaplacianAndEnergy(unittest.TestCase):
    """Test the normalized Laplacian and Dirichlet energy."""

    def test_single_edge_laplacian(self):
        """Test L for one edge."""
        np.testing.assert_allclose(normalized_laplacian(EDGE).data, [[1, -1], [-1, 1]])

    def test_isolated_node_convention(self):
        """Test a 1-node graph gives [[1]] and isolated rows keep a unit diagonal."""
        np.testing.assert_array_equal(normalized_laplacian(np.zeros((1, 1))).data, [[1.0]])
        a = np.zeros((3, 3))
        a[0, 1] = a[1, 0] = 1.0
        lap = normalized_laplacian(a).data
        np.testing.assert_array_equal(lap[2], [0.0, 0.0, 1.0])

    def test_triangle_spectrum(self):
        """Test eigenvalues of L for K3 lie in [0, 2]."""
        eig = np.linalg.eigvalsh(normalized_laplacian(np.ones((3, 3)) - np.eye(3)).data)
        self.assertTrue(np.all(eig >= -1e-12))
        self.assertTrue(np.all(eig <= 2 + 1e-12))

    def test_energy_examples(self):
        """Test constant and alternating signals on one edge."""
        self.assertAlmostEqual(dirichlet_energy(EDGE, [[1.0], [1.0]]).item(), 0.0, places=12)
        self.assertAlmostEqual(dirichlet_energy(EDGE, [[1.0], [-1.0]]).item(), 4.0, places=12)

    def test_energy_row_mismatch(self):
        """Test DimensionError when features have the wrong row count."""
        with self.assertRaises(DimensionError):
            dirichlet_energy(EDGE, np.ones((3, 1)))

    def test_energy_non_negative(self):
        """Test energy >= -1e-9 on random weighted graphs."""
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(1, 9))
            w = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.5), k=1)
            self.assertGreaterEqual(
                dirichlet_energy(w + w.T, rng.normal(size=(n, 3))).item(), -1e-9
            )

    def test_energy_gradients(self):
        """Test energy gradients w.r.t. adjacency and features."""
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            w = rng.uniform(0.1, 0.9, size=(n, n))
            a = np.triu(w, k=1) + np.triu(w, k=1).T
            x = rng.normal(size=(n, int(rng.integers(1, 5))))
            pa, px = dc.parameter(a), dc.parameter(x)
            analytic = [g.data for g in dc.grad(dirichlet_energy(pa, px), [pa, px])]
            numeric = dc.numerical_gradient(lambda: dirichlet_energy(a, x).item(), [a, x])
            for g, h in zip(analytic, numeric):
                self.assertLess(dc.relative_error(g, h), 1e-6)


class TestPermutationInvariance(unittest.TestCase):
    """Test invariance under node relabelling."""

    def test_moments_and_energy(self):
        """Test 20 random permutations per instance."""
        rng = np.random.default_rng(4)
        for _ in range(5):
            n = int(rng.integers(3, 9))
            w = np.triu(rng.random((n, n)), k=1)
            a = w + w.T
            x = rng.normal(size=(n, 2))
            base_m = moments(a).as_array()
            base_e = dirichlet_energy(a, x).item()
            for _ in range(20):
                perm = rng.permutation(n)
                pa = a[np.ix_(perm, perm)]
                np.testing.assert_allclose(moments(pa).as_array(), base_m, atol=1e-10)
                self.assertAlmostEqual(dirichlet_energy(pa, x[perm]).item(), base_e, places=10)


class TestGamma(unittest.TestCase):
    """Test default moment weights."""

    def test_gamma_formula(self):
        """Test deg_mean 2 -> 0.25, zero moments clamp to 1e4."""
        k3 = DenseGraph(np.ones((3, 3)) - np.eye(3), np.ones((3, 1)))
        gamma = default_gamma(DomainDataset([k3])).gamma
        self.assertAlmostEqual(gamma[0], 0.25, places=7)
        self.assertAlmostEqual(gamma[2], 1.0, places=6)

        empty = DenseGraph(np.zeros((3, 3)), np.ones((3, 1)))
        gamma = default_gamma(DomainDataset([empty])).gamma
        self.assertEqual(gamma[0], 1e4)
        self.assertEqual(gamma[3], 1e4)

    def test_gamma_empty_target(self):
        """Test EmptyDatasetError for an empty target."""
        with self.assertRaises(EmptyDatasetError):
            default_gamma(DomainDataset([]))

    def test_weights_validation(self):
        """Test that negative weights are rejected."""
        with self.assertRaises(ValueError):
            MomentWeights((1.0, -1.0, 1.0, 1.0))

    def test_profile_shapes(self):
        """Test profile rows and energies."""
        graphs = [DenseGraph(EDGE, [[1.0], [-1.0]]), DenseGraph(EDGE, [[1.0], [1.0]])]
        prof = profile(DomainDataset(graphs))
        self.assertEqual(prof.moments.shape, (2, 4))
        np.testing.assert_allclose(prof.energies, [4.0, 0.0], atol=1e-12)
        self.assertAlmostEqual(prof.mean_energy, 2.0)


if __name__ == "__main__":
    unittest.main()
