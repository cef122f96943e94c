"""Unit tests for graph datasets, JSONL IO, splitting and the motif generator."""

import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path

import networkx as nx
import numpy as np

from src.basis_distiller.errors import (
    DegenerateSplitError,
    EmptyDatasetError,
    GraphParseError,
    SchemaError,
)
from src.basis_distiller.graphdata import (
    EDGE_DENSITY,
    NODE_DENSITY,
    DenseGraph,
    DomainDataset,
    SplitSpec,
    dataset_stats,
    generate_spurious_motif,
    label_histogram,
    load_jsonl,
    merge,
    save_jsonl,
    split_by_density,
    spurious_motif_graph,
)


def path_graph(n, label=None, dim=1):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return DenseGraph(a, np.ones((n, dim)), label)


class TestDenseGraph(unittest.TestCase):
    """Test DenseGraph validation."""

    def test_valid_graph(self):
        """Test basic properties of a path graph."""
        g = path_graph(4, label=1)
        self.assertEqual(g.n, 4)
        self.assertEqual(g.num_edges, 3)
        self.assertEqual(g.feature_dim, 1)

    def test_asymmetric_rejected(self):
        """Test that an asymmetric adjacency raises SchemaError."""
        a = np.zeros((2, 2))
        a[0, 1] = 1.0
        with self.assertRaises(SchemaError):
            DenseGraph(a, np.ones((2, 1)))

    def test_self_loop_rejected(self):
        """Test that a non-zero diagonal raises SchemaError."""
        with self.assertRaises(SchemaError):
            DenseGraph(np.eye(2), np.ones((2, 1)))

    def test_from_networkx(self):
        """Test conversion from a networkx graph."""
        g = DenseGraph.from_networkx(nx.cycle_graph(5), label=0)
        self.assertEqual(g.num_edges, 5)
        np.testing.assert_array_equal(g.features, np.ones((5, 1)))


class TestJsonl(unittest.TestCase):
    """Test JSON Lines loading and saving."""

    def setUp(self):
        """Set up a temporary directory."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test files."""
        shutil.rmtree(self.temp_dir)

    def write(self, lines):
        path = os.path.join(self.temp_dir, "graphs.jsonl")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        return path

    def test_load_example_record(self):
        """Test that a path record loads symmetrised."""
        path = self.write(['{"n":3,"edges":[[0,1],[1,2]],"features":[[1],[1],[1]],"label":0}'])
        data = load_jsonl(path)
        self.assertEqual(len(data), 1)
        expected = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.float64)
        np.testing.assert_array_equal(data[0].adjacency, expected)
        self.assertEqual(data.num_classes, 1)

    def test_weights_are_kept(self):
        """Test that fractional edge weights are loaded."""
        path = self.write(['{"n":2,"edges":[[0,1]],"weights":[0.25],"features":[[1],[2]]}'])
        self.assertEqual(load_jsonl(path)[0].adjacency[1, 0], 0.25)

    def test_out_of_range_edge_reports_line(self):
        """Test that an out-of-range edge raises GraphParseError with its line."""
        path = self.write(
            [
                '{"n":2,"edges":[[0,1]],"features":[[1],[1]]}',
                '{"n":2,"edges":[[0,5]],"features":[[1],[1]]}',
            ]
        )
        with self.assertRaises(GraphParseError) as ctx:
            load_jsonl(path)
        self.assertEqual(ctx.exception.line, 2)
        self.assertIn("line 2", str(ctx.exception))

    def test_invalid_json(self):
        """Test that malformed JSON raises GraphParseError."""
        path = self.write(['{"n":2,'])
        with self.assertRaises(GraphParseError):
            load_jsonl(path)

    def test_feature_dim_mismatch(self):
        """Test that inconsistent feature dimensions raise SchemaError."""
        path = self.write(
            [
                '{"n":2,"edges":[],"features":[[1],[1]]}',
                '{"n":2,"edges":[],"features":[[1,2],[1,2]]}',
            ]
        )
        with self.assertRaises(SchemaError):
            load_jsonl(path)

    def test_missing_file(self):
        """Test FileNotFoundError for a missing file."""
        with self.assertRaises(FileNotFoundError):
            load_jsonl(os.path.join(self.temp_dir, "missing.jsonl"))

    def test_save_then_load_preserves_graphs(self):
        """Test that saved graphs load back identically, weights included."""
        a = np.zeros((3, 3))
        a[0, 1] = a[1, 0] = 0.5
        a[1, 2] = a[2, 1] = 1.0
        data = DomainDataset([DenseGraph(a, np.arange(6.0).reshape(3, 2), 1, env=2)])
        path = os.path.join(self.temp_dir, "out.jsonl")
        save_jsonl(data, path)
        loaded = load_jsonl(path)
        np.testing.assert_array_equal(loaded[0].adjacency, a)
        np.testing.assert_array_equal(loaded[0].features, data[0].features)
        self.assertEqual(loaded[0].label, 1)
        self.assertEqual(loaded[0].env, 2)

    def test_binary_graphs_omit_weights(self):
        """Test that unit-weight graphs are written without a weights key."""
        path = os.path.join(self.temp_dir, "out.jsonl")
        save_jsonl(DomainDataset([path_graph(3, 0)]), path)
        record = json.loads(Path(path).read_text(encoding="utf-8").splitlines()[0])
        self.assertNotIn("weights", record)


class TestSplit(unittest.TestCase):
    """Test density splitting."""

    def test_split_by_node_count(self):
        """Test 4 bins over node counts 4..11."""
        data = DomainDataset([path_graph(n, 0) for n in range(4, 12)])
        parts = split_by_density(data, SplitSpec(NODE_DENSITY, 4))
        self.assertEqual([len(p) for p in parts], [2, 2, 2, 2])
        self.assertEqual([p.name for p in parts], ["M0", "M1", "M2", "M3"])
        self.assertEqual([g.n for g in parts[0]], [4, 5])
        self.assertEqual([g.n for g in parts[3]], [10, 11])

    def test_split_is_a_partition(self):
        """Test that bins are disjoint and cover the input."""
        data = generate_spurious_motif(60, 0.5, seed=2)
        parts = split_by_density(data, SplitSpec(EDGE_DENSITY, 3))
        self.assertEqual(sum(len(p) for p in parts), len(data))
        ids = sorted(id(g) for p in parts for g in p)
        self.assertEqual(ids, sorted(id(g) for g in data))
        means = [np.mean([g.edge_density for g in p]) for p in parts]
        self.assertEqual(means, sorted(means))

    def test_identical_densities_fail(self):
        """Test DegenerateSplitError when all graphs look the same."""
        data = DomainDataset([path_graph(5, 0) for _ in range(6)])
        with self.assertRaises(DegenerateSplitError):
            split_by_density(data, SplitSpec(NODE_DENSITY, 4))

    def test_tied_values_share_a_bin(self):
        """Test node counts 1,2,3,4,4,4,4,4 split into two bins without error."""
        data = DomainDataset([path_graph(n, 0) for n in (1, 2, 3, 4, 4, 4, 4, 4)])
        spec = SplitSpec(NODE_DENSITY, 2)
        parts = split_by_density(data, spec)
        self.assertEqual([[g.n for g in p] for p in parts], [[1, 2, 3], [4, 4, 4, 4, 4]])
        self.assertEqual(spec.boundaries, [1.0, 4.0, 4.0])

    def test_every_bin_nonempty_with_heavy_ties(self):
        """Test one dominant value still leaves every bin populated."""
        sizes = [2] * 10 + [3, 4, 5]
        parts = split_by_density(
            DomainDataset([path_graph(n, 0) for n in sizes]), SplitSpec(NODE_DENSITY, 3)
        )
        self.assertTrue(all(len(p) > 0 for p in parts))
        self.assertEqual([g.n for g in parts[0]], [2] * 10)

    def test_empty_dataset(self):
        """Test EmptyDatasetError for an empty dataset."""
        with self.assertRaises(EmptyDatasetError):
            split_by_density(DomainDataset([]), SplitSpec())

    def test_merge(self):
        """Test merging datasets keeps order and the widest label space."""
        a = DomainDataset([path_graph(3, 0)])
        b = DomainDataset([path_graph(4, 2)])
        merged = merge([a, b])
        self.assertEqual([g.n for g in merged], [3, 4])
        self.assertEqual(merged.num_classes, 3)


class TestSpuriousMotif(unittest.TestCase):
    """Test the Spurious-Motif generator."""

    def test_full_bias(self):
        """Test bias 1.0 gives base == label everywhere."""
        data = generate_spurious_motif(30, 1.0, seed=0)
        self.assertTrue(all(g.env == g.label for g in data))

    def test_zero_bias(self):
        """Test bias 0.0 never pairs base with label."""
        data = generate_spurious_motif(30, 0.0, seed=0)
        self.assertTrue(all(g.env != g.label for g in data))

    def test_balanced_labels(self):
        """Test round-robin labels."""
        data = generate_spurious_motif(300, 0.9, seed=1)
        self.assertEqual(label_histogram(data), [100, 100, 100])

    def test_bias_frequency(self):
        """Test that the base/label agreement rate is close to the bias."""
        data = generate_spurious_motif(600, 0.9, seed=4)
        rate = np.mean([g.env == g.label for g in data])
        self.assertGreater(rate, 0.85)
        self.assertLess(rate, 0.95)

    def test_deterministic(self):
        """Test that the same seed gives identical graphs."""
        a = generate_spurious_motif(12, 0.5, seed=9)
        b = generate_spurious_motif(12, 0.5, seed=9)
        for g, h in zip(a, b):
            np.testing.assert_array_equal(g.adjacency, h.adjacency)

    def test_graph_is_connected(self):
        """Test that base and motif are joined by a bridge."""
        rng = np.random.default_rng(0)
        for label in range(3):
            for base in range(3):
                g = spurious_motif_graph(label, base, rng)
                self.assertTrue(nx.is_connected(nx.from_numpy_array(g.adjacency)))

    def test_dataset_stats(self):
        """Test summary statistics."""
        data = DomainDataset([path_graph(3, 0), path_graph(5, 1)])
        summary = dataset_stats(data)
        self.assertEqual(summary.n_graphs, 2)
        self.assertEqual(summary.mean_nodes, 4.0)
        self.assertEqual(summary.class_histogram, [1, 1])


if __name__ == "__main__":
    unittest.main()
