"""Graph data model, JSON Lines IO, density splitting and Spurious-Motif generation."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import networkx as nx
import numpy as np
from rich.console import Console

from .config import substream
from .errors import (
    DegenerateSplitError,
    EmptyDatasetError,
    GraphParseError,
    SchemaError,
)

console = Console()

NODE_DENSITY = "node_density"
EDGE_DENSITY = "edge_density"
CRITERIA = (NODE_DENSITY, EDGE_DENSITY)

BASE_SHAPES = ("tree", "ladder", "wheel")
MOTIF_SHAPES = ("cycle", "house", "crane")
BASE_SIZE_RANGE = (8, 20)


@dataclass
class DenseGraph:
    """One graph: symmetric weighted adjacency, node features, optional label.

    ``env`` optionally records the Spurious-Motif base graph index.
    """

    adjacency: np.ndarray
    features: np.ndarray
    label: Optional[int] = None
    env: Optional[int] = None

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=np.float64)
        feats = np.array(self.features, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise SchemaError(f"adjacency must be square, got shape {adj.shape}")
        if feats.ndim != 2 or feats.shape[0] != adj.shape[0]:
            raise SchemaError(
                f"features need {adj.shape[0]} rows, got shape {feats.shape}"
            )
        if not np.array_equal(adj, adj.T):
            raise SchemaError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise SchemaError("adjacency must have a zero diagonal")
        if np.any(adj < 0) or np.any(adj > 1):
            raise SchemaError("edge weights must lie in [0, 1]")
        adj.flags.writeable = False
        feats.flags.writeable = False
        self.adjacency = adj
        self.features = feats

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))

    @property
    def edge_density(self) -> float:
        """Edge count over n(n-1)/2; 0 for graphs with fewer than two nodes."""
        if self.n < 2:
            return 0.0
        return self.num_edges / (self.n * (self.n - 1) / 2)

    @classmethod
    def from_networkx(
        cls,
        graph: nx.Graph,
        features: Optional[np.ndarray] = None,
        label: Optional[int] = None,
        env: Optional[int] = None,
    ) -> "DenseGraph":
        """Build from a networkx graph whose nodes are 0..n-1."""
        n = graph.number_of_nodes()
        adj = nx.to_numpy_array(graph, nodelist=range(n), weight=None, dtype=np.float64)
        if features is None:
            features = np.ones((n, 1))
        return cls(adj, features, label, env)


@dataclass
class DomainDataset:
    """A named collection of graphs sharing one feature dimension and label space."""

    graphs: List[DenseGraph] = field(default_factory=list)
    name: str = "dataset"
    num_classes: int = 0
    feature_dim: int = 0

    def __post_init__(self):
        dims = {g.feature_dim for g in self.graphs}
        if len(dims) > 1:
            raise SchemaError(f"graphs in {self.name!r} disagree on feature_dim: {sorted(dims)}")
        if dims:
            self.feature_dim = dims.pop()
        labels = [g.label for g in self.graphs if g.label is not None]
        if labels:
            if min(labels) < 0:
                raise SchemaError("labels must be non-negative")
            self.num_classes = max(self.num_classes, max(labels) + 1)

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self) -> Iterator[DenseGraph]:
        return iter(self.graphs)

    def __getitem__(self, index: int) -> DenseGraph:
        return self.graphs[index]

    @property
    def labels(self) -> List[Optional[int]]:
        return [g.label for g in self.graphs]

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "DomainDataset":
        return DomainDataset(
            [self.graphs[i] for i in indices],
            name=name or self.name,
            num_classes=self.num_classes,
            feature_dim=self.feature_dim,
        )

    def require_nonempty(self, role: str = "dataset") -> None:
        if not self.graphs:
            raise EmptyDatasetError(f"{role} {self.name!r} has no graphs")


@dataclass
class SplitSpec:
    """How to cut a dataset into density domains."""

    criterion: str = NODE_DENSITY
    num_bins: int = 4
    boundaries: List[float] = field(default_factory=list)


@dataclass
class DatasetSummary:
    n_graphs: int
    mean_nodes: float
    std_nodes: float
    mean_density: float
    class_histogram: List[int]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_graphs": self.n_graphs,
            "mean_nodes": self.mean_nodes,
            "std_nodes": self.std_nodes,
            "mean_density": self.mean_density,
            "class_histogram": list(self.class_histogram),
        }


# IO


def _parse_record(record: Any, line_no: int) -> DenseGraph:
    if not isinstance(record, dict):
        raise GraphParseError("record must be a JSON object", line_no)
    try:
        n = record["n"]
        edges = record["edges"]
        features = record["features"]
    except KeyError as e:
        raise GraphParseError(f"missing key {e.args[0]!r}", line_no) from None
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise GraphParseError(f"'n' must be a positive integer, got {n!r}", line_no)
    weights = record.get("weights")
    if weights is not None and len(weights) != len(edges):
        raise GraphParseError("'weights' must be parallel to 'edges'", line_no)

    adj = np.zeros((n, n))
    for k, edge in enumerate(edges):
        if (
            not isinstance(edge, list)
            or len(edge) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in edge)
        ):
            raise GraphParseError(f"edge {k} must be a pair of integers", line_no)
        i, j = edge
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise GraphParseError(f"edge {k} ({i}, {j}) is a self-loop or out of range", line_no)
        w = 1.0 if weights is None else float(weights[k])
        if not 0.0 <= w <= 1.0:
            raise GraphParseError(f"edge {k} weight {w} outside [0, 1]", line_no)
        adj[i, j] = adj[j, i] = w

    try:
        feats = np.array(features, dtype=np.float64)
    except (TypeError, ValueError):
        raise GraphParseError("'features' must be an n x d list of numbers", line_no) from None
    if feats.ndim != 2 or feats.shape[0] != n:
        raise GraphParseError(f"'features' must have {n} rows of equal length", line_no)

    label = record.get("label")
    if label is not None and (not isinstance(label, int) or isinstance(label, bool) or label < 0):
        raise GraphParseError(f"'label' must be a non-negative integer, got {label!r}", line_no)
    env = record.get("env")
    if env is not None and not isinstance(env, int):
        raise GraphParseError(f"'env' must be an integer, got {env!r}", line_no)
    return DenseGraph(adj, feats, label, env)


def load_jsonl(path: str, name: Optional[str] = None, silent: bool = True) -> DomainDataset:
    """Load a JSON Lines graph file.

    Args:
        path: File with one graph object per line
        name: Dataset name (defaults to the file stem)
        silent: If False, print a summary line

    Returns:
        DomainDataset with symmetrised adjacencies

    Raises:
        FileNotFoundError: If the file doesn't exist
        GraphParseError: If a line is malformed (carries the line number)
        SchemaError: If graphs disagree on feature dimension
    """
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Graph file not found: {path}")

    graphs = []
    dims = set()
    with open(file_path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise GraphParseError(f"invalid JSON: {e.msg}", line_no) from None
            graph = _parse_record(record, line_no)
            dims.add(graph.feature_dim)
            if len(dims) > 1:
                raise SchemaError(f"line {line_no}: inconsistent feature_dim {sorted(dims)}")
            graphs.append(graph)

    dataset = DomainDataset(graphs, name=name or file_path.stem)
    if not silent:
        console.print(f"[bold green]Loaded {len(graphs)} graphs from {path}[/bold green]")
    return dataset


def graph_to_record(graph: DenseGraph) -> Dict[str, Any]:
    rows, cols = np.nonzero(np.triu(graph.adjacency, k=1))
    weights = [float(graph.adjacency[i, j]) for i, j in zip(rows, cols)]
    record: Dict[str, Any] = {
        "n": graph.n,
        "edges": [[int(i), int(j)] for i, j in zip(rows, cols)],
        "features": graph.features.tolist(),
    }
    if graph.label is not None:
        record["label"] = int(graph.label)
    if any(w != 1.0 for w in weights):
        record["weights"] = weights
    if graph.env is not None:
        record["env"] = int(graph.env)
    return record


def save_jsonl(dataset: DomainDataset, path: str, silent: bool = True) -> None:
    """Write a dataset as JSON Lines (UTF-8, LF line endings)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for graph in dataset.graphs:
            f.write(json.dumps(graph_to_record(graph)) + "\n")
    if not silent:
        console.print(f"[bold green]Saved {len(dataset)} graphs to {path}[/bold green]")


# Domain splitting


def density_statistic(graph: DenseGraph, criterion: str) -> float:
    if criterion == NODE_DENSITY:
        return float(graph.n)
    if criterion == EDGE_DENSITY:
        return graph.edge_density
    raise ValueError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")


def split_by_density(dataset: DomainDataset, spec: SplitSpec) -> List[DomainDataset]:
    """Partition a dataset into near-equal-count bins of a density statistic.

    Cut points are distinct statistic values, each placed where the count of
    graphs below it is closest to the bin's equal-count share, so tied values
    always share a bin. Bin i covers [b_i, b_{i+1}) with the last bin closed;
    bins come out in ascending density order and keep the original graph order
    inside.

    Args:
        dataset: Non-empty dataset
        spec: Criterion and bin count; ``spec.boundaries`` is filled in

    Returns:
        One non-empty dataset per bin, named M0..M{k-1}

    Raises:
        DegenerateSplitError: If the statistic has fewer distinct values than bins
    """
    dataset.require_nonempty()
    if spec.num_bins < 2:
        raise ValueError("num_bins must be >= 2")
    values = np.array([density_statistic(g, spec.criterion) for g in dataset.graphs])
    distinct, counts = np.unique(values, return_counts=True)
    if len(distinct) < spec.num_bins:
        raise DegenerateSplitError(
            f"{len(distinct)} distinct {spec.criterion} values "
            f"cannot form {spec.num_bins} bins"
        )
    below = np.concatenate([[0], np.cumsum(counts)[:-1]])
    cuts: List[int] = []
    previous = 0
    for b in range(1, spec.num_bins):
        lo, hi = previous + 1, len(distinct) - (spec.num_bins - b)
        share = b * len(values) / spec.num_bins
        previous = lo + int(np.argmin(np.abs(below[lo : hi + 1] - share)))
        cuts.append(previous)
    inner = distinct[cuts]
    spec.boundaries = [float(distinct[0]), *(float(v) for v in inner), float(distinct[-1])]

    members: List[List[int]] = [[] for _ in range(spec.num_bins)]
    for index, value in enumerate(values):
        members[int(np.searchsorted(inner, value, side="right"))].append(index)
    return [dataset.subset(idx, name=f"M{b}") for b, idx in enumerate(members)]


def merge(datasets: Sequence[DomainDataset], name: str = "merged") -> DomainDataset:
    graphs = [g for ds in datasets for g in ds.graphs]
    num_classes = max((ds.num_classes for ds in datasets), default=0)
    return DomainDataset(graphs, name=name, num_classes=num_classes)


# Spurious-Motif


def _base_graph(kind: str, n: int, rng: np.random.Generator) -> nx.Graph:
    if kind == "tree":
        prufer = [int(v) for v in rng.integers(0, n, size=n - 2)]
        return nx.from_prufer_sequence(prufer)
    if kind == "ladder":
        graph = nx.ladder_graph(n // 2)
        if n % 2:
            graph.add_edge(0, n - 1)
        return graph
    if kind == "wheel":
        return nx.wheel_graph(n)
    raise ValueError(f"unknown base graph {kind!r}")


def _motif_graph(kind: str) -> nx.Graph:
    if kind == "cycle":
        return nx.cycle_graph(5)
    if kind == "house":
        # square 1-2-3-4 under the roof triangle 0-1-4
        graph = nx.cycle_graph(5)
        graph.add_edge(1, 4)
        return graph
    if kind == "crane":
        graph = nx.star_graph(4)
        graph.add_edge(1, 2)
        return graph
    raise ValueError(f"unknown motif {kind!r}")


def spurious_motif_graph(label: int, base: int, rng: np.random.Generator) -> DenseGraph:
    """Base graph with the label's motif attached by a single bridge edge."""
    n_base = int(rng.integers(BASE_SIZE_RANGE[0], BASE_SIZE_RANGE[1] + 1))
    base_graph = _base_graph(BASE_SHAPES[base], n_base, rng)
    motif = _motif_graph(MOTIF_SHAPES[label])
    graph = nx.disjoint_union(base_graph, motif)
    offset = base_graph.number_of_nodes()
    anchor = int(rng.integers(0, offset))
    target = offset + int(rng.integers(0, motif.number_of_nodes()))
    graph.add_edge(anchor, target)
    return DenseGraph.from_networkx(graph, label=label, env=base)


def generate_spurious_motif(
    n_graphs: int, bias: float, seed: int, name: str = "spurious_motif"
) -> DomainDataset:
    """Generate a 3-class Spurious-Motif dataset.

    Labels are assigned round-robin. With probability ``bias`` the base graph
    index equals the label; otherwise it is one of the two other bases, chosen
    uniformly, so bias = 1/3 gives no correlation at all.

    Args:
        n_graphs: Number of graphs (>= 3)
        bias: Probability that base index == label
        seed: Root seed ("data" stream)
        name: Dataset name

    Returns:
        DomainDataset with constant 1-dimensional node features
    """
    if n_graphs < 3:
        raise ValueError("n_graphs must be >= 3")
    if not 0.0 <= bias <= 1.0:
        raise ValueError("bias must be in [0, 1]")
    rng = substream(seed, "data")
    graphs = []
    for i in range(n_graphs):
        label = i % len(MOTIF_SHAPES)
        if rng.random() < bias:
            base = label
        else:
            others = [b for b in range(len(BASE_SHAPES)) if b != label]
            base = others[int(rng.integers(0, len(others)))]
        graphs.append(spurious_motif_graph(label, base, rng))
    return DomainDataset(graphs, name=name, num_classes=len(MOTIF_SHAPES), feature_dim=1)


# Summaries


def label_histogram(dataset: DomainDataset) -> List[int]:
    counts = [0] * dataset.num_classes
    for label in dataset.labels:
        if label is not None:
            counts[label] += 1
    return counts


def dataset_stats(dataset: DomainDataset) -> DatasetSummary:
    """Mean/std node count, mean weighted density and class histogram."""
    dataset.require_nonempty()
    nodes = np.array([g.n for g in dataset.graphs], dtype=np.float64)
    densities = [
        float(g.adjacency.sum() / (g.n * (g.n - 1))) if g.n > 1 else 0.0
        for g in dataset.graphs
    ]
    return DatasetSummary(
        n_graphs=len(dataset),
        mean_nodes=float(nodes.mean()),
        std_nodes=float(nodes.std()),
        mean_density=float(np.mean(densities)),
        class_histogram=label_histogram(dataset),
    )
