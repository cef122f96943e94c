"""Learnable prototype graphs with probabilistic adjacency."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import networkx as nx
import numpy as np
from rich.console import Console

from . import diffcore as dc
from .config import substream
from .diffcore import Tensor
from .errors import BasisLoadError, ContractError, EmptyDatasetError
from .graphdata import DenseGraph, DomainDataset, dataset_stats
from .structstats import MomentWeights, moments

console = Console()

BASIS_VERSION = 1
INIT_NOISE = 0.1
DENSITY_CLAMP = (1e-3, 1.0 - 1e-3)
EDGE_LOGIT = 4.0
WL_ITERATIONS = 3


class RealizedGraph(NamedTuple):
    """Differentiable view of a prototype: (0, 1) weights, zero diagonal."""

    adjacency: Tensor
    features: Tensor
    label: int


@dataclass
class PrototypeGraph:
    n_syn: int
    adj_logits: Tensor
    feat_params: Tensor
    label: int


@dataclass
class BasisSet:
    prototypes: List[PrototypeGraph]
    num_classes: int
    creation_config: Dict[str, Any] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.prototypes)

    @property
    def n_syn(self) -> int:
        return self.prototypes[0].n_syn if self.prototypes else 0

    @property
    def feature_dim(self) -> int:
        return self.prototypes[0].feat_params.shape[1] if self.prototypes else 0

    @property
    def labels(self) -> List[int]:
        return [p.label for p in self.prototypes]

    def parameters(self) -> List[Tensor]:
        """Learnable tensors in a fixed order: (adj_logits, feat_params) per prototype."""
        out = []
        for p in self.prototypes:
            out.extend([p.adj_logits, p.feat_params])
        return out


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def _check_init(source: DomainDataset, k: int, n_syn: Optional[int]) -> Tuple[int, int]:
    if not source.graphs:
        raise EmptyDatasetError("cannot initialise a basis from an empty source")
    classes = source.num_classes
    if classes < 1:
        raise ContractError("source dataset has no labels")
    if k < classes:
        raise ContractError(f"K={k} is smaller than the number of classes ({classes})")
    if n_syn is None:
        n_syn = int(round(float(np.median([g.n for g in source.graphs]))))
    if n_syn < 2:
        raise ContractError("n_syn must be >= 2")
    return classes, n_syn


def _class_means(source: DomainDataset) -> List[np.ndarray]:
    overall = np.vstack([g.features for g in source.graphs]).mean(axis=0)
    means = []
    for c in range(source.num_classes):
        rows = [g.features for g in source.graphs if g.label == c]
        means.append(np.vstack(rows).mean(axis=0) if rows else overall)
    return means


def init_basis(
    source: DomainDataset,
    k: int,
    n_syn: Optional[int] = None,
    seed: int = 0,
    creation_config: Optional[Dict[str, Any]] = None,
) -> BasisSet:
    """Initialise K prototypes from source statistics.

    Labels are assigned round-robin over classes. Adjacency logits start at
    logit(mean source density) and features at the class-conditional mean
    source node feature, both plus N(0, 0.1) noise.

    Args:
        source: Labeled source dataset
        k: Number of prototypes (>= number of classes)
        n_syn: Nodes per prototype (default: median source node count)
        seed: Root seed ("basis" stream)
        creation_config: Config snapshot stored with the basis

    Returns:
        BasisSet whose parameters require grad
    """
    classes, n_syn = _check_init(source, k, n_syn)
    density = float(np.clip(dataset_stats(source).mean_density, *DENSITY_CLAMP))
    base_logit = _logit(density)
    class_means = _class_means(source)

    rng = substream(seed, "basis")
    prototypes = []
    for index in range(k):
        label = index % classes
        noise = rng.normal(0.0, INIT_NOISE, size=(n_syn, n_syn))
        logits = base_logit + (noise + noise.T) / 2.0
        feats = class_means[label] + rng.normal(0.0, INIT_NOISE, size=(n_syn, source.feature_dim))
        prototypes.append(
            PrototypeGraph(n_syn, dc.parameter(logits), dc.parameter(feats), label)
        )
    return BasisSet(prototypes, classes, dict(creation_config or {}))


# Source-anchored initialisation


def anchor_indices(
    source: DomainDataset,
    target_moments: np.ndarray,
    gamma: MomentWeights,
    k: int,
    seed: int = 0,
) -> List[int]:
    """Pick one labeled source graph per prototype, close to a sampled target graph.

    Prototype i gets label i mod C. For each prototype a target graph is drawn
    (without replacement while the target lasts) and the unused source graph
    of that label with the smallest gamma-weighted squared moment distance to
    it is taken. Drawing targets this way spreads the anchors over the
    target's structural variety instead of the source's majority patterns.

    Args:
        source: Labeled source dataset
        target_moments: (N_T, 4) target moment rows
        gamma: Moment weights
        k: Number of prototypes
        seed: Root seed ("anchor" stream)

    Returns:
        Source graph index per prototype, or -1 when a label has no graph
        with at least two nodes
    """
    classes = source.num_classes
    targets = np.atleast_2d(np.asarray(target_moments, dtype=np.float64))
    if targets.shape[0] == 0:
        raise EmptyDatasetError("anchoring needs target moments")
    weights = gamma.as_array()

    by_class: Dict[int, List[int]] = {c: [] for c in range(classes)}
    rows: Dict[int, np.ndarray] = {}
    for i, graph in enumerate(source.graphs):
        if graph.label is None or graph.n < 2:
            continue
        by_class[graph.label].append(i)
        rows[i] = moments(graph.adjacency).as_array()

    rng = substream(seed, "anchor")
    drawn = rng.choice(targets.shape[0], size=k, replace=k > targets.shape[0])
    used: set = set()
    anchors = []
    for index in range(k):
        pool = by_class[index % classes]
        candidates = [i for i in pool if i not in used] or pool
        if not candidates:
            anchors.append(-1)
            continue
        t = targets[drawn[index]]
        distances = [float(np.sum(weights * (rows[i] - t) ** 2)) for i in candidates]
        chosen = candidates[int(np.argmin(distances))]
        used.add(chosen)
        anchors.append(chosen)
    return anchors


def node_label_scores(source: DomainDataset) -> List[np.ndarray]:
    """Per node, how strongly its neighbourhood shape indicates its graph's label.

    Nodes are coloured by Weisfeiler-Lehman subgraph hashes; the score is the
    Laplace-smoothed share of that colour's occurrences that sit in graphs
    of the node's own label.
    """
    classes = max(source.num_classes, 1)
    colours = []
    counts: Dict[str, np.ndarray] = {}
    for graph in source.graphs:
        nx_graph = nx.from_numpy_array((graph.adjacency > 0).astype(np.int64))
        hashes = nx.weisfeiler_lehman_subgraph_hashes(nx_graph, iterations=WL_ITERATIONS)
        node_colours = [hashes[v][-1] if hashes.get(v) else "isolated" for v in range(graph.n)]
        colours.append(node_colours)
        if graph.label is None:
            continue
        for colour in node_colours:
            counts.setdefault(colour, np.zeros(classes))[graph.label] += 1.0

    scores = []
    for graph, node_colours in zip(source.graphs, colours):
        row = np.zeros(graph.n)
        if graph.label is not None:
            for v, colour in enumerate(node_colours):
                seen = counts[colour]
                row[v] = (seen[graph.label] + 1.0) / (seen.sum() + classes)
        scores.append(row)
    return scores


def crop_nodes(adjacency: np.ndarray, scores: np.ndarray, size: int) -> np.ndarray:
    """Sorted indices of ``size`` nodes grown best-first from the top-scoring node.

    The region grows through neighbours of the kept set (highest score first,
    lowest index on ties) and jumps to the best remaining node only when the
    kept component is exhausted. Graphs with at most ``size`` nodes are kept whole.
    """
    n = adjacency.shape[0]
    if n <= size:
        return np.arange(n)
    kept = [int(np.argmax(scores))]
    inside = np.zeros(n, dtype=bool)
    inside[kept[0]] = True
    while len(kept) < size:
        frontier = np.flatnonzero((adjacency[inside].sum(axis=0) > 0) & ~inside)
        pool = frontier if frontier.size else np.flatnonzero(~inside)
        best = int(pool[np.argmax(scores[pool])])
        kept.append(best)
        inside[best] = True
    return np.sort(np.array(kept))


def init_basis_anchored(
    source: DomainDataset,
    target_moments: np.ndarray,
    gamma: MomentWeights,
    k: int,
    n_syn: Optional[int] = None,
    seed: int = 0,
    creation_config: Optional[Dict[str, Any]] = None,
) -> BasisSet:
    """Initialise K prototypes from real source graphs of their own label.

    Each prototype copies the structure of its anchor (see ``anchor_indices``):
    logits are +EDGE_LOGIT on the anchor's edges and -EDGE_LOGIT elsewhere,
    plus N(0, 0.1) noise. Anchors larger than n_syn are cropped to their most
    label-specific connected region (see ``crop_nodes``); smaller ones are
    padded with isolated nodes whose features are the class mean. A label
    without usable source graphs falls back to the density prior.

    Returns:
        BasisSet whose creation_config records the anchors under "anchors"
    """
    classes, n_syn = _check_init(source, k, n_syn)
    anchors = anchor_indices(source, target_moments, gamma, k, seed)
    scores = node_label_scores(source)
    density = float(np.clip(dataset_stats(source).mean_density, *DENSITY_CLAMP))
    class_means = _class_means(source)

    rng = substream(seed, "basis")
    prototypes = []
    for index, anchor in enumerate(anchors):
        label = index % classes
        logits = np.full((n_syn, n_syn), _logit(density) if anchor < 0 else -EDGE_LOGIT)
        feats = np.tile(class_means[label], (n_syn, 1))
        if anchor >= 0:
            graph = source.graphs[anchor]
            nodes = crop_nodes(graph.adjacency, scores[anchor], n_syn)
            size = len(nodes)
            weights = graph.adjacency[np.ix_(nodes, nodes)]
            logits[:size, :size] = EDGE_LOGIT * (2.0 * weights - 1.0)
            feats[:size] = graph.features[nodes]
        noise = rng.normal(0.0, INIT_NOISE, size=(n_syn, n_syn))
        logits = logits + (noise + noise.T) / 2.0
        feats = feats + rng.normal(0.0, INIT_NOISE, size=(n_syn, source.feature_dim))
        prototypes.append(
            PrototypeGraph(n_syn, dc.parameter(logits), dc.parameter(feats), label)
        )
    config = dict(creation_config or {})
    config["anchors"] = anchors
    return BasisSet(prototypes, classes, config)


def realize(prototype: PrototypeGraph) -> RealizedGraph:
    """A = sigmoid((L + L^T) / 2) with the diagonal masked out; X = feat_params."""
    logits = prototype.adj_logits
    mask = Tensor(1.0 - np.eye(prototype.n_syn))
    adjacency = dc.sigmoid((logits + logits.T) * 0.5) * mask
    return RealizedGraph(adjacency, prototype.feat_params, prototype.label)


def realize_all(basis: BasisSet) -> List[RealizedGraph]:
    return [realize(p) for p in basis.prototypes]


def basis_dataset(basis: BasisSet, name: str = "basis") -> DomainDataset:
    """Weighted realisations as plain graphs (for statistics and reports)."""
    with dc.no_grad():
        graphs = [
            DenseGraph(r.adjacency.numpy(), r.features.numpy(), r.label)
            for r in realize_all(basis)
        ]
    return DomainDataset(graphs, name=name, num_classes=basis.num_classes)


def export_thresholded(basis: BasisSet, threshold: float = 0.5, name: str = "basis") -> DomainDataset:
    """Binary graphs keeping edges whose probability exceeds ``threshold``."""
    weighted = basis_dataset(basis, name)
    graphs = [
        DenseGraph((g.adjacency > threshold).astype(np.float64), g.features, g.label)
        for g in weighted.graphs
    ]
    return DomainDataset(graphs, name=name, num_classes=basis.num_classes)


# Checkpoints


def basis_to_dict(basis: BasisSet) -> Dict[str, Any]:
    return {
        "version": BASIS_VERSION,
        "k": basis.k,
        "n_syn": basis.n_syn,
        "num_classes": basis.num_classes,
        "feature_dim": basis.feature_dim,
        "prototypes": [
            {
                "label": p.label,
                "adj_logits": p.adj_logits.data.tolist(),
                "feat_params": p.feat_params.data.tolist(),
            }
            for p in basis.prototypes
        ],
        "config": basis.creation_config,
    }


def basis_from_dict(payload: Any) -> BasisSet:
    if not isinstance(payload, dict):
        raise BasisLoadError("basis checkpoint must be a JSON object")
    if payload.get("version") != BASIS_VERSION:
        raise BasisLoadError(
            f"unsupported basis version {payload.get('version')!r} (expected {BASIS_VERSION})"
        )
    try:
        k = int(payload["k"])
        n_syn = int(payload["n_syn"])
        num_classes = int(payload["num_classes"])
        feature_dim = int(payload["feature_dim"])
        prototypes = []
        for entry in payload["prototypes"]:
            logits = np.array(entry["adj_logits"], dtype=np.float64)
            feats = np.array(entry["feat_params"], dtype=np.float64)
            label = int(entry["label"])
            if logits.shape != (n_syn, n_syn) or feats.shape != (n_syn, feature_dim):
                raise BasisLoadError("prototype tensor shapes disagree with header")
            if not 0 <= label < num_classes:
                raise BasisLoadError(f"prototype label {label} out of range")
            prototypes.append(
                PrototypeGraph(n_syn, dc.parameter(logits), dc.parameter(feats), label)
            )
        config = payload["config"]
    except (KeyError, TypeError, ValueError) as e:
        raise BasisLoadError(f"corrupt basis checkpoint: {e}") from None
    if len(prototypes) != k:
        raise BasisLoadError(f"header says K={k} but found {len(prototypes)} prototypes")
    return BasisSet(prototypes, num_classes, config)


def save_basis(basis: BasisSet, path: str, silent: bool = True) -> None:
    """Write a basis checkpoint as JSON."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(basis_to_dict(basis), f)
        f.write("\n")
    if not silent:
        console.print(f"[bold green]Saved basis ({basis.k} prototypes) to {path}[/bold green]")


def load_basis(path: str) -> BasisSet:
    """Read a basis checkpoint; nothing partial is returned on failure.

    Raises:
        BasisLoadError: If the file is missing, truncated, corrupt or has another version
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise BasisLoadError(f"basis checkpoint not found: {path}") from None
    except json.JSONDecodeError as e:
        raise BasisLoadError(f"cannot parse basis checkpoint {path}: {e.msg}") from None
    return basis_from_dict(payload)
