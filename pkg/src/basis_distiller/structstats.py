"""Differentiable geometric moments and Dirichlet energy of (weighted) graphs."""

from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import DegenerateGraphError, DimensionError, EmptyDatasetError
from .graphdata import DomainDataset

EPS = 1e-8
MOMENT_NAMES = ("deg_mean", "deg_std", "density", "tri")
GAMMA_RANGE = (1e-4, 1e4)

MatrixLike = Union[Tensor, np.ndarray]


@dataclass(frozen=True)
class MomentVector:
    deg_mean: float
    deg_std: float
    density: float
    tri: float

    def as_array(self) -> np.ndarray:
        return np.array([self.deg_mean, self.deg_std, self.density, self.tri])

    def to_dict(self):
        return dict(zip(MOMENT_NAMES, self.as_array().tolist()))


@dataclass(frozen=True)
class MomentWeights:
    """Per-moment rescaling factors (gamma) for the geometric alignment loss."""

    gamma: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.gamma) != 4:
            raise ValueError("gamma needs exactly four entries")
        if any(not np.isfinite(g) or g < 0 for g in self.gamma):
            raise ValueError("gamma entries must be finite and >= 0")

    def as_array(self) -> np.ndarray:
        return np.array(self.gamma, dtype=np.float64)


@dataclass
class StructureProfile:
    """Per-graph moments (N x 4) and Dirichlet energies (N,) of a dataset."""

    moments: np.ndarray
    energies: np.ndarray

    @property
    def mean_moments(self) -> np.ndarray:
        return self.moments.mean(axis=0)

    @property
    def mean_energy(self) -> float:
        return float(self.energies.mean())


def _square_tensor(a: MatrixLike, what: str) -> Tensor:
    a = dc.as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} needs a square adjacency, got shape {a.shape}")
    return a


def moment_tensors(adjacency: MatrixLike) -> List[Tensor]:
    """The four moments as differentiable scalars, in MOMENT_NAMES order.

    Raises:
        DegenerateGraphError: If the graph has fewer than two nodes
    """
    a = _square_tensor(adjacency, "moments")
    n = a.shape[0]
    if n < 2:
        raise DegenerateGraphError(f"moments need at least 2 nodes, got {n}")
    degrees = a.sum(axis=1)
    total = a.sum()
    deg_mean = total * (1.0 / n)
    deg_std = dc.sqrt((degrees - deg_mean).square().mean() + EPS)
    density = total * (1.0 / (n * (n - 1) + EPS))
    tri = dc.trace_pow3(a) * (1.0 / (6 * n + EPS))
    return [deg_mean, deg_std, density, tri]


def moments(adjacency: MatrixLike) -> MomentVector:
    """Geometric moments of one graph as plain floats."""
    with dc.no_grad():
        values = [t.item() for t in moment_tensors(adjacency)]
    return MomentVector(*values)


def normalized_laplacian(adjacency: MatrixLike) -> Tensor:
    """I - D^-1/2 A D^-1/2 with weighted degrees.

    Isolated nodes keep a unit diagonal and zero off-diagonal entries.
    """
    a = _square_tensor(adjacency, "normalized_laplacian")
    n = a.shape[0]
    d_inv_sqrt = dc.rsqrt_safe(a.sum(axis=1))
    scaled = a * d_inv_sqrt.reshape(n, 1) * d_inv_sqrt.reshape(1, n)
    return dc.eye(n) - scaled


def dirichlet_energy(adjacency: MatrixLike, features: MatrixLike) -> Tensor:
    """Omega(G) = Tr(X^T L X), differentiable in both arguments."""
    a = _square_tensor(adjacency, "dirichlet_energy")
    x = dc.as_tensor(features)
    if x.ndim != 2 or x.shape[0] != a.shape[0]:
        raise DimensionError(
            f"features need {a.shape[0]} rows, got shape {x.shape}"
        )
    laplacian = normalized_laplacian(a)
    return (x * (laplacian @ x)).sum()


def profile(dataset: DomainDataset) -> StructureProfile:
    """Moments and energies of every graph, in dataset order."""
    dataset.require_nonempty()
    rows = []
    energies = []
    with dc.no_grad():
        for graph in dataset.graphs:
            rows.append([t.item() for t in moment_tensors(graph.adjacency)])
            energies.append(dirichlet_energy(graph.adjacency, graph.features).item())
    return StructureProfile(np.array(rows), np.array(energies))


def default_gamma(target: Union[DomainDataset, StructureProfile]) -> MomentWeights:
    """gamma_m = 1 / (mean target moment^2 + 1e-8), clamped to [1e-4, 1e4]."""
    if isinstance(target, DomainDataset):
        if not target.graphs:
            raise EmptyDatasetError("default_gamma needs a non-empty target")
        target = profile(target)
    means = target.mean_moments
    gamma = np.clip(1.0 / (means**2 + 1e-8), *GAMMA_RANGE)
    return MomentWeights(tuple(float(g) for g in gamma))
