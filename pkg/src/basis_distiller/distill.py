"""Stage 1: bi-level distillation of the dual-aligned structural basis."""

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from rich.console import Console
from rich.progress import Progress

from . import diffcore as dc
from .basis import BasisSet, RealizedGraph, init_basis, init_basis_anchored, realize_all
from .config import DistillConfig, ModelConfig, snapshot, substream
from .diffcore import Tensor
from .errors import ContractError, NonFiniteLossError
from .gnn import GinParams, GraphBatch, cross_entropy, forward, init_params
from .graphdata import DomainDataset
from .optim import Adam, clip_grad_norm, sgd_step
from .structstats import (
    MOMENT_NAMES,
    MomentWeights,
    StructureProfile,
    default_gamma,
    dirichlet_energy,
    moment_tensors,
    profile,
)

console = Console()

TRACE_COLUMNS = [
    "step",
    "L_sem",
    "L_geo",
    "L_spec",
    "total",
    *[f"moment_gap_{name}" for name in MOMENT_NAMES],
    "energy_gap",
    "weighted_moment_gap",
    "basis_energy",
    "target_energy",
    "basis_density",
    "target_density",
    "grad_norm",
    "clipped_norm",
]


@dataclass
class AlignmentGaps:
    """Distance between basis and target in moment and energy space."""

    moment_gap: np.ndarray
    weighted_moment_gap: float
    energy_gap: float
    basis_energy: float
    target_energy: float
    basis_density: float
    target_density: float


@dataclass
class TraceRecord:
    step: int
    sem: float
    geo: float
    spec: float
    total: float
    gaps: AlignmentGaps
    grad_norm: float
    clipped_norm: float

    def as_row(self) -> Dict[str, Any]:
        row = {
            "step": self.step,
            "L_sem": self.sem,
            "L_geo": self.geo,
            "L_spec": self.spec,
            "total": self.total,
        }
        for name, value in zip(MOMENT_NAMES, self.gaps.moment_gap):
            row[f"moment_gap_{name}"] = float(value)
        row.update(
            energy_gap=self.gaps.energy_gap,
            weighted_moment_gap=self.gaps.weighted_moment_gap,
            basis_energy=self.gaps.basis_energy,
            target_energy=self.gaps.target_energy,
            basis_density=self.gaps.basis_density,
            target_density=self.gaps.target_density,
            grad_norm=self.grad_norm,
            clipped_norm=self.clipped_norm,
        )
        return row


@dataclass
class DistillTrace:
    records: List[TraceRecord] = field(default_factory=list)
    gamma: Optional[MomentWeights] = None
    converged_at: Optional[int] = None

    def __len__(self) -> int:
        return len(self.records)

    def rows(self) -> List[Dict[str, Any]]:
        return [r.as_row() for r in self.records]


# Inner loop


def inner_train(
    basis: Union[BasisSet, Sequence[RealizedGraph]],
    model_cfg: ModelConfig,
    cfg: DistillConfig,
    step: int = 0,
    history: Optional[List[float]] = None,
) -> GinParams:
    """Train a freshly seeded proxy GIN on the basis with T_inner GD steps.

    In ``unrolled`` mode every step stays on the tape, so the returned
    parameters are differentiable functions of the basis. In ``first_order``
    mode the first T-1 steps run untracked and only the last step keeps its
    dependence on the basis.

    Args:
        basis: Basis, or its realisations when the caller already has them
        model_cfg: Proxy model shape (num_classes/feature_dim set)
        cfg: Distillation settings (t_inner, lr_inner, meta_mode, seed)
        step: Outer step index; the proxy init is seeded from it
        history: If given, inner losses are appended to it

    Returns:
        Proxy parameters after T_inner steps

    Raises:
        NonFiniteLossError: If an inner loss is NaN/inf
    """
    realized = realize_all(basis) if isinstance(basis, BasisSet) else list(basis)
    batch = GraphBatch(realized)
    params = init_params(model_cfg, cfg.seed, step, stream="inner")
    last = cfg.t_inner - 1
    frozen = None

    for t in range(cfg.t_inner):
        tracked = cfg.meta_mode == "unrolled" or t == last
        if not tracked:
            if frozen is None:
                frozen = GraphBatch(
                    [RealizedGraph(g.adjacency.detach(), g.features.detach(), g.label) for g in realized]
                )
            loss = cross_entropy(forward(frozen, params), frozen.labels)
            _check_finite(loss, "inner", t)
            grads = dc.grad(loss, params.values())
            with dc.no_grad():
                stepped = sgd_step(params.values(), grads, cfg.lr_inner)
            params = params.replace(stepped).detached(requires_grad=True)
        else:
            loss = cross_entropy(forward(batch, params), batch.labels)
            _check_finite(loss, "inner", t)
            grads = dc.grad(loss, params.values(), create_graph=True)
            params = params.replace(sgd_step(params.values(), grads, cfg.lr_inner))
        if history is not None:
            history.append(loss.item())
    return params


def _check_finite(loss: Tensor, stage: str, step: int) -> None:
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLossError(stage, step, value)


# Outer losses


def sem_loss(proxy: GinParams, source_batch: Union[GraphBatch, Sequence]) -> Tensor:
    """Mean cross-entropy of the proxy on labeled source graphs."""
    batch = source_batch if isinstance(source_batch, GraphBatch) else GraphBatch(source_batch)
    if any(label is None for label in batch.labels):
        raise ContractError("semantic loss needs labeled source graphs")
    return cross_entropy(forward(batch, proxy), batch.labels)


def _realized(basis: Union[BasisSet, Sequence[RealizedGraph]]) -> List[RealizedGraph]:
    return realize_all(basis) if isinstance(basis, BasisSet) else list(basis)


def _target_moments(target: Union[DomainDataset, StructureProfile, np.ndarray]) -> np.ndarray:
    if isinstance(target, DomainDataset):
        return profile(target).moments
    if isinstance(target, StructureProfile):
        return target.moments
    return np.atleast_2d(np.asarray(target, dtype=np.float64))


def geo_loss(
    basis: Union[BasisSet, Sequence[RealizedGraph]],
    target_batch: Union[DomainDataset, StructureProfile, np.ndarray],
    gamma: MomentWeights,
) -> Tensor:
    """Gamma-weighted squared moment gap averaged over prototypes and target graphs.

    Target moments are constants, so the average over target graphs reduces
    to mean(t) and mean(t^2) per moment:
    mean_T (x - t)^2 = x^2 - 2 x mean(t) + mean(t^2).
    """
    realized = _realized(basis)
    targets = _target_moments(target_batch)
    if targets.shape[0] == 0:
        raise ContractError("geometric loss needs a non-empty target batch")
    mean_t = targets.mean(axis=0)
    mean_t2 = (targets**2).mean(axis=0)
    weights = gamma.as_array()

    total = None
    for graph in realized:
        for m, value in enumerate(moment_tensors(graph.adjacency)):
            if weights[m] == 0.0:
                continue
            term = (value.square() - value * (2.0 * mean_t[m]) + mean_t2[m]) * weights[m]
            total = term if total is None else total + term
    if total is None:
        return Tensor(0.0)
    return total * (1.0 / len(realized))


def mean_energy(basis: Union[BasisSet, Sequence[RealizedGraph]]) -> Tensor:
    realized = _realized(basis)
    total = None
    for graph in realized:
        energy = dirichlet_energy(graph.adjacency, graph.features)
        total = energy if total is None else total + energy
    return total * (1.0 / len(realized))


def spec_loss(
    basis: Union[BasisSet, Sequence[RealizedGraph]],
    target_set: Union[DomainDataset, StructureProfile, float],
) -> Tensor:
    """Squared gap between the mean basis energy and the mean target energy."""
    if isinstance(target_set, DomainDataset):
        target_set = profile(target_set)
    target_mean = (
        target_set.mean_energy if isinstance(target_set, StructureProfile) else float(target_set)
    )
    return (mean_energy(basis) - target_mean).square()


def alignment_gaps(
    basis: Union[BasisSet, Sequence[RealizedGraph]],
    target: StructureProfile,
    gamma: MomentWeights,
) -> AlignmentGaps:
    """Moment and energy gaps between basis means and target means."""
    realized = _realized(basis)
    with dc.no_grad():
        basis_moments = np.array(
            [[t.item() for t in moment_tensors(g.adjacency)] for g in realized]
        ).mean(axis=0)
        basis_energy = mean_energy(realized).item()
    gap = np.abs(basis_moments - target.mean_moments)
    return AlignmentGaps(
        moment_gap=gap,
        weighted_moment_gap=float(np.sum(gamma.as_array() * gap**2)),
        energy_gap=abs(basis_energy - target.mean_energy),
        basis_energy=basis_energy,
        target_energy=target.mean_energy,
        basis_density=float(basis_moments[2]),
        target_density=float(target.mean_moments[2]),
    )


# Outer loop


def _sample(rng: np.random.Generator, population: int, size: int) -> np.ndarray:
    return rng.choice(population, size=min(size, population), replace=False)


def _has_converged(totals: List[float], cfg: DistillConfig) -> bool:
    window = cfg.convergence_window
    if window <= 0 or len(totals) <= window:
        return False
    previous = totals[-1 - window]
    change = abs(totals[-1] - previous) / max(abs(previous), 1e-12)
    return change < cfg.convergence_tol


def distill(
    source: DomainDataset,
    target: DomainDataset,
    model_cfg: ModelConfig,
    cfg: DistillConfig,
    silent: bool = False,
    on_abort=None,
) -> Tuple[BasisSet, DistillTrace]:
    """Run the outer loop: L_sem + lambda1 L_geo + lambda2 L_spec, Adam on the basis.

    Args:
        source: Labeled source domain
        target: Unlabeled target domain (labels, if present, are ignored)
        model_cfg: Proxy model shape
        cfg: Distillation settings
        silent: If True, suppress the progress bar
        on_abort: Called with the partial trace before a non-finite loss is raised

    Returns:
        Tuple of (final basis, trace with one record per completed outer step)

    Raises:
        NonFiniteLossError: If the outer (or an inner) loss becomes non-finite
    """
    cfg.validate()
    source.require_nonempty("source")
    target.require_nonempty("target")
    model_cfg = dataclasses.replace(
        model_cfg, num_classes=source.num_classes, feature_dim=source.feature_dim
    )
    model_cfg.validate()

    target_profile = profile(target)
    gamma = MomentWeights(tuple(cfg.gamma)) if cfg.gamma is not None else default_gamma(target_profile)
    creation = {"distill": snapshot(cfg), "model": snapshot(model_cfg), "gamma": list(gamma.gamma)}
    if cfg.init == "anchored":
        basis = init_basis_anchored(
            source, target_profile.moments, gamma, cfg.k, cfg.n_syn, cfg.seed, creation_config=creation
        )
    else:
        basis = init_basis(source, cfg.k, cfg.n_syn, cfg.seed, creation_config=creation)
    params = basis.parameters()
    optimizer = Adam(params, lr=cfg.lr_outer)
    trace = DistillTrace(gamma=gamma)
    totals: List[float] = []

    try:
        with Progress(console=console, transient=True, disable=silent) as progress:
            task = progress.add_task("[cyan]Distilling basis...", total=cfg.outer_steps)
            for step in range(cfg.outer_steps):
                realized = realize_all(basis)
                batch_rng = substream(cfg.seed, "batch", step)
                source_idx = _sample(batch_rng, len(source), cfg.batch_source)
                target_idx = _sample(batch_rng, len(target), cfg.batch_target)

                if cfg.use_sem:
                    proxy = inner_train(realized, model_cfg, cfg, step)
                    sem = sem_loss(proxy, [source.graphs[i] for i in source_idx])
                else:
                    sem = Tensor(0.0)
                geo = geo_loss(realized, target_profile.moments[target_idx], gamma)
                spec = spec_loss(realized, target_profile)
                total = sem + geo * cfg.lambda1 + spec * cfg.lambda2

                if not np.isfinite(total.item()):
                    raise NonFiniteLossError("outer", step, total.item())

                grads = [g.data for g in dc.grad(total, params)]
                clipped, norm = clip_grad_norm(grads, cfg.grad_clip)
                clipped_norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in clipped)))
                gaps = alignment_gaps(realized, target_profile, gamma)
                optimizer.step(clipped)

                trace.records.append(
                    TraceRecord(
                        step=step,
                        sem=sem.item(),
                        geo=geo.item(),
                        spec=spec.item(),
                        total=total.item(),
                        gaps=gaps,
                        grad_norm=norm,
                        clipped_norm=clipped_norm,
                    )
                )
                totals.append(total.item())
                progress.update(task, advance=1)
                if _has_converged(totals, cfg):
                    trace.converged_at = step
                    break
    except NonFiniteLossError:
        if on_abort is not None:
            on_abort(trace)
        raise

    if not silent:
        final = alignment_gaps(basis, target_profile, gamma)
        console.print(
            f"[bold green]Distilled {basis.k} prototypes in {len(trace)} steps "
            f"(energy gap {final.energy_gap:.4f}, moment gap {final.weighted_moment_gap:.4f})[/bold green]"
        )
    return basis, trace
