"""Stage 2: train a fresh GIN on the distilled basis and evaluate it on target graphs."""

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.progress import Progress

from . import diffcore as dc
from .basis import BasisSet, RealizedGraph, realize_all
from .config import DistillConfig, InferConfig, ModelConfig, substream
from .distill import DistillTrace, distill, inner_train
from .errors import ConfigError, ContractError, NonFiniteLossError
from .gnn import (
    GinParams,
    GraphBatch,
    cross_entropy,
    embed,
    forward,
    init_params,
    predict_batch,
    softmax,
)
from .graphdata import DomainDataset
from .optim import Adam

console = Console()

EVAL_CHUNK = 256


@dataclass
class EvalReport:
    accuracy: float
    auc: Optional[float]
    per_class_accuracy: List[Optional[float]]
    confusion: List[List[int]]
    n_eval: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "per_class_accuracy": list(self.per_class_accuracy),
            "confusion": [list(row) for row in self.confusion],
            "n_eval": self.n_eval,
        }


@dataclass
class PipelineResult:
    report: EvalReport
    basis: BasisSet
    trace: DistillTrace
    params: GinParams
    ablations: List[str] = field(default_factory=list)
    train_losses: List[float] = field(default_factory=list)


def model_config_from_basis(basis: BasisSet) -> ModelConfig:
    """Model shape recorded in the basis snapshot, sized for the basis."""
    stored = dict(basis.creation_config.get("model", {}))
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in stored.items() if k in known})
    return dataclasses.replace(cfg, num_classes=basis.num_classes, feature_dim=basis.feature_dim)


def _plateaued(losses: List[float], cfg: InferConfig) -> bool:
    window = cfg.early_stop_window
    if window <= 0 or len(losses) <= window:
        return False
    return abs(losses[-1] - losses[-1 - window]) < cfg.early_stop_tol


def retrain_fresh(
    basis: BasisSet,
    cfg: InferConfig,
    model_cfg: Optional[ModelConfig] = None,
    silent: bool = True,
    history: Optional[List[float]] = None,
) -> GinParams:
    """Train a freshly initialised GIN only on the realised prototypes.

    Neither the proxy model nor the source data is an input; the result is a
    function of the basis and the configs alone.

    Args:
        basis: Distilled basis
        cfg: Stage-2 settings (epochs, lr, seed, early stop)
        model_cfg: Model shape (default: the snapshot stored in the basis)
        silent: If True, suppress the progress bar
        history: If given, per-epoch training losses are appended to it

    Returns:
        Trained parameters

    Raises:
        NonFiniteLossError: If the training loss becomes non-finite
    """
    cfg.validate()
    if basis.k == 0:
        raise ContractError("cannot train on an empty basis")
    if model_cfg is None:
        model_cfg = model_config_from_basis(basis)
    else:
        model_cfg = dataclasses.replace(
            model_cfg, num_classes=basis.num_classes, feature_dim=basis.feature_dim
        )
    with dc.no_grad():
        graphs = [
            RealizedGraph(r.adjacency.detach(), r.features.detach(), r.label)
            for r in realize_all(basis)
        ]
    batch = GraphBatch(graphs)
    params = init_params(model_cfg, cfg.seed, stream="init")
    optimizer = Adam(params.values(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses: List[float] = []

    with Progress(console=console, transient=True, disable=silent) as progress:
        task = progress.add_task("[cyan]Training fresh model on basis...", total=cfg.epochs)
        for epoch in range(cfg.epochs):
            rng = substream(cfg.seed, "dropout", epoch)
            loss = cross_entropy(forward(batch, params, train_mode=True, rng=rng), batch.labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLossError("retrain", epoch, value)
            grads = [g.data for g in dc.grad(loss, params.values())]
            optimizer.step(grads)
            losses.append(value)
            progress.update(task, advance=1)
            if _plateaued(losses, cfg):
                break

    if history is not None:
        history.extend(losses)
    return params


def train_source_only(
    source: DomainDataset,
    model_cfg: ModelConfig,
    cfg: InferConfig,
    silent: bool = True,
    history: Optional[List[float]] = None,
) -> GinParams:
    """Baseline: mini-batch Adam training of a GIN directly on source graphs."""
    cfg.validate()
    source.require_nonempty("source")
    model_cfg = dataclasses.replace(
        model_cfg, num_classes=source.num_classes, feature_dim=source.feature_dim
    )
    params = init_params(model_cfg, cfg.seed, stream="init")
    optimizer = Adam(params.values(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses: List[float] = []

    with Progress(console=console, transient=True, disable=silent) as progress:
        task = progress.add_task("[cyan]Training source-only baseline...", total=cfg.epochs)
        for epoch in range(cfg.epochs):
            order = substream(cfg.seed, "batch", epoch).permutation(len(source))
            epoch_loss = 0.0
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                chunk = [source.graphs[i] for i in order[start : start + cfg.batch_size]]
                batch = GraphBatch(chunk)
                rng = substream(cfg.seed, "dropout", epoch, b)
                loss = cross_entropy(forward(batch, params, train_mode=True, rng=rng), batch.labels)
                value = loss.item()
                if not np.isfinite(value):
                    raise NonFiniteLossError("baseline", epoch, value)
                optimizer.step([g.data for g in dc.grad(loss, params.values())])
                epoch_loss += value * len(chunk)
            losses.append(epoch_loss / len(source))
            progress.update(task, advance=1)
            if _plateaued(losses, cfg):
                break

    if history is not None:
        history.extend(losses)
    return params


# Evaluation


def rank_auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """P(score of a positive > score of a negative), ties counted 1/2.

    Returns None unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _logits(params: GinParams, dataset: DomainDataset) -> np.ndarray:
    rows = []
    with dc.no_grad():
        for start in range(0, len(dataset), EVAL_CHUNK):
            batch = GraphBatch(dataset.graphs[start : start + EVAL_CHUNK])
            rows.append(forward(batch, params).numpy())
    return np.vstack(rows)


def evaluate(params: GinParams, target: DomainDataset) -> EvalReport:
    """Accuracy, confusion matrix and (binary only) AUC on labeled target graphs.

    Labels are read here and nowhere in training.
    """
    target.require_nonempty("target")
    labels = target.labels
    if any(label is None for label in labels):
        raise ContractError("evaluation needs labels on every target graph")
    classes = params.cfg.num_classes
    labels = np.array(labels, dtype=np.int64)
    if labels.max() >= classes:
        raise ContractError(f"target label {labels.max()} outside the model's {classes} classes")

    logits = _logits(params, target)
    preds = predict_batch(logits)
    confusion = np.zeros((classes, classes), dtype=np.int64)
    for truth, pred in zip(labels, preds):
        confusion[truth, pred] += 1
    per_class: List[Optional[float]] = []
    for c in range(classes):
        count = int(confusion[c].sum())
        per_class.append(float(confusion[c, c] / count) if count else None)

    auc = None
    if classes == 2:
        auc = rank_auc(softmax(logits)[:, 1], labels)
    return EvalReport(
        accuracy=float(np.trace(confusion) / len(labels)),
        auc=auc,
        per_class_accuracy=per_class,
        confusion=confusion.tolist(),
        n_eval=len(labels),
    )


def embed_dataset(params: GinParams, dataset: DomainDataset) -> np.ndarray:
    """Readout vectors (N x hidden) in eval mode."""
    rows = []
    with dc.no_grad():
        for start in range(0, len(dataset), EVAL_CHUNK):
            batch = GraphBatch(dataset.graphs[start : start + EVAL_CHUNK])
            rows.append(embed(batch, params).numpy())
    return np.vstack(rows)


# Pipeline


def final_proxy(basis: BasisSet, model_cfg: ModelConfig, cfg: DistillConfig, step: int) -> GinParams:
    """Proxy trained on the final basis, detached from it."""
    with dc.no_grad():
        graphs = [
            RealizedGraph(r.adjacency.detach(), r.features.detach(), r.label)
            for r in realize_all(basis)
        ]
    model_cfg = dataclasses.replace(
        model_cfg, num_classes=basis.num_classes, feature_dim=basis.feature_dim
    )
    proxy = inner_train(graphs, model_cfg, dataclasses.replace(cfg, meta_mode="first_order"), step)
    return proxy.detached()


def apply_ablations(cfg: DistillConfig, ablations: Sequence[str]) -> DistillConfig:
    """w/o SE drops L_sem, w/o GE sets lambda1=0, w/o SP sets lambda2=0."""
    unknown = set(ablations) - {"se", "sp", "ge", "tg"}
    if unknown:
        raise ConfigError(f"unknown ablations {sorted(unknown)}")
    cfg = dataclasses.replace(cfg)
    if "se" in ablations:
        cfg.use_sem = False
    if "ge" in ablations:
        cfg.lambda1 = 0.0
    if "sp" in ablations:
        cfg.lambda2 = 0.0
    return cfg


def run_pipeline(
    source: DomainDataset,
    target: DomainDataset,
    model_cfg: ModelConfig,
    distill_cfg: DistillConfig,
    infer_cfg: InferConfig,
    ablations: Sequence[str] = (),
    silent: bool = True,
) -> PipelineResult:
    """Distill, then retrain a fresh model on the basis and evaluate on the target.

    With the ``tg`` ablation the fresh model is skipped and the proxy trained
    on the final basis is evaluated instead.
    """
    ablations = sorted(set(ablations))
    cfg = apply_ablations(distill_cfg, ablations)
    basis, trace = distill(source, target, model_cfg, cfg, silent=silent)
    losses: List[float] = []
    if "tg" in ablations:
        params = final_proxy(basis, model_config_from_basis(basis), cfg, len(trace))
    else:
        params = retrain_fresh(basis, infer_cfg, silent=silent, history=losses)
    report = evaluate(params, target)
    return PipelineResult(report, basis, trace, params, list(ablations), losses)
