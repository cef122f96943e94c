"""Structural basis distillation for graph domain adaptation."""

__version__ = "0.1.0"

from .basis import BasisSet, init_basis, init_basis_anchored, load_basis, save_basis
from .config import DistillConfig, ExperimentConfig, InferConfig, ModelConfig, load_config
from .distill import DistillTrace
from .formatter import ReportFormatter
from .graphdata import DenseGraph, DomainDataset, generate_spurious_motif, load_jsonl, save_jsonl
from .infer import EvalReport, evaluate, retrain_fresh, run_pipeline, train_source_only

__all__ = [
    "BasisSet",
    "DenseGraph",
    "DistillConfig",
    "DistillTrace",
    "DomainDataset",
    "EvalReport",
    "ExperimentConfig",
    "InferConfig",
    "ModelConfig",
    "ReportFormatter",
    "evaluate",
    "generate_spurious_motif",
    "init_basis",
    "init_basis_anchored",
    "load_basis",
    "load_config",
    "load_jsonl",
    "retrain_fresh",
    "run_pipeline",
    "save_basis",
    "save_jsonl",
    "train_source_only",
]
