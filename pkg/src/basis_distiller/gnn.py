"""GIN graph classifier on diffcore tensors."""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import diffcore as dc
from .config import ModelConfig, substream
from .diffcore import Tensor
from .errors import ContractError, DimensionError, DomainError

CHECKPOINT_VERSION = 1


@dataclass
class GinParams:
    """All classifier weights, keyed by name, plus the config they were built for.

    Tensor order is the insertion order of ``tensors`` and is stable, so
    gradients and optimizer state can be kept as parallel lists.
    """

    cfg: ModelConfig
    tensors: Dict[str, Tensor]

    @property
    def names(self) -> List[str]:
        return list(self.tensors)

    def values(self) -> List[Tensor]:
        return list(self.tensors.values())

    def replace(self, values: Sequence[Tensor]) -> "GinParams":
        """Same names and config, new tensors (used by functional updates)."""
        return GinParams(self.cfg, dict(zip(self.tensors, values)))

    def detached(self, requires_grad: bool = False) -> "GinParams":
        return GinParams(
            self.cfg,
            {k: dc.Tensor(v.data, requires_grad=requires_grad) for k, v in self.tensors.items()},
        )

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


class GraphBatch:
    """Several graphs packed as one block-diagonal graph.

    ``pool`` is a (B x N_total) matrix whose row b averages the nodes of graph b,
    which makes mean readout a single matmul.
    """

    def __init__(self, graphs: Sequence, labels: Optional[Sequence[Optional[int]]] = None):
        if not graphs:
            raise ContractError("cannot batch zero graphs")
        adjs = [dc.as_tensor(g.adjacency) for g in graphs]
        feats = [dc.as_tensor(g.features) for g in graphs]
        sizes = [a.shape[0] for a in adjs]
        self.adjacency = adjs[0] if len(adjs) == 1 else dc.block_diag(adjs)
        self.features = feats[0] if len(feats) == 1 else dc.vstack(feats)
        pool = np.zeros((len(graphs), sum(sizes)))
        start = 0
        for b, size in enumerate(sizes):
            pool[b, start : start + size] = 1.0 / size
            start += size
        self.pool = Tensor(pool)
        self.sizes = sizes
        if labels is None:
            labels = [getattr(g, "label", None) for g in graphs]
        self.labels = list(labels)

    def __len__(self) -> int:
        return len(self.sizes)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, seed: int, *keys: int, stream: str = "init") -> GinParams:
    """Glorot-uniform weights and zero biases, deterministic per (seed, keys).

    Args:
        cfg: Model shape; num_classes and feature_dim must be set
        seed: Root seed
        *keys: Extra stream keys (e.g. outer step index for proxies)
        stream: Seed sub-stream name

    Returns:
        Fresh GinParams whose tensors require grad
    """
    cfg.validate()
    if cfg.num_classes < 1 or cfg.feature_dim < 1:
        raise ContractError("model config needs num_classes and feature_dim")
    rng = substream(seed, stream, *keys)
    tensors: Dict[str, Tensor] = {}
    width_in = cfg.feature_dim
    for layer in range(cfg.layers):
        tensors[f"layer{layer}.w1"] = dc.parameter(_glorot(rng, width_in, cfg.hidden))
        tensors[f"layer{layer}.b1"] = dc.parameter(np.zeros((1, cfg.hidden)))
        tensors[f"layer{layer}.w2"] = dc.parameter(_glorot(rng, cfg.hidden, cfg.hidden))
        tensors[f"layer{layer}.b2"] = dc.parameter(np.zeros((1, cfg.hidden)))
        width_in = cfg.hidden
    tensors["head.w"] = dc.parameter(_glorot(rng, cfg.hidden, cfg.num_classes))
    tensors["head.b"] = dc.parameter(np.zeros((1, cfg.num_classes)))
    return GinParams(dataclasses.replace(cfg), tensors)


def embed(
    batch: GraphBatch,
    params: GinParams,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Mean-pooled node embeddings after the last GIN layer (B x hidden)."""
    cfg = params.cfg
    h = batch.features
    if h.shape[1] != cfg.feature_dim:
        raise DimensionError(
            f"model expects feature_dim {cfg.feature_dim}, got {h.shape[1]}"
        )
    a = batch.adjacency
    drop = train_mode and cfg.dropout > 0
    if drop and rng is None:
        raise ContractError("train_mode with dropout needs an rng")
    for layer in range(cfg.layers):
        agg = a @ h
        if cfg.eps_gin == 0.0:
            agg = h + agg
        else:
            agg = h * (1.0 + cfg.eps_gin) + agg
        hidden = dc.relu(agg @ params[f"layer{layer}.w1"] + params[f"layer{layer}.b1"])
        h = dc.relu(hidden @ params[f"layer{layer}.w2"] + params[f"layer{layer}.b2"])
        if drop:
            keep = (rng.random(h.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
            h = h * Tensor(keep)
    return batch.pool @ h


def forward(
    batch: GraphBatch,
    params: GinParams,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Logits (B x C) for every graph in the batch."""
    readout = embed(batch, params, train_mode, rng)
    return readout @ params["head.w"] + params["head.b"]


def cross_entropy(logits: Tensor, labels: Union[int, Sequence[int]]) -> Tensor:
    """Mean of -log softmax(logits)[label] over rows, with max subtraction."""
    logits = dc.as_tensor(logits)
    if isinstance(labels, (int, np.integer)):
        labels = [int(labels)]
    if logits.ndim == 1:
        logits = logits.reshape(1, logits.shape[0])
    rows, classes = logits.shape
    if len(labels) != rows:
        raise DimensionError(f"{rows} logit rows but {len(labels)} labels")
    onehot = np.zeros((rows, classes))
    for r, label in enumerate(labels):
        if label is None or not 0 <= label < classes:
            raise DomainError(f"label {label} outside [0, {classes})")
        onehot[r, label] = 1.0
    shifted = logits - Tensor(logits.data.max(axis=1, keepdims=True))
    log_norm = dc.log(dc.exp(shifted).sum(axis=1))
    picked = (shifted * Tensor(onehot)).sum(axis=1)
    return (log_norm - picked).mean()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(logits: Union[Tensor, np.ndarray, Sequence[float]]) -> int:
    """Argmax of one logit vector; ties go to the lowest index."""
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    values = values.reshape(-1)
    if values.size < 1:
        raise ContractError("predict needs at least one class")
    return int(np.argmax(values))


def predict_batch(logits: Union[Tensor, np.ndarray]) -> np.ndarray:
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(values, axis=1)


# Checkpoints


def params_to_dict(params: GinParams) -> Dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(params.cfg),
        "tensors": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.tensors.items()
        },
    }


def params_from_dict(payload: Dict) -> GinParams:
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported parameter checkpoint version {payload.get('version')}")
    cfg = ModelConfig(**payload["config"])
    tensors = {
        name: dc.parameter(np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]))
        for name, entry in payload["tensors"].items()
    }
    return GinParams(cfg, tensors)


def save_params(params: GinParams, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(params_to_dict(params), f)
        f.write("\n")


def load_params(path: str) -> GinParams:
    with open(path, "r", encoding="utf-8") as f:
        return params_from_dict(json.load(f))
