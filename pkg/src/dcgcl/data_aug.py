"""Data-side augmentations.

All of them keep the topology: node count, edges and membership never change.
PE-channel masking touches only the positional encoding; feature masking and
generative replacement touch only node features; selective node masking
scales both (zero for masked nodes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import GraphBatch, ceil_count
from .mae import MaeLiteModel, generative_augment

DATA_AUG_KINDS = ("identity", "pe_mask", "selective_node_mask", "generative", "feature_mask_baseline")


@dataclass(frozen=True)
class DataAugSpec:
    kind: str = "identity"
    ratio: float = 0.2
    gumbel_temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in DATA_AUG_KINDS:
            raise ValueError(f"unknown data augmentation {self.kind!r}; expected one of {DATA_AUG_KINDS}")
        if not 0 <= self.ratio <= 1:
            raise ValueError(f"ratio must lie in [0, 1], got {self.ratio}")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel_temperature must be positive")


@dataclass
class AugmentedInput:
    features: np.ndarray | Tensor
    pe: np.ndarray | Tensor
    info: dict


def _bernoulli_keep(size: int, p: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(size) < 1.0 - p).astype(np.float64)


def mask_pe_channels(pe: np.ndarray, p: float, rng: np.random.Generator,
                     draws: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Zero whole PE channels; one Bernoulli(1 - p) keep draw per channel."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    keep = _bernoulli_keep(pe.shape[1], p, rng) if draws is None else np.asarray(draws, float)
    if keep.shape != (pe.shape[1],):
        raise ValueError(f"need {pe.shape[1]} channel draws, got shape {keep.shape}")
    return pe * keep[None, :], keep


def feature_mask_baseline(features: np.ndarray, p: float, rng: np.random.Generator,
                          draws: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Zero each feature column with probability ``p``, for every node at once."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    keep = _bernoulli_keep(features.shape[1], p, rng) if draws is None else np.asarray(draws, float)
    return features * keep[None, :], keep


def init_scorer_params(input_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    limit = np.sqrt(6.0 / (input_dim + 1))
    return {"scorer.w": ad.param(rng.uniform(-limit, limit, size=(input_dim, 1))),
            "scorer.b": ad.param(np.zeros((1, 1)))}


def gumbel_noise(size: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(size)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    return -np.log(-np.log(u))


def selective_node_mask(batch: GraphBatch, pe: np.ndarray, scorer: dict[str, Tensor] | None,
                        p: float, temperature: float, rng: np.random.Generator | None = None,
                        noise: np.ndarray | None = None, scores: np.ndarray | None = None
                        ) -> tuple[Tensor, Tensor, np.ndarray]:
    """Mask the ``ceil(p * n)`` least important nodes of each graph.

    Node score is ``w . [x_i, pe_i] + b`` plus Gumbel noise; a per-graph
    softmax at ``temperature`` gives importances ``S``. Masked rows are zeroed;
    kept rows are scaled by ``n_kept * S_i / sum_kept S`` so the scorer
    receives gradient while the hard selection itself is treated as constant.
    ``scores`` (already noisy) or ``noise`` may be injected for testing.

    Returns augmented features, augmented PE and the 0/1 keep mask.
    """
    if not 0 <= p < 1:
        raise ValueError(f"p must lie in [0, 1), got {p}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    n = batch.total_nodes
    if scores is not None:
        s = ad.const(np.asarray(scores, dtype=float).reshape(n, 1))
    else:
        inputs = ad.const(np.concatenate([batch.node_features, pe], axis=1))
        if noise is None:
            noise = gumbel_noise(n, rng)
        s = inputs @ scorer["scorer.w"] + scorer["scorer.b"] + ad.const(np.reshape(noise, (n, 1)))

    onehot = batch.membership_onehot()
    spread = ad.const(np.ones((batch.num_graphs, 1))) @ ad.transpose(s)
    probs = ad.row_softmax(ad.scale(spread, 1.0 / temperature), onehot)
    importance = ad.transpose(ad.const(np.ones((1, batch.num_graphs))) @ probs)

    keep = np.ones(n)
    values = importance.data[:, 0]
    for off, size in zip(batch.offsets, batch.graph_sizes):
        k = min(ceil_count(p, int(size)), int(size) - 1)
        if k:
            local = np.lexsort((np.arange(size), values[off:off + size]))
            keep[off + local[:k]] = 0.0

    kept_per_graph = (onehot * keep[None, :]).sum(axis=1)
    kept_sum = ad.const(onehot * keep[None, :]) @ importance
    denom = ad.gather_rows(kept_sum, batch.membership)
    factor = ad.div(importance * ad.const((keep * kept_per_graph[batch.membership])[:, None]), denom)
    feats = ad.const(batch.node_features) * ad.expand_cols(factor, batch.node_features.shape[1])
    new_pe = ad.const(pe) * ad.expand_cols(factor, pe.shape[1])
    return feats, new_pe, keep


def apply_data_aug(spec: DataAugSpec, batch: GraphBatch, pe: np.ndarray, rng: np.random.Generator,
                   scorer: dict[str, Tensor] | None = None,
                   mae_model: MaeLiteModel | None = None) -> AugmentedInput:
    kind = spec.kind
    if kind == "identity":
        return AugmentedInput(batch.node_features, pe, {})
    if kind == "pe_mask":
        new_pe, keep = mask_pe_channels(pe, spec.ratio, rng)
        return AugmentedInput(batch.node_features, new_pe, {"pe_channels_masked": int((keep == 0).sum())})
    if kind == "feature_mask_baseline":
        feats, keep = feature_mask_baseline(batch.node_features, spec.ratio, rng)
        return AugmentedInput(feats, pe, {"feature_columns_masked": int((keep == 0).sum())})
    if kind == "selective_node_mask":
        if scorer is None:
            raise ValueError("selective_node_mask needs scorer parameters")
        feats, new_pe, keep = selective_node_mask(batch, pe, scorer, spec.ratio,
                                                  spec.gumbel_temperature, rng)
        return AugmentedInput(feats, new_pe, {"nodes_masked": int((keep == 0).sum())})
    if kind == "generative":
        if mae_model is None:
            raise ValueError("generative augmentation needs a pretrained MAE model")
        feats = generative_augment(batch, mae_model, spec.ratio, rng)
        changed = int(np.any(feats != batch.node_features, axis=1).sum())
        return AugmentedInput(feats, pe, {"nodes_regenerated": changed})
    raise ValueError(f"unknown data augmentation {kind!r}")
