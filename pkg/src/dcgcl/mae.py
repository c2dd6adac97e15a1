"""A one-layer masked graph autoencoder used to generate replacement node features.

Training follows the mask / encode / re-mask / decode recipe with a scaled
cosine error (exponent 2) on the masked rows only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .encoder import _glorot, gin_aggregate
from .graphs import Graph, GraphBatch, batch_graphs


@dataclass
class MaeLiteModel:
    feature_dim: int
    hidden_dim: int
    params: dict[str, Tensor]
    losses: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, feature_dim: int, hidden_dim: int, rng: np.random.Generator) -> "MaeLiteModel":
        p = {
            "mae.enc.W": _glorot(rng, feature_dim, hidden_dim),
            "mae.enc.b": np.zeros((1, hidden_dim)),
            "mae.dec.W": _glorot(rng, hidden_dim, feature_dim),
            "mae.dec.b": np.zeros((1, feature_dim)),
            "mae.mask_token": np.zeros((1, feature_dim)),
            "mae.remask_token": np.zeros((1, hidden_dim)),
        }
        return cls(feature_dim, hidden_dim, {k: ad.param(v) for k, v in p.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def config(self) -> dict:
        return {"kind": "mae", "feature_dim": self.feature_dim, "hidden_dim": self.hidden_dim}


def sample_node_subset(batch: GraphBatch, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean node mask with ``round(ratio * n_g)`` uniformly chosen nodes per graph."""
    chosen = np.zeros(batch.total_nodes, dtype=bool)
    for off, n in zip(batch.offsets, batch.graph_sizes):
        k = min(int(np.floor(ratio * n + 0.5)), int(n))
        if k:
            chosen[off + rng.permutation(int(n))[:k]] = True
    return chosen


def _replace_rows(x: Tensor, chosen: np.ndarray, token: Tensor) -> Tensor:
    keep = ad.const((~chosen).astype(float)[:, None])
    sel = ad.const(chosen.astype(float)[:, None])
    return ad.mul(x, ad.expand_cols(keep, x.shape[1])) + sel @ token


def reconstruct(model: MaeLiteModel, batch: GraphBatch, chosen: np.ndarray) -> Tensor:
    """Mask ``chosen`` rows, encode, re-mask, decode; returns the full decoded grid."""
    p = model.params
    x_masked = _replace_rows(ad.const(batch.node_features), chosen, p["mae.mask_token"])
    h = ad.relu(gin_aggregate(x_masked, batch) @ p["mae.enc.W"] + p["mae.enc.b"])
    h = _replace_rows(h, chosen, p["mae.remask_token"])
    return gin_aggregate(h, batch) @ p["mae.dec.W"] + p["mae.dec.b"]


def sce_loss(recon: Tensor, target: np.ndarray, chosen: np.ndarray) -> Tensor:
    idx = np.flatnonzero(chosen)
    pred = ad.gather_rows(recon, idx)
    tgt = target[idx]
    tgt = tgt / np.maximum(np.linalg.norm(tgt, axis=1, keepdims=True), 1e-12)
    norm = ad.sqrt(ad.row_sum(pred * pred) + ad.const(np.full((idx.size, 1), 1e-12)))
    cos = ad.row_sum(ad.div(pred, ad.expand_cols(norm, pred.shape[1])) * ad.const(tgt))
    err = ad.const(np.ones(cos.shape)) - cos
    return ad.mean(err * err)  # scaled cosine error, gamma = 2


def pretrain_mae(graphs: list[Graph], mask_ratio: float = 0.5, epochs: int = 50,
                 rng: np.random.Generator | None = None, hidden_dim: int = 64,
                 batch_size: int = 32, lr: float = 1e-3) -> MaeLiteModel:
    """Fit a :class:`MaeLiteModel` on ``graphs``.

    ``model.losses[e]`` is the loss on a fixed evaluation mask after ``e``
    epochs, so ``losses[0]`` is the untrained loss.
    """
    if not graphs:
        raise ValueError("empty dataset")
    if not 0 < mask_ratio < 1:
        raise ValueError("mask_ratio must lie in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng(0)
    model = MaeLiteModel.init(graphs[0].feature_dim, hidden_dim, rng)
    full = batch_graphs(graphs)
    eval_mask = sample_node_subset(full, mask_ratio, np.random.default_rng(12345))
    if not eval_mask.any():
        raise ValueError(f"mask_ratio {mask_ratio} masks no node in any graph")

    def eval_loss() -> float:
        return sce_loss(reconstruct(model, full, eval_mask), full.node_features, eval_mask).item()

    model.losses.append(eval_loss())
    state = AdamState(learning_rate=lr)
    for _ in range(epochs):
        order = rng.permutation(len(graphs))
        for start in range(0, len(graphs), batch_size):
            batch = batch_graphs([graphs[i] for i in order[start:start + batch_size]])
            chosen = sample_node_subset(batch, mask_ratio, rng)
            if not chosen.any():
                continue
            for t in model.params.values():
                t.zero_grad()
            loss = sce_loss(reconstruct(model, batch, chosen), batch.node_features, chosen)
            loss.backward()
            adam_step({k: v.data for k, v in model.params.items()},
                      ad.collect_grads(model.params), state)
        model.losses.append(eval_loss())
    return model


def generative_augment(batch: GraphBatch, model: MaeLiteModel, p: float,
                       rng: np.random.Generator, subset: np.ndarray | None = None) -> np.ndarray:
    """Features with rows in the sampled subset replaced by reconstructions."""
    if model.feature_dim != batch.node_features.shape[1]:
        raise ValueError(f"MAE feature_dim {model.feature_dim} != batch feature dim "
                         f"{batch.node_features.shape[1]}")
    chosen = sample_node_subset(batch, p, rng) if subset is None else np.asarray(subset, bool)
    if not chosen.any():
        return batch.node_features
    recon = reconstruct(model, batch, chosen).data
    return np.where(chosen[:, None], recon, batch.node_features)
