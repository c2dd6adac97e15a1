"""GPS-style graph transformer: GIN-style local update plus masked global attention.

Each layer computes an inner transform ``f(H)`` (pre-norm; local and
attention branches summed, then a feed-forward block with its own residual)
and outputs ``ReLU(b * f(H) + H)`` where ``b`` is the layer keep bit. With
every weight zero ``f`` is exactly zero, and with ``b = 0`` the layer is
exactly ``ReLU(H)``.

Parameters live in a flat ``dict[str, Tensor]`` so that optimizers,
checkpoints and pruning masks can address them by name.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import GraphBatch

NORM_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    pe_dim: int = 8

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if self.num_layers not in (1, 2, 3):
            raise ValueError(f"num_layers must be 1, 2 or 3 (got {self.num_layers})")
        if self.input_dim < 1 or self.pe_dim < 1:
            raise ValueError("input_dim and pe_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = config.hidden_dim
    p: dict[str, np.ndarray] = {
        "input.W": _glorot(rng, config.input_dim + config.pe_dim, d),
        "input.b": np.zeros((1, d)),
    }
    for layer in range(config.num_layers):
        pre = f"layers.{layer}."
        p[pre + "norm1.gamma"] = np.ones((1, d))
        p[pre + "norm1.beta"] = np.zeros((1, d))
        p[pre + "gin.W1"] = _glorot(rng, d, d)
        p[pre + "gin.b1"] = np.zeros((1, d))
        p[pre + "gin.W2"] = _glorot(rng, d, d)
        p[pre + "gin.b2"] = np.zeros((1, d))
        for name in ("WQ", "WK", "WV", "WO"):
            p[pre + "attn." + name] = _glorot(rng, d, d)
        p[pre + "norm2.gamma"] = np.ones((1, d))
        p[pre + "norm2.beta"] = np.zeros((1, d))
        p[pre + "ffn.W1"] = _glorot(rng, d, 2 * d)
        p[pre + "ffn.b1"] = np.zeros((1, 2 * d))
        p[pre + "ffn.W2"] = _glorot(rng, 2 * d, d)
        p[pre + "ffn.b2"] = np.zeros((1, d))
    return {k: ad.param(v) for k, v in p.items()}


def init_projection_params(hidden_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    d = hidden_dim
    return {
        "proj.W1": ad.param(_glorot(rng, d, d)),
        "proj.b1": ad.param(np.zeros((1, d))),
        "proj.W2": ad.param(_glorot(rng, d, d)),
        "proj.b2": ad.param(np.zeros((1, d))),
    }


def is_prunable(name: str) -> bool:
    """Weight matrices only: biases and normalization affines stay out of the pool."""
    return name.rsplit(".", 1)[-1].startswith("W") and not name.startswith(("proj.", "scorer."))


class _View:
    """Read parameters through an optional perturbation plan."""

    def __init__(self, params: dict[str, Tensor], plan):
        self.params = params
        self.plan = plan

    def __getitem__(self, name: str) -> Tensor:
        w = self.params[name]
        plan = self.plan
        if plan is None:
            return w
        if plan.weight_masks is not None and name in plan.weight_masks:
            w = ad.mul(w, ad.const(plan.weight_masks[name]))
        if plan.noise_deltas is not None and name in plan.noise_deltas:
            w = ad.add(w, ad.const(plan.noise_deltas[name]))
        return w


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    d = x.shape[1]
    centred = x - ad.expand_cols(ad.row_mean(x), d)
    var = ad.row_mean(centred * centred)
    std = ad.sqrt(var + ad.const(np.full(var.shape, NORM_EPS)))
    return ad.div(centred, ad.expand_cols(std, d)) * gamma + beta


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = x @ w
    return out if b is None else out + b


def gin_aggregate(x: Tensor, batch: GraphBatch) -> Tensor:
    """``x_i + sum_{j -> i} x_j`` over the (directed) edge list."""
    if batch.edges.size == 0:
        return x
    msgs = ad.gather_rows(x, batch.edges[:, 0])
    return x + ad.scatter_add_rows(msgs, batch.edges[:, 1], batch.total_nodes)


def multi_head_attention(h: Tensor, weights, prefix: str, num_heads: int,
                         mask: np.ndarray | None, head_keep_bits=None) -> Tensor:
    """Scaled dot-product attention per head, heads gated by keep bits, then W^O.

    A dropped head contributes an exact zero block to the concatenation.
    ``mask`` is either a dense boolean mask, ``None`` (full attention), or a
    :class:`GraphBatch`, in which case attention is computed graph by graph
    without materializing the dense mask.
    """
    n, d = h.shape
    dh = d // num_heads
    q = h @ weights[prefix + "WQ"]
    k = h @ weights[prefix + "WK"]
    v = h @ weights[prefix + "WV"]
    if isinstance(mask, GraphBatch):
        heads = ad.grouped_attention(q, k, v, mask.graph_sizes, num_heads, head_keep_bits)
        return heads @ weights[prefix + "WO"]
    scale = 1.0 / np.sqrt(dh)
    blocks = []
    for i in range(num_heads):
        if head_keep_bits is not None and not head_keep_bits[i]:
            blocks.append(ad.const(np.zeros((n, dh))))
            continue
        lo, hi = i * dh, (i + 1) * dh
        scores = ad.slice_cols(q, lo, hi) @ ad.transpose(ad.slice_cols(k, lo, hi))
        attn = ad.row_softmax(ad.scale(scores, scale), mask)
        blocks.append(attn @ ad.slice_cols(v, lo, hi))
    return ad.concat(blocks) @ weights[prefix + "WO"]


def inner_transform(h: Tensor, batch: GraphBatch, weights, layer: int, num_heads: int,
                    head_keep_bits=None) -> Tensor:
    pre = f"layers.{layer}."
    x = layer_norm(h, weights[pre + "norm1.gamma"], weights[pre + "norm1.beta"])
    local = ad.relu(linear(gin_aggregate(x, batch), weights[pre + "gin.W1"], weights[pre + "gin.b1"]))
    local = linear(local, weights[pre + "gin.W2"], weights[pre + "gin.b2"])
    glob = multi_head_attention(x, weights, pre + "attn.", num_heads, batch, head_keep_bits)
    y = local + glob
    z = layer_norm(y, weights[pre + "norm2.gamma"], weights[pre + "norm2.beta"])
    z = ad.relu(linear(z, weights[pre + "ffn.W1"], weights[pre + "ffn.b1"]))
    return y + linear(z, weights[pre + "ffn.W2"], weights[pre + "ffn.b2"])


def gps_layer_forward(h: Tensor, batch: GraphBatch, weights, layer: int, num_heads: int,
                      layer_keep_bit: int = 1, head_keep_bits=None) -> Tensor:
    if layer_keep_bit not in (0, 1):
        raise ValueError(f"layer_keep_bit must be 0 or 1, got {layer_keep_bit!r}")
    if layer_keep_bit == 0:
        return ad.relu(h)
    return ad.relu(inner_transform(h, batch, weights, layer, num_heads, head_keep_bits) + h)


def check_plan(plan, config: EncoderConfig, params: dict[str, Tensor]) -> None:
    if plan is None:
        return
    if len(plan.layer_keep_bits) != config.num_layers:
        raise ValueError(f"plan has {len(plan.layer_keep_bits)} layer bits, encoder has {config.num_layers} layers")
    if np.shape(plan.head_keep_bits) != (config.num_layers, config.num_heads):
        raise ValueError(f"plan head bits shape {np.shape(plan.head_keep_bits)} does not match "
                         f"({config.num_layers}, {config.num_heads})")
    for grids in (plan.weight_masks, plan.noise_deltas):
        for name, grid in (grids or {}).items():
            if name not in params or params[name].shape != np.shape(grid):
                raise ValueError(f"plan grid {name!r} does not match encoder parameters")


def encode_batch(batch: GraphBatch, pe, params: dict[str, Tensor], config: EncoderConfig,
                 plan=None, features=None) -> tuple[Tensor, Tensor]:
    """Return ``(node_reps, graph_reps)``.

    ``features`` and ``pe`` may be arrays or tensors (augmentations that carry
    gradient pass tensors). ``features`` defaults to the batch's own.
    """
    x = features if features is not None else batch.node_features
    x = x if isinstance(x, Tensor) else ad.const(x)
    pe = pe if isinstance(pe, Tensor) else ad.const(pe)
    if pe.shape[0] != batch.total_nodes or x.shape[0] != batch.total_nodes:
        raise ValueError(f"feature/pe rows ({x.shape[0]}, {pe.shape[0]}) do not match "
                         f"{batch.total_nodes} nodes")
    check_plan(plan, config, params)
    weights = _View(params, plan)
    h = linear(ad.concat([x, pe]), weights["input.W"], weights["input.b"])
    for layer in range(config.num_layers):
        bit, heads = 1, None
        if plan is not None:
            bit = int(plan.layer_keep_bits[layer])
            heads = plan.head_keep_bits[layer]
        h = gps_layer_forward(h, batch, weights, layer, config.num_heads, bit, heads)
    graph_reps = ad.const(batch.pooling_matrix()) @ h
    return h, graph_reps


def project_head(graph_reps: Tensor, params: dict[str, Tensor]) -> Tensor:
    hidden = ad.relu(linear(graph_reps, params["proj.W1"], params["proj.b1"]))
    return linear(hidden, params["proj.W2"], params["proj.b2"])
