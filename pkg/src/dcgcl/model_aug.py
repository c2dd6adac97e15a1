"""Perturbed-encoder plans: magnitude pruning, layer/head dropping, Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .encoder import EncoderConfig, is_prunable
from .graphs import ceil_count

MODEL_AUG_KINDS = ("identity", "weight_prune", "layer_drop", "head_drop", "gaussian_noise")


@dataclass(frozen=True)
class PerturbationPlan:
    layer_keep_bits: np.ndarray
    head_keep_bits: np.ndarray
    weight_masks: dict[str, np.ndarray] | None = None
    noise_deltas: dict[str, np.ndarray] | None = None

    @classmethod
    def identity(cls, config: EncoderConfig) -> "PerturbationPlan":
        return cls(np.ones(config.num_layers, dtype=np.int64),
                   np.ones((config.num_layers, config.num_heads), dtype=np.int64))

    @property
    def is_identity(self) -> bool:
        masks_ok = self.weight_masks is None or all(np.all(m == 1) for m in self.weight_masks.values())
        return bool(np.all(self.layer_keep_bits == 1) and np.all(self.head_keep_bits == 1)
                    and masks_ok and self.noise_deltas is None)

    def summary(self) -> dict:
        pruned = 0 if self.weight_masks is None else int(
            sum((m == 0).sum() for m in self.weight_masks.values()))
        return {
            "pruned_weights": pruned,
            "dropped_layers": int((self.layer_keep_bits == 0).sum()),
            "dropped_heads": int((self.head_keep_bits == 0).sum()),
            "noisy_grids": 0 if self.noise_deltas is None else len(self.noise_deltas),
        }


def prune_pool(params: dict[str, Tensor]) -> list[str]:
    return sorted(k for k in params if is_prunable(k))


def build_weight_prune_mask(params: dict[str, Tensor | np.ndarray], p: float,
                            pool: list[str] | None = None) -> dict[str, np.ndarray]:
    """Zero the ``ceil(p * |theta|)`` smallest-magnitude entries across the pool.

    The pool is flattened in sorted-name order; ties go to the lowest flat index.
    """
    if not 0 <= p < 1:
        raise ValueError(f"prune ratio must lie in [0, 1), got {p}")
    pool = sorted(pool) if pool is not None else sorted(k for k in params if is_prunable(k))
    arrays = [params[k].data if isinstance(params[k], Tensor) else np.asarray(params[k], float)
              for k in pool]
    flat = np.concatenate([a.reshape(-1) for a in arrays]) if arrays else np.zeros(0)
    k = ceil_count(p, flat.size)
    if k >= flat.size and flat.size:
        raise ValueError(f"pruning {k} of {flat.size} weights leaves nothing")
    keep = np.ones(flat.size)
    if k:
        order = np.argsort(np.abs(flat), kind="stable")
        keep[order[:k]] = 0.0
    masks, start = {}, 0
    for name, a in zip(pool, arrays):
        masks[name] = keep[start:start + a.size].reshape(a.shape)
        start += a.size
    return masks


def sample_structural_mask(kind: str, config: EncoderConfig, p: float,
                           rng: np.random.Generator) -> np.ndarray:
    """Keep bits ~ Bernoulli(1 - p): ``(num_layers,)`` or ``(num_layers, num_heads)``."""
    if not 0 <= p <= 1:
        raise ValueError(f"drop ratio must lie in [0, 1], got {p}")
    if kind == "layer":
        shape = (config.num_layers,)
    elif kind == "head":
        shape = (config.num_layers, config.num_heads)
    else:
        raise ValueError(f"unknown structural mask kind {kind!r}")
    return (rng.random(shape) < 1.0 - p).astype(np.int64)


def gaussian_noise_baseline(params: dict[str, Tensor], sigma_scale: float, rng: np.random.Generator,
                            pool: list[str] | None = None) -> dict[str, np.ndarray]:
    if sigma_scale <= 0:
        raise ValueError("sigma_scale must be positive")
    pool = sorted(pool) if pool is not None else prune_pool(params)
    deltas = {}
    for name in pool:
        w = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
        deltas[name] = rng.normal(0.0, sigma_scale * float(np.std(w)), size=w.shape)
    return deltas


def make_plan(kind: str, params: dict[str, Tensor], config: EncoderConfig, p: float,
              rng: np.random.Generator, prune_masks: dict[str, np.ndarray] | None = None,
              noise_scale: float = 0.1) -> PerturbationPlan:
    """Build the plan for one forward pass of the perturbed branch.

    ``prune_masks`` lets the caller reuse masks computed once per epoch.
    """
    plan = PerturbationPlan.identity(config)
    if kind == "identity":
        return plan
    if kind == "weight_prune":
        masks = prune_masks if prune_masks is not None else build_weight_prune_mask(params, p)
        return PerturbationPlan(plan.layer_keep_bits, plan.head_keep_bits, weight_masks=masks)
    if kind == "layer_drop":
        return PerturbationPlan(sample_structural_mask("layer", config, p, rng), plan.head_keep_bits)
    if kind == "head_drop":
        return PerturbationPlan(plan.layer_keep_bits, sample_structural_mask("head", config, p, rng))
    if kind == "gaussian_noise":
        return PerturbationPlan(plan.layer_keep_bits, plan.head_keep_bits,
                                noise_deltas=gaussian_noise_baseline(params, noise_scale, rng))
    raise ValueError(f"unknown model augmentation {kind!r}; expected one of {MODEL_AUG_KINDS}")
