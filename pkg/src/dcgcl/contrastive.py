"""Four-view pipeline and grouped NT-Xent objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, Tensor
from .data_aug import DataAugSpec, apply_data_aug
from .encoder import EncoderConfig, encode_batch, project_head
from .graphs import GraphBatch
from .model_aug import PerturbationPlan

LOSS_MODES = ("dual", "data-only", "model-only", "pairwise-all")

# view indices are 1-based to match z1..z4
MODE_GROUPS = {
    "dual": ((1, 2), (3, 4), (1, 3), (2, 4)),
    "data-only": ((1, 3),),
    "model-only": ((1, 2),),
    "pairwise-all": ((1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)),
}


def _cosine_matrix(z: Tensor, zp: Tensor) -> Tensor:
    zn = ad.div(z, ad.expand_cols(ad.row_norm(z), z.shape[1]))
    zpn = ad.div(zp, ad.expand_cols(ad.row_norm(zp), zp.shape[1]))
    return zn @ ad.transpose(zpn)


def _one_direction(sim: Tensor, t: float) -> Tensor:
    n = sim.shape[0]
    logits = ad.scale(sim, 1.0 / t)
    eye = np.eye(n)
    positive = ad.row_sum(logits * ad.const(eye))
    off = ~np.eye(n, dtype=bool)
    # log-sum-exp over negatives, shifted by the row max for stability
    shift = np.where(off, logits.data, -np.inf).max(axis=1, keepdims=True)
    shifted = logits - ad.const(np.broadcast_to(shift, (n, n)).copy())
    neg = ad.mul(ad.exp(shifted), ad.const(off.astype(float)))
    lse = ad.log(ad.row_sum(neg)) + ad.const(shift)
    return ad.mean(lse - positive)


def nt_xent_group(z: Tensor, zp: Tensor, t: float) -> Tensor:
    """Symmetrized NT-Xent between two views of the same N graphs.

    Negatives for anchor ``n`` are the partner view's other ``N - 1`` rows;
    the positive is not part of the denominator.
    """
    z = z if isinstance(z, Tensor) else ad.const(z)
    zp = zp if isinstance(zp, Tensor) else ad.const(zp)
    if z.shape != zp.shape:
        raise ValueError(f"view shapes differ: {z.shape} vs {zp.shape}")
    if z.shape[0] < 2:
        raise ValueError("NT-Xent needs at least 2 graphs per batch")
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    for view in (z, zp):
        if np.any(np.linalg.norm(view.data, axis=1) == 0):
            raise DomainError("zero-norm embedding row")
    sim = _cosine_matrix(z, zp)
    both = _one_direction(sim, t) + _one_direction(ad.transpose(sim), t)
    return ad.scale(both, 0.5)


@dataclass
class FourViewEmbeddings:
    z1: Tensor
    z2: Tensor
    z3: Tensor
    z4: Tensor
    h: tuple[Tensor, Tensor, Tensor, Tensor] | None = None

    # (data augmentation side, encoder) per view
    PROVENANCE = {1: ("A", "f"), 2: ("A", "f_hat"), 3: ("B", "f"), 4: ("B", "f_hat")}

    def view(self, k: int) -> Tensor:
        return (self.z1, self.z2, self.z3, self.z4)[k - 1]

    def __post_init__(self):
        shapes = {v.shape for v in (self.z1, self.z2, self.z3, self.z4)}
        if len(shapes) != 1:
            raise ValueError(f"views disagree in shape: {sorted(shapes)}")


def four_view_forward(batch: GraphBatch, pe: np.ndarray, params: dict[str, Tensor],
                      config: EncoderConfig, spec_a: DataAugSpec, spec_b: DataAugSpec,
                      plan: PerturbationPlan | None, rng: np.random.Generator,
                      mae_model=None, plan_b: PerturbationPlan | None = None) -> FourViewEmbeddings:
    """Encode both augmented inputs with ``f`` and with the perturbed ``f_hat``.

    ``plan_b`` lets the caller pass a separately sampled plan for the second
    perturbed forward pass; by default both use ``plan``.
    """
    plan_b = plan if plan_b is None else plan_b
    a = apply_data_aug(spec_a, batch, pe, rng, scorer=params, mae_model=mae_model)
    b = apply_data_aug(spec_b, batch, pe, rng, scorer=params, mae_model=mae_model)
    hs = []
    for aug, pl in ((a, None), (a, plan), (b, None), (b, plan_b)):
        _, g = encode_batch(batch, aug.pe, params, config, pl, features=aug.features)
        hs.append(g)
    zs = [project_head(g, params) for g in hs]
    return FourViewEmbeddings(*zs, h=tuple(hs))


def multi_view_loss(views: FourViewEmbeddings, t: float, mode: str = "dual"
                    ) -> tuple[Tensor, dict[tuple[int, int], float]]:
    """Sum of group losses for ``mode``; also returns each group's value."""
    if mode not in MODE_GROUPS:
        raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    total, parts = None, {}
    for i, j in MODE_GROUPS[mode]:
        g = nt_xent_group(views.view(i), views.view(j), t)
        parts[(i, j)] = g.item()
        total = g if total is None else total + g
    return total, parts
