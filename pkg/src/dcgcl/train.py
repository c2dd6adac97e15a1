"""Pretraining loop for the four-view objective."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .checkpoint import Checkpoint, save_checkpoint
from .contrastive import LOSS_MODES, MODE_GROUPS, four_view_forward, multi_view_loss
from .data_aug import DATA_AUG_KINDS, DataAugSpec, init_scorer_params
from .encoder import EncoderConfig, init_encoder_params, init_projection_params
from .graphs import Graph, batch_graphs, compute_rwse
from .mae import MaeLiteModel, pretrain_mae
from .model_aug import MODEL_AUG_KINDS, build_weight_prune_mask, make_plan, prune_pool

BATCH_SIZES = (8, 16, 32, 128)
LEARNING_RATES = (1e-3, 5e-4, 2.5e-4)
LOG_GROUPS = ((1, 2), (3, 4), (1, 3), (2, 4))
METRIC_HEADER = "epoch,mean_loss,loss_12,loss_34,loss_13,loss_24"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.value = epoch, batch, value


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    temperature: float = 0.2
    aug_ratio: float = 0.2
    data_aug: str = "selective_node_mask"
    data_aug_b: str | None = None
    model_aug: str = "weight_prune"
    mode: str = "dual"
    seed: int = 0
    gumbel_temperature: float = 1.0
    noise_scale: float = 0.1
    checkpoint_every: int = 10
    mae_epochs: int = 50
    mae_mask_ratio: float = 0.5

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size not in BATCH_SIZES:
            raise ValueError(f"batch_size must be one of {BATCH_SIZES}")
        if self.learning_rate not in LEARNING_RATES:
            raise ValueError(f"learning_rate must be one of {LEARNING_RATES}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 <= self.aug_ratio < 1:
            raise ValueError("aug_ratio must lie in [0, 1)")
        for kind in (self.data_aug, self.data_aug_b or self.data_aug):
            if kind not in DATA_AUG_KINDS:
                raise ValueError(f"unknown data augmentation {kind!r}")
        if self.model_aug not in MODEL_AUG_KINDS:
            raise ValueError(f"unknown model augmentation {self.model_aug!r}")
        if self.mode not in LOSS_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def data_specs(self) -> tuple[DataAugSpec, DataAugSpec]:
        """Data augmentations for sides A and B after applying the mode rules."""
        a = DataAugSpec(self.data_aug, self.aug_ratio, self.gumbel_temperature)
        b = DataAugSpec(self.data_aug_b or self.data_aug, self.aug_ratio, self.gumbel_temperature)
        if self.mode == "model-only":
            a = DataAugSpec("identity", self.aug_ratio, self.gumbel_temperature)
        return a, b

    @property
    def effective_model_aug(self) -> str:
        return "identity" if self.mode == "data-only" else self.model_aug

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    encoder_config: EncoderConfig
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    mae_model: MaeLiteModel | None = None


class RngStreams:
    """Independent generators for each consumer of randomness."""

    NAMES = ("init", "shuffle", "data_aug", "model_aug", "mae")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(self.NAMES))
        self.gens = {n: np.random.Generator(np.random.PCG64(s)) for n, s in zip(self.NAMES, children)}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.gens[name]

    def state(self) -> dict:
        return {n: g.bit_generator.state for n, g in self.gens.items()}


def init_model(encoder_config: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = init_encoder_params(encoder_config, rng)
    params.update(init_projection_params(encoder_config.hidden_dim, rng))
    params.update(init_scorer_params(encoder_config.input_dim + encoder_config.pe_dim, rng))
    return params


def positional_encodings(graphs: Sequence[Graph], pe_dim: int) -> list[np.ndarray]:
    return [compute_rwse(g, pe_dim) for g in graphs]


def _format_row(epoch: int, mean: float, groups: dict) -> str:
    vals = [repr(float(groups[g])) if g in groups else "" for g in LOG_GROUPS]
    return ",".join([str(epoch), repr(float(mean))] + vals)


def pretrain(graphs: Sequence[Graph], config: TrainConfig, encoder_config: EncoderConfig,
             output_dir: str | Path | None = None, mae_model: MaeLiteModel | None = None,
             on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train encoder, projection head and scorer; optionally persist artifacts.

    With ``output_dir`` set, writes ``checkpoints/epoch_XXXX.ckpt`` at epoch 0
    and every ``checkpoint_every`` epochs (plus the last), ``logs/metrics.csv``
    (deterministic), ``logs/timing.csv`` (wall-clock) and ``logs/plans.log``.
    """
    if not graphs:
        raise ValueError("empty dataset")
    if graphs[0].feature_dim != encoder_config.input_dim:
        raise ValueError(f"dataset feature dim {graphs[0].feature_dim} != encoder input_dim "
                         f"{encoder_config.input_dim}")
    rngs = RngStreams(config.seed)
    params = init_model(encoder_config, rngs["init"])
    pes = positional_encodings(graphs, encoder_config.pe_dim)
    spec_a, spec_b = config.data_specs()
    model_kind = config.effective_model_aug
    if "generative" in (spec_a.kind, spec_b.kind) and mae_model is None:
        mae_model = pretrain_mae(list(graphs), config.mae_mask_ratio, config.mae_epochs,
                                 rngs["mae"], hidden_dim=encoder_config.hidden_dim)
    state = AdamState(learning_rate=config.learning_rate)
    result = TrainResult(params, encoder_config, mae_model=mae_model)

    out = Path(output_dir) if output_dir is not None else None
    files = {}
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        files["metrics"] = open(out / "logs" / "metrics.csv", "w")
        files["timing"] = open(out / "logs" / "timing.csv", "w")
        files["plans"] = open(out / "logs" / "plans.log", "w")
        files["metrics"].write(METRIC_HEADER + "\n")
        files["timing"].write("epoch,wall_ms\n")

    def checkpoint(epoch: int) -> None:
        if out is None:
            return
        ckpt = Checkpoint(
            config={"encoder": encoder_config.to_dict(), "train": config.to_dict()},
            params={k: v.data for k, v in params.items()}, epoch=epoch,
            first_moment=state.first_moment, second_moment=state.second_moment,
            optimizer={"step_count": state.step_count, "beta1": state.beta1, "beta2": state.beta2,
                       "epsilon": state.epsilon, "learning_rate": state.learning_rate},
            rng_state=rngs.state())
        result.checkpoints.append(save_checkpoint(ckpt, out / "checkpoints" / f"epoch_{epoch:04d}.ckpt"))

    pool = prune_pool(params)
    try:
        checkpoint(0)
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = rngs["shuffle"].permutation(len(graphs))
            prune_masks = None
            if model_kind == "weight_prune":
                prune_masks = build_weight_prune_mask(params, config.aug_ratio, pool)
            losses, group_sums, plan_counts, batches = [], {}, {}, 0
            for bi, start in enumerate(range(0, len(graphs), config.batch_size)):
                idx = order[start:start + config.batch_size]
                if len(idx) < 2:
                    continue  # NT-Xent needs a negative
                batch = batch_graphs([graphs[i] for i in idx])
                pe = np.concatenate([pes[i] for i in idx], axis=0)
                plans = [make_plan(model_kind, params, encoder_config, config.aug_ratio,
                                   rngs["model_aug"], prune_masks, config.noise_scale)
                         for _ in range(2)]
                for pl in plans:
                    for key, val in pl.summary().items():
                        plan_counts[key] = plan_counts.get(key, 0) + val
                for p in params.values():
                    p.zero_grad()
                views = four_view_forward(batch, pe, params, encoder_config, spec_a, spec_b,
                                          plans[0], rngs["data_aug"], mae_model, plans[1])
                loss, parts = multi_view_loss(views, config.temperature, config.mode)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(epoch, bi, value)
                loss.backward()
                adam_step({k: v.data for k, v in params.items()}, ad.collect_grads(params), state)
                losses.append(value)
                for g, v in parts.items():
                    group_sums[g] = group_sums.get(g, 0.0) + v
                batches += 1
            mean = float(np.mean(losses)) if losses else float("nan")
            groups = {g: v / batches for g, v in group_sums.items()}
            wall_ms = (time.perf_counter() - started) * 1000.0
            record = {"epoch": epoch, "mean_loss": mean, "groups": groups, "wall_ms": wall_ms,
                      "plan": plan_counts}
            result.history.append(record)
            if out is not None:
                files["metrics"].write(_format_row(epoch, mean, groups) + "\n")
                files["timing"].write(f"{epoch},{wall_ms:.1f}\n")
                files["plans"].write(f"epoch={epoch} model_aug={model_kind} " + " ".join(
                    f"{k}={v}" for k, v in sorted(plan_counts.items())) + "\n")
                for fh in files.values():
                    fh.flush()
            if on_epoch is not None:
                on_epoch(record)
            if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                checkpoint(epoch)
    finally:
        for fh in files.values():
            fh.close()
    return result


def read_metric_log(path: str | Path) -> list[dict]:
    rows = []
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != METRIC_HEADER:
        raise ValueError(f"{path} is not a metric log")
    for line in lines[1:]:
        fields = line.split(",")
        groups = {g: float(v) for g, v in zip(LOG_GROUPS, fields[2:]) if v}
        rows.append({"epoch": int(fields[0]), "mean_loss": float(fields[1]), "groups": groups})
    return rows


__all__ = ["TrainConfig", "TrainResult", "TrainingDiverged", "pretrain", "init_model",
           "positional_encodings", "read_metric_log", "RngStreams", "MODE_GROUPS"]
