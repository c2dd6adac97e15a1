"""Representation diagnostics and linear-probe evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from . import autodiff as ad
from .checkpoint import Checkpoint, load_checkpoint
from .data_aug import DataAugSpec, apply_data_aug
from .encoder import EncoderConfig, encode_batch, project_head
from .graphs import Graph, batch_graphs, compute_rwse
from .mae import MaeLiteModel
from .model_aug import make_plan

C_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


class ProbeError(ValueError):
    pass


def l2_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero row")
    return x / norms


def alignment(views_a: np.ndarray, views_b: np.ndarray, alpha: float = 2.0) -> float:
    """Mean ``||a_i - b_i||^alpha`` over paired, L2-normalized rows."""
    a, b = np.asarray(views_a, float), np.asarray(views_b, float)
    if a.shape != b.shape:
        raise ValueError(f"paired tables differ in shape: {a.shape} vs {b.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    dist = np.linalg.norm(l2_normalize(a) - l2_normalize(b), axis=1)
    return float(np.mean(dist ** alpha))


def uniformity(views: np.ndarray, beta: float = 2.0) -> float:
    """``log`` of the mean Gaussian potential over ordered distinct row pairs."""
    v = np.asarray(views, float)
    m = v.shape[0]
    if m < 2:
        raise ValueError("uniformity needs at least 2 rows")
    if beta <= 0:
        raise ValueError("beta must be positive")
    v = l2_normalize(v)
    gram = v @ v.T
    sq = np.clip(2.0 - 2.0 * gram, 0.0, None)
    np.fill_diagonal(sq, 0.0)
    dist = np.sqrt(sq)
    pot = np.exp(-beta * dist ** beta)
    off = ~np.eye(m, dtype=bool)
    return float(np.log(pot[off].mean()))


@dataclass
class EmbeddingTable:
    rows: np.ndarray
    labels: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or len(self.labels) != self.rows.shape[0]:
            raise ValueError("rows must be M x d with one label per row")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("embedding table has non-finite entries")

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        m, d = self.rows.shape
        lines = [f"dim={d} count={m} classes={self.num_classes}"]
        for label, row in zip(self.labels, self.rows):
            lines.append(",".join([str(int(label))] + [format(x, ".17g") for x in row]))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines:
            raise ValueError(f"{path}: empty embedding file")
        try:
            header = dict(part.split("=", 1) for part in lines[0].split())
            d, m, k = int(header["dim"]), int(header["count"]), int(header["classes"])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:1: malformed header {lines[0]!r}") from exc
        body = [ln for ln in lines[1:] if ln.strip()]
        if len(body) != m:
            raise ValueError(f"{path}: header says {m} rows, found {len(body)}")
        labels, rows = [], []
        for i, line in enumerate(body, start=2):
            fields = line.split(",")
            if len(fields) != d + 1:
                raise ValueError(f"{path}:{i}: expected {d + 1} fields, got {len(fields)}")
            labels.append(int(fields[0]))
            rows.append([float(x) for x in fields[1:]])
        table = cls(np.array(rows).reshape(m, d), np.array(labels), provenance=str(path))
        if table.num_classes > k:
            raise ValueError(f"{path}: label {table.num_classes - 1} outside {k} classes")
        return table


def _ckpt_params(ckpt: Checkpoint) -> tuple[dict[str, ad.Tensor], EncoderConfig]:
    config = EncoderConfig(**ckpt.config["encoder"])
    return {k: ad.const(v) for k, v in ckpt.params.items()}, config


def _encode_all(graphs: Sequence[Graph], params, config: EncoderConfig, batch_size: int = 128,
                spec: DataAugSpec | None = None, plan_kind: str = "identity", ratio: float = 0.0,
                rng: np.random.Generator | None = None, mae_model: MaeLiteModel | None = None,
                projected: bool = False) -> np.ndarray:
    out = []
    for start in range(0, len(graphs), batch_size):
        chunk = list(graphs[start:start + batch_size])
        batch = batch_graphs(chunk)
        pe = np.concatenate([compute_rwse(g, config.pe_dim) for g in chunk], axis=0)
        feats = None
        if spec is not None and spec.kind != "identity":
            aug = apply_data_aug(spec, batch, pe, rng, scorer=params, mae_model=mae_model)
            feats, pe = aug.features, aug.pe
        plan = None
        if plan_kind != "identity":
            plan = make_plan(plan_kind, params, config, ratio, rng)
        _, g = encode_batch(batch, pe, params, config, plan, features=feats)
        if projected:
            g = project_head(g, params)
        out.append(g.data)
    return np.concatenate(out, axis=0)


def embed_dataset(graphs: Sequence[Graph], checkpoint: Checkpoint | str | Path,
                  dataset_name: str = "") -> EmbeddingTable:
    """Readout representations of every graph, with no augmentation."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    params, config = _ckpt_params(ckpt)
    if not graphs:
        raise ValueError("empty dataset")
    if graphs[0].feature_dim != config.input_dim:
        raise ValueError(f"dataset feature dim {graphs[0].feature_dim} does not match checkpoint "
                         f"input_dim {config.input_dim}")
    rows = _encode_all(graphs, params, config)
    labels = np.array([-1 if g.label is None else g.label for g in graphs])
    return EmbeddingTable(rows, labels, provenance=f"epoch={ckpt.epoch} dataset={dataset_name}")


# ---------------------------------------------------------------------------
# linear probe


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def fit_logistic(x: np.ndarray, y: np.ndarray, num_classes: int, c_values: Sequence[float],
                 steps: int = 500, lr: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent, one model per C, trained in lockstep.

    Objective per C: mean cross-entropy + ``||W||^2 / (2 C m)``, i.e. the usual
    ``C * sum CE + ||W||^2 / 2`` divided by ``C m``. The bias is unpenalized.
    Returns weights ``(len(C), d, k)`` and biases ``(len(C), k)``.
    """
    m, d = x.shape
    c = np.asarray(c_values, dtype=np.float64)
    onehot = np.eye(num_classes)[y]
    w = np.zeros((len(c), d, num_classes))
    b = np.zeros((len(c), num_classes))
    reg = 1.0 / (c * m)
    xt = np.ascontiguousarray(x.T)
    for _ in range(steps):
        probs = _softmax(np.matmul(x, w) + b[:, None, :])
        err = (probs - onehot[None]) / m
        w -= lr * (np.matmul(xt, err) + reg[:, None, None] * w)
        b -= lr * err.sum(axis=1)
    return w, b


def _predict(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.argmax(np.matmul(x, w) + b[:, None, :], axis=-1)


def _standardize(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train - mu) / sd, (test - mu) / sd


def _check_strata(labels: np.ndarray, folds: int, where: str) -> None:
    counts = np.bincount(labels)
    present = counts[counts > 0]
    if present.size < 2:
        raise ProbeError(f"{where}: need at least two classes")
    if present.min() < folds:
        cls = int(np.flatnonzero((counts > 0) & (counts < folds))[0])
        raise ProbeError(f"{where}: class {cls} has {counts[cls]} examples, fewer than "
                         f"{folds} folds; some training fold would miss it")


@dataclass
class ProbeReport:
    mean: float
    std: float
    per_seed: dict[int, float]
    per_fold: dict[int, list[float]] = field(default_factory=dict)
    chosen_c: dict[int, list[float]] = field(default_factory=dict)

    def as_tuple(self) -> tuple[float, float]:
        return self.mean, self.std

    def to_text(self) -> str:
        lines = [f"accuracy {self.mean:.4f} +- {self.std:.4f} over {len(self.per_seed)} seeds"]
        lines += [f"seed {s}: {a:.4f}" for s, a in sorted(self.per_seed.items())]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["seed,fold,accuracy,C"]
        for s in sorted(self.per_fold):
            for f, (acc, cv) in enumerate(zip(self.per_fold[s], self.chosen_c[s])):
                lines.append(f"{s},{f},{acc!r},{cv!r}")
        lines.append(f"mean,,{self.mean!r},")
        lines.append(f"std,,{self.std!r},")
        return "\n".join(lines) + "\n"


def linear_probe_cv(table: EmbeddingTable, folds: int = 10, seeds: Sequence[int] = (0, 1, 2, 3, 4),
                    c_grid: Sequence[float] = C_GRID, inner_folds: int = 5, steps: int = 500,
                    lr: float = 0.1) -> ProbeReport:
    """Stratified k-fold accuracy of a logistic-regression probe, repeated per seed.

    Inside each outer training split, C is chosen by stratified inner CV
    (ties go to the earlier grid entry); the probe is then refit on the full
    training split with that C.
    """
    if folds < 2:
        raise ProbeError("folds must be >= 2")
    if len(c_grid) == 0:
        raise ProbeError("C grid is empty")
    x, y = table.rows, table.labels
    if np.any(y < 0):
        raise ProbeError("embedding table has unlabelled rows")
    k = int(y.max()) + 1
    _check_strata(y, folds, "outer split")
    per_seed, per_fold, chosen = {}, {}, {}
    for seed in sorted(seeds):
        outer = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
        accs, cs = [], []
        for train_idx, test_idx in outer.split(x, y):
            x_tr, y_tr = x[train_idx], y[train_idx]
            _check_strata(y_tr, inner_folds, "inner split")
            inner = StratifiedKFold(n_splits=inner_folds, shuffle=True, random_state=seed)
            scores = np.zeros(len(c_grid))
            for a_idx, b_idx in inner.split(x_tr, y_tr):
                xa, xb = _standardize(x_tr[a_idx], x_tr[b_idx])
                w, b = fit_logistic(xa, y_tr[a_idx], k, c_grid, steps, lr)
                scores += (_predict(xb, w, b) == y_tr[b_idx][None, :]).mean(axis=1)
            best = int(np.argmax(scores))
            xa, xb = _standardize(x_tr, x[test_idx])
            w, b = fit_logistic(xa, y_tr, k, [c_grid[best]], steps, lr)
            accs.append(float((_predict(xb, w, b)[0] == y[test_idx]).mean()))
            cs.append(float(c_grid[best]))
        per_seed[seed] = float(np.mean(accs))
        per_fold[seed], chosen[seed] = accs, cs
    vals = np.array([per_seed[s] for s in sorted(per_seed)])
    return ProbeReport(float(vals.mean()), float(vals.std()), per_seed, per_fold, chosen)


# ---------------------------------------------------------------------------
# alignment / uniformity over a checkpoint series


@dataclass
class TrajectoryPoint:
    epoch: int
    alignment: float
    uniformity: float


def paired_views(graphs: Sequence[Graph], ckpt: Checkpoint, spec_a: DataAugSpec,
                 spec_b: DataAugSpec, model_kind: str, ratio: float, seed: int,
                 mae_model: MaeLiteModel | None = None,
                 projected: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """``f`` on one augmented copy, perturbed ``f_hat`` on an independent one."""
    params, config = _ckpt_params(ckpt)
    rng = np.random.default_rng(seed)
    a = _encode_all(graphs, params, config, spec=spec_a, rng=rng, mae_model=mae_model,
                    projected=projected)
    b = _encode_all(graphs, params, config, spec=spec_b, plan_kind=model_kind, ratio=ratio,
                    rng=rng, mae_model=mae_model, projected=projected)
    return a, b


def alignment_uniformity_trajectory(graphs: Sequence[Graph], checkpoints: Sequence[Checkpoint | str | Path],
                                    spec_a: DataAugSpec, spec_b: DataAugSpec, model_kind: str,
                                    ratio: float = 0.2, seed: int = 0,
                                    mae_model: MaeLiteModel | None = None,
                                    alpha: float = 2.0, beta: float = 2.0,
                                    projected: bool = False) -> list[TrajectoryPoint]:
    """Alignment on the paired views and uniformity on both views pooled.

    Every checkpoint sees the same augmentation draws (the RNG restarts at
    ``seed``), so differences between points come from the parameters only.
    """
    points, last = [], -math.inf
    for item in checkpoints:
        ckpt = item if isinstance(item, Checkpoint) else load_checkpoint(item)
        if ckpt.epoch < last:
            raise ValueError("checkpoints must be in epoch order")
        last = ckpt.epoch
        a, b = paired_views(graphs, ckpt, spec_a, spec_b, model_kind, ratio, seed, mae_model, projected)
        points.append(TrajectoryPoint(ckpt.epoch, alignment(a, b, alpha),
                                      uniformity(np.concatenate([a, b]), beta)))
    return points


def trajectory_csv(points: Sequence[TrajectoryPoint]) -> str:
    lines = ["epoch,alignment,uniformity"]
    lines += [f"{p.epoch},{p.alignment!r},{p.uniformity!r}" for p in points]
    return "\n".join(lines) + "\n"
