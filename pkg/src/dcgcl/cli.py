"""``dcgcl`` command line.

Exit status: 0 on success, 1 on a runtime failure, 2 on a configuration or
missing-input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import DATA_ROOT_ENV, ConfigError, RunConfig, load_config
from .contrastive import four_view_forward, multi_view_loss
from .data_aug import DataAugSpec, apply_data_aug
from .encoder import EncoderConfig
from .evaluation import (EmbeddingTable, alignment_uniformity_trajectory, embed_dataset,
                         linear_probe_cv, trajectory_csv)
from .graphs import (Graph, TUFormatError, batch_graphs, compute_rwse, dataset_stats,
                     generate_synthetic_dataset, parse_tu_dataset)
from .mae import MaeLiteModel
from .model_aug import make_plan
from .train import TrainingDiverged, init_model, pretrain

VERBS = ("pretrain", "embed", "probe", "diagnose", "gradcheck", "augment-preview")
SUBDIRS = ("checkpoints", "logs", "embeddings", "reports")


class UsageError(Exception):
    """Missing inputs or bad configuration: exit status 2."""


def load_dataset(cfg: RunConfig) -> list[Graph]:
    name = cfg["train.dataset"]
    if name == "synthetic":
        return generate_synthetic_dataset(cfg["train.synthetic_graphs"], seed=cfg["train.synthetic_seed"])
    root = cfg.dataset_dir()
    if root is None:
        raise UsageError(f"no dataset path for {name!r}: set [train].dataset_path or {DATA_ROOT_ENV}")
    if not root.exists():
        raise UsageError(f"dataset path does not exist: {root}")
    try:
        return parse_tu_dataset(root, name)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def _prepare_output(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    for sub in SUBDIRS:
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.render())
    return out


def _write_manifest(out: Path, verb: str, cfg: RunConfig, artifacts: list[Path]) -> None:
    entries = []
    for path in sorted({Path(p) for p in artifacts}):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append({"path": str(path.relative_to(out)) if path.is_relative_to(out) else str(path),
                        "sha256": digest})
    manifest = {"verb": verb, "version": __version__, "seed": cfg["train.seed"],
                "config": "config.ini", "artifacts": entries}
    (out / f"manifest_{verb}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolve_checkpoint(cfg: RunConfig, out: Path) -> Path:
    explicit = cfg["eval.checkpoint"]
    if explicit is not None:
        path = Path(explicit)
        if not path.is_file():
            raise UsageError(f"checkpoint not found: {path}")
        return path
    found = sorted((out / "checkpoints").glob("epoch_*.ckpt"))
    if not found:
        raise UsageError(f"checkpoint not found: no epoch_*.ckpt in {out / 'checkpoints'} "
                         "(run pretrain first or set [eval].checkpoint)")
    return found[-1]


def _mae_from_checkpoint(path: Path) -> MaeLiteModel | None:
    if not path.is_file():
        return None
    ckpt = load_checkpoint(path)
    conf = ckpt.config
    return MaeLiteModel(conf["feature_dim"], conf["hidden_dim"],
                        {k: ad.const(v) for k, v in ckpt.params.items()})


def cmd_pretrain(cfg: RunConfig, out: Path) -> list[Path]:
    graphs = load_dataset(cfg)
    tc = cfg.train_config()
    ec = cfg.encoder_config(graphs[0].feature_dim)
    mae_path = out / "checkpoints" / "mae.ckpt"
    mae_model = _mae_from_checkpoint(mae_path)
    for old in (out / "checkpoints").glob("epoch_*.ckpt"):
        old.unlink()

    def report(rec):
        print(f"epoch {rec['epoch']:4d}  loss {rec['mean_loss']:.6f}  ({rec['wall_ms']:.0f} ms)")

    result = pretrain(graphs, tc, ec, output_dir=out, mae_model=mae_model, on_epoch=report)
    artifacts = list(result.checkpoints) + [out / "logs" / "metrics.csv", out / "logs" / "plans.log"]
    if result.mae_model is not None and not mae_path.exists():
        m = result.mae_model
        save_checkpoint(Checkpoint(config=m.config(), params=m.arrays()), mae_path)
    if mae_path.exists():
        artifacts.append(mae_path)
    return artifacts


def cmd_embed(cfg: RunConfig, out: Path) -> list[Path]:
    ckpt_path = _resolve_checkpoint(cfg, out)
    graphs = load_dataset(cfg)
    table = embed_dataset(graphs, ckpt_path, cfg["train.dataset"])
    path = table.save(out / "embeddings" / f"{cfg['train.dataset']}_{ckpt_path.stem}.emb")
    print(f"wrote {path} ({table.rows.shape[0]} x {table.rows.shape[1]})")
    return [path]


def cmd_probe(cfg: RunConfig, out: Path) -> list[Path]:
    ckpt_path = _resolve_checkpoint(cfg, out)
    graphs = load_dataset(cfg)
    table = embed_dataset(graphs, ckpt_path, cfg["train.dataset"])
    report = linear_probe_cv(table, cfg["eval.folds"], cfg["eval.seeds"], cfg["eval.c_grid"],
                             cfg["eval.inner_folds"], cfg["eval.probe_steps"], cfg["eval.probe_lr"])
    stem = f"probe_{ckpt_path.stem}"
    text = out / "reports" / f"{stem}.txt"
    text.write_text(f"checkpoint {ckpt_path.name}\n" + report.to_text())
    csv = out / "reports" / f"{stem}.csv"
    csv.write_text(report.to_csv())
    print(report.to_text(), end="")
    return [text, csv]


def cmd_diagnose(cfg: RunConfig, out: Path) -> list[Path]:
    ckpts = sorted((out / "checkpoints").glob("epoch_*.ckpt"))
    if not ckpts:
        raise UsageError(f"checkpoint not found: no epoch_*.ckpt in {out / 'checkpoints'}")
    graphs = load_dataset(cfg)
    tc = cfg.train_config()
    spec_a, spec_b = tc.data_specs()
    mae_model = _mae_from_checkpoint(out / "checkpoints" / "mae.ckpt")
    if "generative" in (spec_a.kind, spec_b.kind) and mae_model is None:
        raise UsageError("generative augmentation needs checkpoints/mae.ckpt from pretrain")
    points = alignment_uniformity_trajectory(
        graphs, ckpts, spec_a, spec_b, tc.effective_model_aug, tc.aug_ratio, tc.seed, mae_model,
        cfg["eval.alpha"], cfg["eval.beta"], cfg["eval.projected"])
    path = out / "reports" / "trajectory.csv"
    path.write_text(trajectory_csv(points))
    print(path.read_text(), end="")
    return [path]


def gradcheck_report(num_coords: int = 200, seed: int = 0, num_layers: int = 1,
                     num_heads: int = 2, hidden_dim: int = 16) -> ad.GradCheckReport:
    """Finite-difference check of the full dual-mode loss on a 3-graph batch.

    Zero-initialized vectors (biases, norm offsets) are jittered first: with
    them at exactly zero, masked rows sit on ReLU kinks where central
    differences are meaningless.
    """
    rng = np.random.default_rng(seed)
    graphs = generate_synthetic_dataset(3, seed=seed, num_nodes=(5, 8))
    batch = batch_graphs(graphs)
    ec = EncoderConfig(input_dim=graphs[0].feature_dim, num_layers=num_layers,
                       num_heads=num_heads, hidden_dim=hidden_dim)
    pe = np.concatenate([compute_rwse(g, ec.pe_dim) for g in graphs])
    params = init_model(ec, rng)
    for t in params.values():
        if not np.any(t.data):
            t.data += rng.normal(0.0, 0.1, size=t.shape)
    node_mask = DataAugSpec("selective_node_mask", 0.2)
    pe_mask = DataAugSpec("pe_mask", 0.2)
    plan = make_plan("weight_prune", params, ec, 0.2, rng)
    head_plan = make_plan("head_drop", params, ec, 0.5, np.random.default_rng(seed + 1))
    fixed_seed = int(rng.integers(1 << 31))

    def closure():
        views = four_view_forward(batch, pe, params, ec, node_mask, pe_mask, plan,
                                  np.random.default_rng(fixed_seed), plan_b=head_plan)
        return multi_view_loss(views, 0.2, "dual")[0]

    return ad.finite_diff_check(closure, params, num_coords=num_coords, rng=rng)


def cmd_gradcheck(cfg: RunConfig, out: Path) -> list[Path]:
    report = gradcheck_report(cfg["eval.gradcheck_coords"], cfg["train.seed"])
    path = out / "reports" / "gradcheck.txt"
    lines = [report.summary()] + [f"  {k}: {v:.3e}" for k, v in sorted(report.per_param.items())]
    path.write_text("\n".join(lines) + "\n")
    print(report.summary())
    if not report.passed:
        raise RuntimeError(report.summary())
    return [path]


def cmd_augment_preview(cfg: RunConfig, out: Path) -> list[Path]:
    graphs = load_dataset(cfg)
    tc = cfg.train_config()
    ec = cfg.encoder_config(graphs[0].feature_dim)
    rng = np.random.default_rng(tc.seed)
    params = init_model(ec, rng)
    chosen = graphs[:min(len(graphs), tc.batch_size)]
    batch = batch_graphs(chosen)
    pe = np.concatenate([compute_rwse(g, ec.pe_dim) for g in chosen])
    mae_model = _mae_from_checkpoint(out / "checkpoints" / "mae.ckpt")
    lines = [f"batch: {batch.num_graphs} graphs, {batch.total_nodes} nodes, "
             f"{len(batch.edges) // 2} undirected edges, feature dim {batch.node_features.shape[1]}, "
             f"pe dim {pe.shape[1]}"]
    for side, spec in zip("AB", tc.data_specs()):
        if spec.kind == "generative" and mae_model is None:
            lines.append(f"side {side}: generative (skipped: no checkpoints/mae.ckpt yet)")
            continue
        aug = apply_data_aug(spec, batch, pe, rng, scorer=params, mae_model=mae_model)
        feats = aug.features.data if isinstance(aug.features, ad.Tensor) else aug.features
        new_pe = aug.pe.data if isinstance(aug.pe, ad.Tensor) else aug.pe
        zero_rows = int(np.all(feats == 0, axis=1).sum())
        zero_pe = int(np.all(new_pe == 0, axis=0).sum())
        details = " ".join(f"{k}={v}" for k, v in sorted(aug.info.items()))
        lines.append(f"side {side}: {spec.kind} ratio={spec.ratio} {details}".rstrip())
        lines.append(f"  feature rows all-zero before/after: {int(np.all(batch.node_features == 0, axis=1).sum())}"
                     f"/{zero_rows}; pe channels all-zero before/after: "
                     f"{int(np.all(pe == 0, axis=0).sum())}/{zero_pe}")
    plan = make_plan(tc.effective_model_aug, params, ec, tc.aug_ratio, rng, noise_scale=tc.noise_scale)
    summary = " ".join(f"{k}={v}" for k, v in plan.summary().items())
    lines.append(f"model: {tc.effective_model_aug} ratio={tc.aug_ratio} {summary}")
    path = out / "reports" / "augment_preview.txt"
    path.write_text("\n".join(lines) + "\n")
    print(path.read_text(), end="")
    return [path]


COMMANDS = {
    "pretrain": cmd_pretrain,
    "embed": cmd_embed,
    "probe": cmd_probe,
    "diagnose": cmd_diagnose,
    "gradcheck": cmd_gradcheck,
    "augment-preview": cmd_augment_preview,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcgcl", description=__doc__.splitlines()[0])
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("-c", "--config", help="configuration file ([encoder]/[train]/[augment]/[eval])")
    parser.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
    parser.add_argument("--dataset", help="shorthand for train.dataset")
    parser.add_argument("--dataset-path", help="shorthand for train.dataset_path")
    parser.add_argument("--output-dir", help="shorthand for train.output_dir")
    parser.add_argument("--epochs", help="shorthand for train.epochs")
    parser.add_argument("--seed", help="shorthand for train.seed")
    parser.add_argument("--checkpoint", help="shorthand for eval.checkpoint")
    return parser


def run_command(verb: str, cfg: RunConfig) -> int:
    try:
        out = _prepare_output(cfg)
        artifacts = COMMANDS[verb](cfg, out)
        _write_manifest(out, verb, cfg, artifacts)
        return 0
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"dcgcl {verb}: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"dcgcl {verb}: training diverged: {exc}; checkpoints up to the last good epoch "
              "are kept", file=sys.stderr)
        return 1
    except (TUFormatError, CheckpointError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"dcgcl {verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    for flag, key in (("dataset", "train.dataset"), ("dataset_path", "train.dataset_path"),
                      ("output_dir", "train.output_dir"), ("epochs", "train.epochs"),
                      ("seed", "train.seed"), ("checkpoint", "eval.checkpoint")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"dcgcl: configuration error: {exc}", file=sys.stderr)
        return 2
    return run_command(args.verb, cfg)


if __name__ == "__main__":
    sys.exit(main())
