import numpy as np
import pytest

from dcgcl import train as train_mod
from dcgcl import autodiff as ad
from dcgcl.checkpoint import load_checkpoint
from dcgcl.encoder import EncoderConfig
from dcgcl.graphs import generate_synthetic_dataset
from dcgcl.train import METRIC_HEADER, TrainConfig, TrainingDiverged, pretrain, read_metric_log

SMALL = EncoderConfig(input_dim=1, num_layers=1, num_heads=2, hidden_dim=16)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_dataset(48, seed=5, num_nodes=(6, 10))


def test_default_config():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.aug_ratio, cfg.temperature, cfg.mode) == (100, 32, 0.2, 0.2, "dual")


@pytest.mark.parametrize("bad", [dict(batch_size=10), dict(learning_rate=0.01), dict(mode="both"),
                                 dict(temperature=0.0), dict(aug_ratio=1.0), dict(model_aug="dropout"),
                                 dict(data_aug="edge_drop")])
def test_config_rejects(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_mode_rules():
    cfg = TrainConfig(mode="data-only", data_aug="pe_mask")
    assert cfg.effective_model_aug == "identity"
    a, b = TrainConfig(mode="model-only", data_aug="pe_mask").data_specs()
    assert a.kind == "identity" and b.kind == "pe_mask"
    a, b = TrainConfig(data_aug="pe_mask", data_aug_b="feature_mask_baseline").data_specs()
    assert (a.kind, b.kind) == ("pe_mask", "feature_mask_baseline")


def test_two_runs_are_bitwise_identical(corpus, tmp_path):
    cfg = TrainConfig(epochs=3, batch_size=16, checkpoint_every=2, seed=11)
    pretrain(corpus, cfg, SMALL, tmp_path / "a")
    pretrain(corpus, cfg, SMALL, tmp_path / "b")
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "logs/metrics.csv").read_bytes() == (b / "logs/metrics.csv").read_bytes()
    names = sorted(p.name for p in (a / "checkpoints").iterdir())
    assert names == ["epoch_0000.ckpt", "epoch_0002.ckpt", "epoch_0003.ckpt"]
    for name in names:
        assert (a / "checkpoints" / name).read_bytes() == (b / "checkpoints" / name).read_bytes()


def test_different_seeds_differ(corpus):
    one = pretrain(corpus, TrainConfig(epochs=1, batch_size=16, seed=0), SMALL)
    two = pretrain(corpus, TrainConfig(epochs=1, batch_size=16, seed=1), SMALL)
    assert one.history[0]["mean_loss"] != two.history[0]["mean_loss"]


def test_metric_log_layout(corpus, tmp_path):
    pretrain(corpus, TrainConfig(epochs=2, batch_size=16, mode="data-only", data_aug="pe_mask"),
             SMALL, tmp_path)
    lines = (tmp_path / "logs/metrics.csv").read_text().splitlines()
    assert lines[0] == METRIC_HEADER and len(lines) == 3
    rows = read_metric_log(tmp_path / "logs/metrics.csv")
    assert [r["epoch"] for r in rows] == [1, 2]
    assert set(rows[0]["groups"]) == {(1, 3)}
    assert rows[0]["mean_loss"] == pytest.approx(rows[0]["groups"][(1, 3)])
    assert len((tmp_path / "logs/timing.csv").read_text().splitlines()) == 3


@pytest.mark.parametrize("mode", ["dual", "pairwise-all"])
def test_dual_groups_sum_to_mean(corpus, mode):
    rec = pretrain(corpus, TrainConfig(epochs=1, batch_size=16, mode=mode), SMALL).history[0]
    assert len(rec["groups"]) == (4 if mode == "dual" else 6)
    assert sum(rec["groups"].values()) == pytest.approx(rec["mean_loss"], rel=1e-12)


def test_checkpoint_carries_state(corpus, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=16, checkpoint_every=1)
    result = pretrain(corpus, cfg, SMALL, tmp_path)
    last = load_checkpoint(result.checkpoints[-1])
    assert last.epoch == 2
    for name, p in result.params.items():
        assert np.array_equal(last.params[name], p.data)
    assert last.optimizer["step_count"] == 2 * 3
    assert last.config["train"]["seed"] == 0 and last.config["encoder"]["hidden_dim"] == 16
    first = load_checkpoint(result.checkpoints[0])
    assert first.epoch == 0 and first.optimizer["step_count"] == 0


def test_loss_decreases_over_30_epochs():
    graphs = generate_synthetic_dataset(64, seed=2, num_nodes=(6, 10))
    hist = pretrain(graphs, TrainConfig(epochs=30, batch_size=16, seed=0), SMALL).history
    assert hist[-1]["mean_loss"] < hist[0]["mean_loss"]


def test_non_finite_loss_aborts_and_keeps_last_checkpoint(corpus, tmp_path, monkeypatch):
    real = train_mod.multi_view_loss
    calls = {"n": 0}

    def poisoned(views, t, mode):
        calls["n"] += 1
        loss, parts = real(views, t, mode)
        if calls["n"] == 5:
            return ad.scale(loss, float("nan")), parts
        return loss, parts

    monkeypatch.setattr(train_mod, "multi_view_loss", poisoned)
    with pytest.raises(TrainingDiverged) as err:
        pretrain(corpus, TrainConfig(epochs=3, batch_size=16, checkpoint_every=1), SMALL, tmp_path)
    assert (err.value.epoch, err.value.batch) == (2, 1)
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["epoch_0000.ckpt", "epoch_0001.ckpt"]


def test_generative_side_trains_mae(corpus):
    cfg = TrainConfig(epochs=1, batch_size=16, data_aug="generative", data_aug_b="pe_mask", mae_epochs=2)
    result = pretrain(corpus, cfg, SMALL)
    assert result.mae_model is not None and np.isfinite(result.history[0]["mean_loss"])


def test_rejects_feature_mismatch(corpus):
    with pytest.raises(ValueError, match="input_dim"):
        pretrain(corpus, TrainConfig(epochs=1, batch_size=16), EncoderConfig(input_dim=3, num_heads=2, hidden_dim=16))
