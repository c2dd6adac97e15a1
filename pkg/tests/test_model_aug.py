import numpy as np
import pytest

from dcgcl import autodiff as ad
from dcgcl.encoder import EncoderConfig, encode_batch, init_encoder_params
from dcgcl.graphs import batch_graphs, ceil_count, compute_rwse
from dcgcl.model_aug import (PerturbationPlan, build_weight_prune_mask, gaussian_noise_baseline,
                             make_plan, prune_pool, sample_structural_mask)

CFG = EncoderConfig(input_dim=1, num_layers=2, num_heads=4, hidden_dim=16)


def test_prune_worked_example():
    masks = build_weight_prune_mask({"W": np.array([[0.5, -0.1, 0.3]])}, 0.34)
    assert masks["W"].tolist() == [[1, 0, 0]]


def test_prune_p0_is_identity():
    masks = build_weight_prune_mask({"W": np.array([[0.5, -0.1, 0.3]])}, 0.0)
    assert np.all(masks["W"] == 1)


def test_prune_random_vector_sort_oracle(rng):
    theta = rng.normal(size=(10, 10))
    mask = build_weight_prune_mask({"W": theta}, 0.2)["W"]
    assert (mask == 0).sum() == 20
    assert np.abs(theta[mask == 1]).min() >= np.abs(theta[mask == 0]).max()
    expect = np.ones(100)
    expect[np.argsort(np.abs(theta).ravel(), kind="stable")[:20]] = 0
    assert np.array_equal(mask.ravel(), expect)


def test_prune_ties_go_to_lowest_flat_index():
    masks = build_weight_prune_mask({"W": np.array([[1.0, 1.0, 1.0, 1.0]])}, 0.5)
    assert masks["W"].tolist() == [[0, 0, 1, 1]]


def test_prune_rejects_full_pruning():
    with pytest.raises(ValueError):
        build_weight_prune_mask({"W": np.ones((1, 3))}, 1.0)
    with pytest.raises(ValueError):
        build_weight_prune_mask({"W": np.ones((1, 3))}, 0.9)


def test_prune_across_encoder_pool(rng):
    params = init_encoder_params(CFG, rng)
    pool = prune_pool(params)
    assert "input.W" in pool and not any("gamma" in k or "beta" in k or ".b" in k for k in pool)
    masks = build_weight_prune_mask(params, 0.2)
    total = sum(params[k].data.size for k in pool)
    assert sum(int((m == 0).sum()) for m in masks.values()) == ceil_count(0.2, total)
    pruned = np.concatenate([np.abs(params[k].data[masks[k] == 0]) for k in pool])
    kept = np.concatenate([np.abs(params[k].data[masks[k] == 1]) for k in pool])
    assert kept.min() >= pruned.max()
    assert all(masks[k].shape == params[k].shape for k in pool)


@pytest.mark.parametrize("kind, shape", [("layer", (2,)), ("head", (2, 4))])
def test_structural_mask_extremes(kind, shape, rng):
    assert np.all(sample_structural_mask(kind, CFG, 0.0, rng) == 1)
    zeros = sample_structural_mask(kind, CFG, 1.0, rng)
    assert zeros.shape == shape and np.all(zeros == 0)


def test_structural_keep_rate():
    rng = np.random.default_rng(0)
    bits = np.stack([sample_structural_mask("head", CFG, 0.2, rng) for _ in range(10_000)])
    assert abs(bits.mean() - 0.8) < 0.02


def test_noise_zero_for_constant_grid(rng):
    deltas = gaussian_noise_baseline({"W": ad.param(np.zeros((3, 3)))}, 0.1, rng, pool=["W"])
    assert np.all(deltas["W"] == 0)


def test_noise_std_matches_target():
    rng = np.random.default_rng(3)
    w = rng.normal(0, 2.0, size=(100, 100))
    delta = gaussian_noise_baseline({"W": w}, 0.1, np.random.default_rng(4), pool=["W"])["W"]
    target = 0.1 * np.std(w)
    assert abs(np.std(delta) - target) / target < 0.05


def test_noise_deterministic_for_stream_position():
    params = {"W": np.arange(12.0).reshape(3, 4)}
    a = gaussian_noise_baseline(params, 0.1, np.random.default_rng(8), pool=["W"])
    b = gaussian_noise_baseline(params, 0.1, np.random.default_rng(8), pool=["W"])
    assert np.array_equal(a["W"], b["W"])


def test_noise_rejects_nonpositive_scale(rng):
    with pytest.raises(ValueError):
        gaussian_noise_baseline({"W": np.ones((2, 2))}, 0.0, rng, pool=["W"])


def test_identity_plan_flags():
    plan = PerturbationPlan.identity(CFG)
    assert plan.is_identity
    assert not PerturbationPlan(np.array([1, 0]), np.ones((2, 4))).is_identity


@pytest.mark.parametrize("kind", ["weight_prune", "layer_drop", "head_drop", "gaussian_noise"])
def test_plans_are_read_only_on_parameters(kind, rng, small_corpus):
    params = init_encoder_params(CFG, rng)
    before = {k: v.data.copy() for k, v in params.items()}
    plan = make_plan(kind, params, CFG, 0.5, rng)
    batch = batch_graphs(small_corpus[:3])
    pe = np.concatenate([compute_rwse(g) for g in small_corpus[:3]])
    encode_batch(batch, pe, params, CFG, plan)
    assert all(np.array_equal(before[k], params[k].data) for k in params)


def test_identity_plan_output_equals_plain_encoder(rng, small_corpus):
    params = init_encoder_params(CFG, rng)
    batch = batch_graphs(small_corpus[:3])
    pe = np.concatenate([compute_rwse(g) for g in small_corpus[:3]])
    _, plain = encode_batch(batch, pe, params, CFG)
    _, planned = encode_batch(batch, pe, params, CFG, make_plan("identity", params, CFG, 0.2, rng))
    assert np.array_equal(plain.data, planned.data)


def test_plan_summary_counts(rng):
    params = init_encoder_params(CFG, rng)
    plan = make_plan("weight_prune", params, CFG, 0.2, rng)
    total = sum(params[k].data.size for k in prune_pool(params))
    assert plan.summary()["pruned_weights"] == ceil_count(0.2, total)


def test_unknown_kind_rejected(rng):
    with pytest.raises(ValueError):
        make_plan("channel_prune", init_encoder_params(CFG, rng), CFG, 0.2, rng)
