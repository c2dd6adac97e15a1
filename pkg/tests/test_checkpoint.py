import numpy as np
import pytest

from dcgcl.checkpoint import MAGIC, Checkpoint, CheckpointError, load_checkpoint, save_checkpoint


def sample(rng):
    params = {"a.W": rng.normal(size=(3, 4)), "a.b": rng.normal(size=(1, 4))}
    return Checkpoint(config={"encoder": {"hidden_dim": 4}}, params=params, epoch=7,
                      first_moment={k: v * 0.1 for k, v in params.items()},
                      second_moment={k: v ** 2 for k, v in params.items()},
                      optimizer={"step_count": 3}, rng_state={"seed": 1})


def test_round_trip(tmp_path, rng):
    ck = sample(rng)
    back = load_checkpoint(save_checkpoint(ck, tmp_path / "x.ckpt"))
    assert back.epoch == 7 and back.config == ck.config and back.optimizer == ck.optimizer
    assert back.rng_state == ck.rng_state
    for group in ("params", "first_moment", "second_moment"):
        for k, v in getattr(ck, group).items():
            assert np.array_equal(getattr(back, group)[k], v)


def test_identical_state_gives_identical_bytes(tmp_path):
    a = save_checkpoint(sample(np.random.default_rng(0)), tmp_path / "a.ckpt")
    b = save_checkpoint(sample(np.random.default_rng(0)), tmp_path / "b.ckpt")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes().startswith(MAGIC)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"hello\n")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_truncated(tmp_path, rng):
    p = save_checkpoint(sample(rng), tmp_path / "t.ckpt")
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_refuses_non_finite(tmp_path, rng):
    ck = sample(rng)
    ck.params["a.W"][0, 0] = np.inf
    with pytest.raises(CheckpointError):
        save_checkpoint(ck, tmp_path / "n.ckpt")
    assert not (tmp_path / "n.ckpt").exists()
