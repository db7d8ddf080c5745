import struct

import numpy as np
import pytest

from learned_resizer import checkpoint as ckpt_io
from learned_resizer.baselines import MiniClassifier, MiniIqaHead
from learned_resizer.resizer import ResizerConfig, ResizerModel
from learned_resizer import tensor as T


def random_models(seed):
    rng = np.random.default_rng(seed)
    resizer = ResizerModel(ResizerConfig(int(rng.integers(1, 5)), int(rng.choice([2, 4, 8])),
                                         int(rng.integers(4, 40)), int(rng.integers(4, 40))), seed=seed)
    if rng.random() < 0.5:
        baseline = MiniClassifier(int(rng.integers(2, 12)), int(rng.choice([4, 8])), seed=seed)
    else:
        baseline = MiniIqaHead(int(rng.choice([4, 8])), seed=seed)
    if rng.random() < 0.5:  # record running statistics too
        with T.no_grad():
            x = T.Tensor(rng.random((2, 3, 8, 8)))
            baseline.logits(resizer(x, training=True, out_size=(8, 8)), training=True)
    return resizer, baseline


def test_round_trip_many_random_models(tmp_path):
    for seed in range(100):
        resizer, baseline = random_models(seed)
        ckpt = ckpt_io.from_models(resizer, baseline, step=seed, lr=0.05 * 0.94 ** seed, seed=seed,
                                   probability_head="softmax")
        p1, p2 = tmp_path / "a.rsz", tmp_path / "b.rsz"
        ckpt_io.save(p1, ckpt)
        loaded = ckpt_io.load(p1)
        ckpt_io.save(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.metadata == ckpt.metadata
        for k, v in ckpt.tensors.items():
            assert np.array_equal(loaded.tensors[k], v.astype(np.float32))


def test_restore_reproduces_outputs(rng):
    resizer, baseline = random_models(3)
    ck = ckpt_io.from_bytes(ckpt_io.to_bytes(ckpt_io.from_models(resizer, baseline)))
    r2, b2 = ckpt_io.restore_resizer(ck), ckpt_io.restore_baseline(ck)
    x = T.Tensor(rng.random((1, 3, 12, 12)).astype(np.float32))
    with T.no_grad():
        assert np.array_equal(resizer(x, training=True).data, r2(x, training=True).data)
    assert b2.metadata() == baseline.metadata()


def test_bad_magic():
    with pytest.raises(ckpt_io.CheckpointError, match="bad magic .*not a resizer checkpoint"):
        ckpt_io.from_bytes(b"PNG\x00\x00\x00\x00\x00" + b"\0" * 16)


def test_bad_version():
    raw = bytearray(ckpt_io.to_bytes(ckpt_io.Checkpoint({"a": 1}, {})))
    raw[8:12] = struct.pack("<I", 7)
    with pytest.raises(ckpt_io.CheckpointError, match="unsupported checkpoint version 7.*reads version 1"):
        ckpt_io.from_bytes(bytes(raw))


def test_truncated_and_trailing():
    raw = ckpt_io.to_bytes(ckpt_io.Checkpoint({}, {"w": np.ones((2, 3), np.float32)}))
    with pytest.raises(ckpt_io.CheckpointError, match="truncated"):
        ckpt_io.from_bytes(raw[:-1])
    with pytest.raises(ckpt_io.CheckpointError, match="trailing"):
        ckpt_io.from_bytes(raw + b"\0")


def test_byte_layout():
    raw = ckpt_io.to_bytes(ckpt_io.Checkpoint({"k": 1}, {"ab": np.array([1.5], np.float32)}))
    meta = b'{"k":1}'
    assert raw == (b"RSZCKPT1" + struct.pack("<II", 1, len(meta)) + meta + struct.pack("<I", 1)
                   + struct.pack("<I", 2) + b"ab" + struct.pack("<II", 1, 1) + struct.pack("<f", 1.5))


def test_missing_parts():
    with pytest.raises(ckpt_io.CheckpointError, match="no resizer"):
        ckpt_io.restore_resizer(ckpt_io.Checkpoint())
    with pytest.raises(ckpt_io.CheckpointError, match="no baseline"):
        ckpt_io.restore_baseline(ckpt_io.Checkpoint())
