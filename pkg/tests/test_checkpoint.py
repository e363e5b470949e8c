import numpy as np
import pytest

from _helpers import small_backbone, small_dataset
from uafrec import checkpoint as ckpt
from uafrec.finetune import BaselineModel, UafModel


def test_tensor_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.standard_normal((3, 4)).astype(np.float32),
               "b/c": np.array([np.float32(1e-40), -0.0, np.finfo(np.float32).max], dtype=np.float32),
               "s": np.float32(2.5)}
    ckpt.save_tensors(tmp_path / "x.ckpt", tensors, {"kind": "test", "note": "hello"})
    back, meta = ckpt.load_tensors(tmp_path / "x.ckpt")
    assert meta == {"kind": "test", "note": "hello"}
    for k, v in tensors.items():
        assert back[k].shape == np.shape(v)
        assert back[k].tobytes() == np.asarray(v, dtype="<f4").tobytes()


def test_header_is_text(tmp_path):
    ckpt.save_tensors(tmp_path / "x.ckpt", {"w": np.zeros((2, 3), np.float32)})
    raw = (tmp_path / "x.ckpt").read_bytes()
    assert raw.startswith(b"UAFREC-CKPT 1\ntensor w 2x3 0 24\nend\n")
    assert len(raw) == len(b"UAFREC-CKPT 1\ntensor w 2x3 0 24\nend\n") + 24


def test_corrupt_files(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"hello\nend\n")
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_tensors(p)
    ckpt.save_tensors(p, {"w": np.zeros(10, np.float32)})
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.load_tensors(p)
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_tensors(tmp_path / "missing.ckpt")


def test_backbone_round_trip(tmp_path):
    m = small_backbone()
    ckpt.save_backbone(tmp_path / "b.ckpt", m)
    back = ckpt.load_backbone(tmp_path / "b.ckpt")
    assert back.config == m.config
    for (k, a), b in zip(m.named_parameters().items(), back.named_parameters().values()):
        assert a.data.tobytes() == b.data.tobytes(), k
    ckpt.save_backbone(tmp_path / "c.ckpt", back)
    assert ckpt.file_digest(tmp_path / "b.ckpt") == ckpt.file_digest(tmp_path / "c.ckpt")


@pytest.mark.parametrize("strategy", ["hard", "soft", "rl", "random"])
def test_finetuned_round_trip(tmp_path, strategy):
    ds = small_dataset()
    m = UafModel.build(small_backbone(), strategy, ds.target_vocab, seed=4)
    ckpt.save_finetuned(tmp_path / "f.ckpt", m)
    back, meta = ckpt.load_finetuned(tmp_path / "f.ckpt")
    assert meta["strategy"] == strategy
    assert meta["gate_mode"] == ("continuous" if strategy == "soft" else "binary")
    names = set(m.all_parameters())
    assert names == set(back.all_parameters())
    assert any(n.startswith("frozen-blocks/") for n in names) and any(n.startswith("trainable-blocks/") for n in names)
    if strategy != "random":
        assert any(n.startswith("policy-net/") for n in names)
    users = np.unique(ds.target_users)[:10]
    src = ds.padded_source(users)
    assert np.array_equal(m.scores(src, users), back.scores(src, users))
    assert back.frozen_digest() == m.frozen_digest()


def test_baseline_round_trip(tmp_path):
    ds = small_dataset()
    m = BaselineModel.build("last1", ds.target_vocab, backbone=small_backbone())
    ckpt.save_finetuned(tmp_path / "f.ckpt", m)
    back, meta = ckpt.load_finetuned(tmp_path / "f.ckpt")
    assert meta["regime"] == "last1" and back.regime == "last1"
    src = ds.padded_source([1, 2, 3])
    assert np.array_equal(m.scores(src, None), back.scores(src, None))


def test_kind_checked(tmp_path):
    ckpt.save_backbone(tmp_path / "b.ckpt", small_backbone())
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_finetuned(tmp_path / "b.ckpt")
