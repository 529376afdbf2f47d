import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from graphtransformer import checkpoint
from graphtransformer.vocab import Vocab


def test_roundtrip_and_layout(tmp_path):
    tensors = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array(2.5, dtype=np.float64)}
    meta = {"step": 3, "config": {"z": 1, "a": 2}}
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, tensors, meta)
    back, m = checkpoint.load(path)
    assert m == meta
    assert back["a.w"].dtype == np.float32 and np.array_equal(back["a.w"], tensors["a.w"])
    assert back["b"].dtype == np.float64 and back["b"].shape == ()
    raw = path.read_bytes()
    assert raw[:8] == checkpoint.MAGIC
    assert struct.unpack_from("<I", raw, 8)[0] == checkpoint.VERSION
    meta_len = struct.unpack_from("<I", raw, 12)[0]
    assert raw[16:16 + meta_len] == b'{"config":{"a":2,"z":1},"step":3}'
    assert not list(tmp_path.glob("*.tmp"))


def test_rejects_bad_files():
    good = checkpoint.dumps({"x": np.zeros(2, np.float32)}, {})
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.loads(b"NOTACKPT" + good[8:])
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.loads(good[:8] + struct.pack("<I", 99) + good[12:])
    with pytest.raises(checkpoint.CheckpointError, match="trailing"):
        checkpoint.loads(good + b"\x00")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.dumps({"i": np.zeros(2, np.int32)}, {})


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.text("abcdefgh.", min_size=1, max_size=12),
                       arrays(st.sampled_from([np.float32, np.float64]), array_shapes(min_dims=0, max_dims=3, max_side=4)),
                       max_size=4))
def test_roundtrip_property(tensors):
    back, _ = checkpoint.loads(checkpoint.dumps(tensors, {"k": 1}))
    assert back.keys() == tensors.keys()
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype
        np.testing.assert_array_equal(back[k], tensors[k])


def test_vocab():
    v = Vocab.build(["b", "a", "b", "c"])
    assert v.token(v.id("b")) == "b" and v.id("zzz") == v.id("<unk>")
    assert Vocab.from_json(v.to_json()).stoi == v.stoi
    closed = Vocab(["x", "y"], specials=(), closed=True)
    with pytest.raises(KeyError):
        closed.id("z")
