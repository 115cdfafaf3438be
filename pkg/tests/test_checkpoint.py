import struct

import numpy as np
import pytest

from kinjoint.engine.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from kinjoint.engine.optim import Adam
from kinjoint.engine.tensor import Tensor
from kinjoint.models import BackboneConfig, JLNet

SMALL = BackboneConfig(input_size=(16, 16, 3), stage_channel_widths=[4, 4, 4], head_hidden=8)


def _trained_adam():
    params = {"a": Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True),
              "b": Tensor(np.array([1.5]), requires_grad=True)}
    opt = Adam(params, lr=1e-3)
    for p in params.values():
        p.grad = np.ones_like(p.data)
    opt.step()
    return params, opt


def test_round_trip(tmp_path):
    params, opt = _trained_adam()
    path = save_checkpoint(tmp_path / "x.kjckpt", {k: v.data for k, v in params.items()},
                           [(opt.names, opt.state)], {"fold": 3})
    ck = load_checkpoint(path)
    assert list(ck.params) == ["a", "b"]
    for k, v in params.items():
        np.testing.assert_array_equal(ck.params[k], v.data)
    assert ck.meta == {"fold": 3}
    names, state = ck.optimizers[0]
    assert names == ["a", "b"] and state.step == 1 and state.lr == 1e-3
    for got, want in zip(state.first_moment, opt.state.first_moment):
        np.testing.assert_array_equal(got, want)
    assert ck.adam is state


def test_layout_is_little_endian_and_deterministic(tmp_path):
    arr = np.array([1.0, 2.0], dtype=">f8")
    p1 = save_checkpoint(tmp_path / "a.kjckpt", {"w": arr})
    p2 = save_checkpoint(tmp_path / "b.kjckpt", {"w": arr.astype("<f8")})
    raw = p1.read_bytes()
    assert raw == p2.read_bytes()
    assert raw.startswith(MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    payload = raw[len(MAGIC) + 8 + hlen:]
    assert payload == np.array([1.0, 2.0], dtype="<f8").tobytes()


def test_model_state_round_trip(tmp_path):
    net = JLNet(SMALL, seed=5)
    save_checkpoint(tmp_path / "m.kjckpt", net.state_dict())
    other = JLNet(SMALL, seed=6)
    other.load_state_dict(load_checkpoint(tmp_path / "m.kjckpt").params)
    for k, v in net.state_dict().items():
        np.testing.assert_array_equal(other.state_dict()[k], v)


def test_bad_files(tmp_path):
    bad = tmp_path / "bad.kjckpt"
    bad.write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    good = save_checkpoint(tmp_path / "g.kjckpt", {"w": np.ones(4)})
    bad.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
