import numpy as np
import pytest
import torch

from vton.checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_params_into,
    params_hash,
    save_checkpoint,
    state_dict_to_params,
)
from vton.errors import CheckpointMismatchError
from vton.nets import ResidualUNet, ResidualUNetSpec, init_module


def make_ckpt(seed=0):
    net = init_module(ResidualUNet(ResidualUNetSpec(2, 2, 4, 1)), seed)
    return net, Checkpoint("fabricator", "cfg123", state_dict_to_params(net), {"depth": 1})


def test_roundtrip_and_byte_determinism(tmp_path):
    net, ckpt = make_ckpt()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, ckpt)
    save_checkpoint(p2, ckpt)
    assert p1.read_bytes() == p2.read_bytes()
    loaded = load_checkpoint(p1)
    assert loaded.stage == "fabricator"
    assert loaded.config_hash == "cfg123"
    assert loaded.meta == {"depth": 1}
    assert set(loaded.params) == set(ckpt.params)
    for name in ckpt.params:
        np.testing.assert_array_equal(loaded.params[name], ckpt.params[name])
    assert loaded.param_hash() == ckpt.param_hash()


def test_params_hash_sensitivity():
    _, ckpt = make_ckpt()
    h = params_hash(ckpt.params)
    mutated = {k: v.copy() for k, v in ckpt.params.items()}
    name = sorted(mutated)[0]
    mutated[name].flat[0] += 1.0
    assert params_hash(mutated) != h
    renamed = dict(ckpt.params)
    renamed["extra"] = renamed.pop(name)
    assert params_hash(renamed) != h


def test_corruption_detected(tmp_path):
    _, ckpt = make_ckpt()
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, ckpt)
    blob = bytearray(path.read_bytes())
    blob[-4] ^= 0xFF  # flip a bit in the last parameter
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointMismatchError, match="corrupted"):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(CheckpointMismatchError, match="magic"):
        load_checkpoint(path)


def test_require_stage():
    _, ckpt = make_ckpt()
    ckpt.require_stage("fabricator")
    with pytest.raises(CheckpointMismatchError, match="expected stage"):
        ckpt.require_stage("warper")


def test_load_params_into_inventory_check():
    net, ckpt = make_ckpt()
    fresh = ResidualUNet(ResidualUNetSpec(2, 2, 4, 1))
    load_params_into(fresh, ckpt.params)
    for (n, a), (_, b) in zip(fresh.state_dict().items(), net.state_dict().items()):
        assert torch.equal(a, b), n
    partial = dict(ckpt.params)
    partial.pop(sorted(partial)[0])
    with pytest.raises(CheckpointMismatchError, match="missing"):
        load_params_into(ResidualUNet(ResidualUNetSpec(2, 2, 4, 1)), partial)
    extra = dict(ckpt.params)
    extra["bogus"] = np.zeros(3, dtype=np.float32)
    with pytest.raises(CheckpointMismatchError, match="unexpected"):
        load_params_into(ResidualUNet(ResidualUNetSpec(2, 2, 4, 1)), extra)


def test_load_params_into_prefix():
    net, ckpt = make_ckpt()
    prefixed = {"gen/" + k: v for k, v in ckpt.params.items()}
    fresh = ResidualUNet(ResidualUNetSpec(2, 2, 4, 1))
    load_params_into(fresh, prefixed, prefix="gen/")
    assert torch.equal(
        fresh.state_dict()["head.weight"], net.state_dict()["head.weight"]
    )
