import json
import struct

import numpy as np
import pytest
import torch

from utility_ir.checkpoint import FORMAT_VERSION, MAGIC, Checkpoint, load_model
from utility_ir.config import build_config
from utility_ir.errors import CheckpointError
from utility_ir.restore_net import UtilityIR
from utility_ir.trainer import Trainer

from .conftest import TINY


@pytest.fixture
def trained(corpus, tiny_config, tmp_path):
    """Checkpoint after one optimizer step, so optimizer and RNG state are populated"""
    torch.manual_seed(0)
    trainer = Trainer(UtilityIR.from_config(tiny_config), tiny_config, corpus, str(tmp_path / "run"))
    trainer.run(until_epoch=1)
    return trainer.snapshot(0)


def test_save_is_byte_stable(trained, tmp_path):
    first = trained.save(str(tmp_path / "a.uir"))
    second = Checkpoint.load(first).save(str(tmp_path / "b.uir"))
    with open(first, "rb") as f, open(second, "rb") as g:
        assert f.read() == g.read()


def test_round_trip_restores_state(trained, tmp_path):
    loaded = Checkpoint.load(trained.save(str(tmp_path / "ckpt.uir")))
    assert (loaded.epoch, loaded.stage, loaded.step) == (0, 1, trained.step)
    assert loaded.config == trained.config
    assert loaded.rng_state == trained.rng_state
    assert torch.equal(loaded.torch_rng_state, trained.torch_rng_state)
    assert loaded.optimizer_state["param_groups"] == json.loads(json.dumps(trained.optimizer_state["param_groups"]))
    for key, state in trained.optimizer_state["state"].items():
        for name, value in state.items():
            assert torch.equal(loaded.optimizer_state["state"][key][name], value)


def test_loaded_model_matches_outputs(trained, tmp_path):
    original = trained.build_model().eval()
    restored = load_model(trained.save(str(tmp_path / "ckpt.uir")))
    image = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(original(image), restored(image))
        assert torch.equal(original.encode(image)[1], restored.encode(image)[1])


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        Checkpoint.load(str(tmp_path / "absent.uir"))


def test_bad_magic(trained, tmp_path):
    path = trained.save(str(tmp_path / "ckpt.uir"))
    with open(path, "r+b") as f:
        f.write(b"NOTACKPT")
    with pytest.raises(CheckpointError):
        Checkpoint.load(path)


def test_version_mismatch(trained, tmp_path):
    path = trained.save(str(tmp_path / "ckpt.uir"))
    with open(path, "r+b") as f:
        f.seek(len(MAGIC))
        f.write(struct.pack("<I", FORMAT_VERSION + 1))
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.load(path)


@pytest.mark.parametrize("keep", [10, 200, -16])
def test_truncated(trained, tmp_path, keep):
    path = trained.save(str(tmp_path / "ckpt.uir"))
    with open(path, "rb") as f:
        raw = f.read()
    with open(path, "wb") as f:
        f.write(raw[:keep])
    with pytest.raises(CheckpointError):
        Checkpoint.load(path)


def test_weights_must_fit_config(trained):
    wider = build_config({**TINY, "dim": 32})
    mismatched = Checkpoint(model_state=trained.model_state, config=wider)
    with pytest.raises(CheckpointError):
        mismatched.build_model()


def test_weights_are_little_endian_float32(trained, tmp_path):
    path = trained.save(str(tmp_path / "ckpt.uir"))
    with open(path, "rb") as f:
        raw = f.read()
    magic, version, header_len, config_len = struct.unpack_from("<8sIQQ", raw)
    assert magic == MAGIC and version == FORMAT_VERSION
    name, tensor = next(iter(trained.model_state.items()))
    start = struct.calcsize("<8sIQQ") + header_len + config_len
    first = np.frombuffer(raw[start : start + tensor.numel() * 4], dtype="<f4")
    assert np.array_equal(first, tensor.numpy().ravel()), name
