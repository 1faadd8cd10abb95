"""Residual model: shape contracts, checkpoint container, transfer rules."""

import numpy as np
import pytest

from cryb.errors import ArchMismatch, CorruptCheckpoint, ShapeMismatch
from cryb.model import (HEAD_PREFIX, Res8, Res8Config, build_res8,
                        forward_embed, forward_logits, load_checkpoint,
                        parameter_count, predict_labels, read_checkpoint_header,
                        save_checkpoint, transfer_load)
from cryb.nncore import Tensor
from cryb.synth import derive_rng


def _model(n_classes=2, seed=0, names=None):
    if names is None:
        names = [f"c{i}" for i in range(n_classes)]
    return build_res8(Res8Config(n_classes=n_classes),
                      derive_rng(seed, "init"), class_names=names)


def test_parameter_count_is_frozen_constant():
    assert parameter_count(_model(2)) == 129152


def test_parameter_count_scales_with_head():
    # only the head grows: 45 weights + 1 bias per extra class
    assert parameter_count(_model(8)) - parameter_count(_model(2)) == 6 * 46


def test_forward_shapes(rng):
    model = _model(4)
    batch = rng.normal(size=(3, 40, 101)).astype(np.float32)
    logits = forward_logits(model, batch)
    assert logits.value.shape == (3, 4)
    embed = forward_embed(model, batch[0])
    assert embed.shape == (45,)
    with pytest.raises(ShapeMismatch):
        forward_logits(model, batch[:, :20, :])


def test_embedding_is_pre_head(rng):
    """Logits must be an affine map of the embedding vector."""
    model = _model(3)
    model.eval()
    x = rng.normal(size=(40, 101)).astype(np.float32)
    emb = forward_embed(model, x)
    logits = forward_logits(model, x[None]).value[0]
    want = model.head.weight.value @ emb + model.head.bias.value
    np.testing.assert_allclose(logits, want, rtol=1e-5, atol=1e-6)


def test_residual_blocks_are_identity_when_zeroed(rng):
    model = _model(2)
    model.eval()
    for block in model.blocks:
        block.conv.weight.value[:] = 0
        block.conv.bias.value[:] = 0
        block.bn.gamma.value[:] = 0
        block.bn.beta.value[:] = 0
    # block inputs in the real network are post-relu, hence nonnegative
    x = np.abs(rng.normal(size=(2, 45, 10, 33))).astype(np.float32)
    t = Tensor(x, requires_grad=False)
    for block in model.blocks:
        out = block(t)
        np.testing.assert_array_equal(out.value, t.value)
        t = out


def test_train_eval_mode_switch(rng):
    model = _model(2)
    batch = rng.normal(size=(4, 40, 101)).astype(np.float32)
    model.train()
    a = forward_logits(model, batch).value
    model.eval()
    b = forward_logits(model, batch).value
    # eval uses running statistics, so outputs differ from train mode
    assert not np.allclose(a, b)
    c = forward_logits(model, batch).value
    np.testing.assert_array_equal(b, c)


def test_checkpoint_round_trip(tmp_path, rng):
    model = _model(3, seed=4, names=["x", "y", "z"])
    # push the model away from init so the test is not vacuous
    for p in model.parameters():
        p.value = p.value + rng.normal(0, 0.01, p.value.shape).astype(np.float32)
    model.bn_in.running_mean += 0.5
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, source_task="demo", seed=4,
                    metrics={"val_uar": 0.9})
    back = load_checkpoint(path)
    want = dict(model.state_arrays())
    got = dict(back.state_arrays())
    assert set(want) == set(got)
    for name in want:
        np.testing.assert_array_equal(want[name], got[name], err_msg=name)
    assert back.class_names == ["x", "y", "z"]
    assert back.meta["source_task"] == "demo"
    assert back.meta["seed"] == 4
    header = read_checkpoint_header(path)
    assert header["config"]["n_classes"] == 3


def test_checkpoint_rejects_corruption(tmp_path):
    model = _model(2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, source_task="", seed=0, metrics={})
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(bad)
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(trunc)


def test_transfer_copies_trunk_and_reinits_head(tmp_path, rng):
    source = _model(8, seed=1)
    # a trained source has nonzero biases; emulate that before saving
    for p in source.parameters():
        p.value = p.value + rng.normal(0, 0.01, p.value.shape).astype(np.float32)
    path = tmp_path / "src.ckpt"
    save_checkpoint(source, path, source_task="words", seed=1, metrics={})
    target = transfer_load(Res8Config(n_classes=2), path,
                           derive_rng(2, "init"), class_names=["a", "b"])
    src = dict(source.state_arrays())
    tgt = dict(target.state_arrays())
    for name, arr in tgt.items():
        if name.startswith(HEAD_PREFIX):
            assert arr.shape[0] == 2
            assert not np.array_equal(arr, src[name][:arr.shape[0]])
        else:
            np.testing.assert_array_equal(arr, src[name], err_msg=name)
    assert target.meta["source_task"] == "words"


def test_transfer_same_class_count_still_reinits_head(tmp_path):
    source = _model(2, seed=1)
    path = tmp_path / "src.ckpt"
    save_checkpoint(source, path, source_task="gender", seed=1, metrics={})
    target = transfer_load(Res8Config(n_classes=2), path,
                           derive_rng(9, "init"), class_names=["a", "b"])
    assert not np.array_equal(target.head.weight.value,
                              source.head.weight.value)


def test_transfer_rejects_architecture_mismatch(tmp_path):
    source = Res8(Res8Config(n_classes=2, n_channels=32),
                  derive_rng(0, "init"), class_names=["a", "b"])
    path = tmp_path / "src.ckpt"
    save_checkpoint(source, path, source_task="", seed=0, metrics={})
    with pytest.raises(ArchMismatch):
        transfer_load(Res8Config(n_classes=2), path, derive_rng(1, "init"),
                      class_names=["a", "b"])


def test_predict_labels_maps_argmax(rng):
    model = _model(2, names=["neg", "pos"])
    model.eval()
    stack = rng.normal(size=(7, 40, 101)).astype(np.float32)
    labels = predict_labels(model, stack, batch_size=3)
    logits = forward_logits(model, stack).value
    want = [["neg", "pos"][i] for i in np.argmax(logits, axis=1)]
    assert labels == want
