import numpy as np
import pytest

from oracles import numeric_grad
from regionseg.errors import BadConfig, ShapeMismatch
from regionseg.losses import soft_dice_loss
from regionseg.optim import MomentumState, sgd_momentum_step
from regionseg.tensor import Tensor, no_grad, softmax_channels
from regionseg.unet import (
    FULL_SCALE_CHANNELS, UNetConfig, build, checkpoint_bytes, forward, load_checkpoint, model_from_bytes,
    parameter_count, save_checkpoint,
)

SMALL = UNetConfig(2, (8, 16), 3)


def test_default_config_is_five_steps():
    cfg = UNetConfig()
    assert cfg.resolution_steps == 5 and cfg.channels == FULL_SCALE_CHANNELS and cfg.divisor == 16


def test_output_shape_and_divisibility():
    m = build(SMALL)
    out = forward(m, np.zeros((2, 1, 8, 4, 6)))
    assert out.shape == (2, 3, 8, 4, 6)
    with pytest.raises(ShapeMismatch):
        forward(m, np.zeros((1, 1, 8, 5, 6)))
    with pytest.raises(ShapeMismatch):
        forward(m, np.zeros((1, 2, 8, 4, 6)))
    deep = build(UNetConfig(3, (2, 4, 8), 2))
    assert forward(deep, np.zeros((1, 1, 4, 8, 12))).shape == (1, 2, 4, 8, 12)
    with pytest.raises(ShapeMismatch):
        forward(deep, np.zeros((1, 1, 4, 6, 12)))


def test_parameter_count():
    m = build(SMALL)
    assert m.num_parameters() == parameter_count(SMALL) == 18683
    for cfg in (UNetConfig(3, (8, 16, 32), 5), UNetConfig(1, (4,), 2), UNetConfig(4, (2, 3, 5, 7), 4, 2)):
        assert build(cfg).num_parameters() == parameter_count(cfg)


def test_config_validation():
    with pytest.raises(BadConfig):
        UNetConfig(3, (8, 16), 3)
    with pytest.raises(BadConfig):
        UNetConfig(2, (8, 16), 1)
    with pytest.raises(BadConfig):
        UNetConfig.from_dict({"channels": [8]})
    assert UNetConfig.from_dict(SMALL.to_dict()) == SMALL


def test_same_seed_same_weights():
    a, b = build(SMALL), build(SMALL)
    assert all(np.array_equal(x, y) for x, y in zip(a.state_arrays(), b.state_arrays()))
    c = build(UNetConfig(2, (8, 16), 3, seed=1))
    assert not np.array_equal(a.encoder[0].w1.data, c.encoder[0].w1.data)


def test_zero_head_gives_uniform_probabilities():
    m = build(SMALL)
    m.head_w.data[...] = 0.0
    x = np.random.default_rng(0).standard_normal((1, 1, 4, 4, 4))
    p = softmax_channels(forward(m, x)).data
    assert np.allclose(p, 1 / 3, atol=1e-15)


def test_infer_mode_is_stateless():
    m = build(SMALL)
    x = np.random.default_rng(1).standard_normal((2, 1, 4, 4, 4))
    forward(m, x, "train")
    before = [a.copy() for a in m.state_arrays()]
    with no_grad():
        o1 = forward(m, x, "infer").data
        o2 = forward(m, x, "infer").data
    assert np.array_equal(o1, o2)
    assert all(np.array_equal(a, b) for a, b in zip(before, m.state_arrays()))
    o3 = forward(m, x[:1], "infer").data
    assert np.max(np.abs(o3 - o1[:1])) < 1e-12  # no cross-sample coupling at inference


def test_train_mode_updates_running_stats():
    m = build(SMALL)
    rm = m.encoder[0].bn.running_mean.copy()
    forward(m, np.random.default_rng(2).standard_normal((2, 1, 4, 4, 4)) + 3, "train")
    assert not np.array_equal(rm, m.encoder[0].bn.running_mean)


@pytest.mark.parametrize("mode", ["train", "infer"])
def test_whole_network_gradient(mode):
    cfg = UNetConfig(2, (2, 3), 2, seed=4)
    m = build(cfg)
    for bn in m.batchnorms():
        bn.running_mean[...] = 0.1
        bn.running_var[...] = 1.5
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 1, 4, 4, 2))
    r = rng.standard_normal((2, 2, 4, 4, 2))
    saved = [(bn.running_mean.copy(), bn.running_var.copy()) for bn in m.batchnorms()]

    def restore():
        for bn, (mu, var) in zip(m.batchnorms(), saved):
            bn.running_mean[...] = mu
            bn.running_var[...] = var

    def f():
        with no_grad():
            out = float((forward(m, x, mode).data * r).sum())
        restore()
        return out

    m.zero_grad()
    forward(m, Tensor(x), mode).backward(r)
    restore()
    for p in m.parameters():
        num = numeric_grad(f, p.data, 1e-6)
        diff = np.linalg.norm(p.grad - num)
        assert diff <= 1e-5 * (np.linalg.norm(p.grad) + np.linalg.norm(num)) + 1e-8
    if mode == "train":
        # a bias feeding batch statistics is cancelled by the normalization
        for blk in m.encoder + [u.block for u in m.decoder]:
            assert np.max(np.abs(blk.b2.grad)) < 1e-12


def test_checkpoint_round_trip(tmp_path):
    m = build(SMALL)
    forward(m, np.random.default_rng(3).standard_normal((2, 1, 4, 4, 4)), "train")
    m.meta = {"mode": "region", "region": {"name": "x"}}
    data = checkpoint_bytes(m)
    again = model_from_bytes(data)
    assert checkpoint_bytes(again) == data
    assert again.meta == m.meta and again.config == m.config
    save_checkpoint(m, tmp_path / "m.ckpt")
    assert checkpoint_bytes(load_checkpoint(tmp_path / "m.ckpt")) == data
    x = np.random.default_rng(4).standard_normal((1, 1, 4, 4, 4))
    with no_grad():
        assert np.array_equal(forward(m, x).data, forward(again, x).data)


def test_checkpoint_corruption_rejected():
    data = checkpoint_bytes(build(UNetConfig(1, (2,), 2)))
    with pytest.raises(BadConfig):
        model_from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(BadConfig):
        model_from_bytes(data[:-8])
    bad = bytearray(data)
    bad[-8:] = np.array([np.nan]).astype("<f8").tobytes()
    with pytest.raises(BadConfig):
        model_from_bytes(bytes(bad))
    with pytest.raises(BadConfig):
        model_from_bytes(data[:8] + b"\x02" + data[9:])


def test_overfits_single_volume():
    m = build(UNetConfig(2, (4, 8), 2, seed=0))
    x = np.zeros((1, 1, 8, 8, 8))
    y = np.zeros((1, 8, 8, 8), int)
    x[0, 0, 2:6, 2:6, 2:6] = 1.0
    y[0, 2:6, 2:6, 2:6] = 1
    params = m.parameters()
    state = MomentumState.for_params(params, 0.01, 0.9)
    losses = []
    for _ in range(60):
        loss = soft_dice_loss(softmax_channels(forward(m, Tensor(x), "train")), y)
        losses.append(float(loss.data))
        m.zero_grad()
        loss.backward()
        sgd_momentum_step(params, [p.grad for p in params], state)
    assert losses[-1] < 0.5 * losses[0]
