import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import numeric_grad, rel_err
from regionseg.errors import BadConfig, LabelOutOfRange, ShapeMismatch
from regionseg.losses import ClassWeights, class_weights, one_hot, soft_dice_loss, weighted_cross_entropy
from regionseg.optim import MomentumState, sgd_momentum_step
from regionseg.tensor import Tensor, softmax_channels


def _ce(z, t, w=None):
    return float(weighted_cross_entropy(Tensor(z), t, w).data)


def test_uniform_logits_give_log_c():
    for c in (2, 5, 13):
        t = np.random.default_rng(c).integers(0, c, (2, 3, 3, 3))
        assert abs(_ce(np.zeros((2, c, 3, 3, 3)), t) - math.log(c)) < 1e-12


def test_confident_logits():
    t = np.random.default_rng(0).integers(0, 3, (1, 4, 4, 4))
    z = np.where(one_hot(t, 3) > 0, 50.0, -50.0)
    assert _ce(z, t) < 1e-6
    assert _ce(-z, t) > 50


def test_ce_gradient_matches_finite_difference():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((2, 4, 3, 2, 3))
    t = rng.integers(0, 4, (2, 3, 2, 3))
    w = ClassWeights(rng.random(4) + 0.2)
    zt = Tensor(z, requires_grad=True)
    weighted_cross_entropy(zt, t, w).backward()
    num = numeric_grad(lambda: _ce(z, t, w), z, 1e-5)
    assert rel_err(zt.grad, num) < 1e-7


def test_equal_weights_equal_unweighted():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((1, 3, 4, 4, 4))
    t = rng.integers(0, 3, (1, 4, 4, 4))
    base = _ce(z, t)
    for k in (1.0, 0.3, 7.0):
        assert abs(_ce(z, t, ClassWeights(np.full(3, k))) - base) < 1e-12


@given(st.integers(0, 2 ** 31))
def test_ce_voxel_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((1, 3, 2, 3, 4))
    t = rng.integers(0, 3, (1, 2, 3, 4))
    perm = rng.permutation(24)
    zp = z.reshape(1, 3, 24)[:, :, perm].reshape(z.shape)
    tp = t.reshape(1, 24)[:, perm].reshape(t.shape)
    w = ClassWeights(rng.random(3) + 0.1)
    assert abs(_ce(z, t, w) - _ce(zp, tp, w)) < 1e-12


def test_ce_label_errors():
    with pytest.raises(LabelOutOfRange):
        weighted_cross_entropy(Tensor(np.zeros((1, 2, 2, 2, 2))), np.full((1, 2, 2, 2), 2))
    with pytest.raises(ShapeMismatch):
        weighted_cross_entropy(Tensor(np.zeros((1, 2, 2, 2, 2))), np.zeros((1, 2, 2, 3), int))


def test_inverse_frequency_weights():
    lab = np.array([0] * 90 + [1] * 9 + [2] * 1)
    w = class_weights(lab, 4).values
    raw = np.array([1 / 90, 1 / 9, 1.0])
    assert np.allclose(w[:3], raw / raw.mean()) and w[3] == 0
    assert np.array_equal(class_weights(lab, 4, "uniform").values, np.ones(4))
    with pytest.raises(BadConfig):
        class_weights(lab, 4, "median")
    with pytest.raises(BadConfig):
        ClassWeights([0.0, 0.0])


def test_dice_closed_form_on_4_cube():
    t = np.zeros((1, 4, 4, 4), int)
    t[0, :2] = 1                                  # 32 foreground voxels
    p = np.full((1, 2, 4, 4, 4), 0.5)
    # inter = 16, sum p = 32, sum g = 32
    expect = 1 - (2 * 16 + 1) / (32 + 32 + 1)
    assert abs(float(soft_dice_loss(Tensor(p), t).data) - expect) < 1e-15
    perfect = one_hot(t, 2)
    assert float(soft_dice_loss(Tensor(perfect), t).data) == 0.0
    assert abs(float(soft_dice_loss(Tensor(perfect), t, 0.0).data)) < 1e-15
    assert np.array_equal(soft_dice_loss(Tensor(p), one_hot(t, 2)).data, soft_dice_loss(Tensor(p), t).data)


@given(st.integers(0, 2 ** 31))
def test_dice_range_and_gradient(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, 3, 2, 2, 2)) * 3
    t = rng.integers(0, 3, (2, 2, 2, 2))
    p = softmax_channels(Tensor(z)).data
    loss = float(soft_dice_loss(Tensor(p), t).data)
    assert 0.0 <= loss <= 1.0
    pt = Tensor(p, requires_grad=True)
    soft_dice_loss(pt, t).backward()
    num = numeric_grad(lambda: float(soft_dice_loss(Tensor(p), t).data), p, 1e-6)
    assert rel_err(pt.grad, num) < 1e-6
    assert np.all(pt.grad[:, 0] == 0)


def test_sgd_first_two_steps():
    p = np.zeros(3)
    s = MomentumState(0.01, 0.9)
    sgd_momentum_step([p], [np.ones(3)], s)
    assert np.allclose(p, -0.01, atol=1e-15)
    sgd_momentum_step([p], [np.ones(3)], s)
    assert np.allclose(p, -0.01 - 0.019, atol=1e-15)


def test_zero_gradient_decays_geometrically():
    p = np.zeros(1)
    s = MomentumState(0.1, 0.5, [np.array([1.0])])
    steps = []
    for _ in range(5):
        before = p.copy()
        sgd_momentum_step([p], [None], s)
        steps.append(float(before[0] - p[0]))
    assert np.allclose(steps, [0.1 * 0.5 ** k for k in range(1, 6)], atol=1e-15)


def test_quadratic_recurrence():
    # f = a x^2 / 2: x_{k+1} = x_k - lr (mu v_k + a x_k)
    a, lr, mu = 3.0, 0.05, 0.9
    x = np.array([2.0])
    s = MomentumState(lr, mu)
    xr, vr = 2.0, 0.0
    for _ in range(50):
        sgd_momentum_step([x], [a * x.copy()], s)
        vr = mu * vr + a * xr
        xr = xr - lr * vr
        assert abs(x[0] - xr) < 1e-12


def test_sgd_updates_tensor_in_place_and_validates():
    t = Tensor(np.ones(2), requires_grad=True)
    ref = t.data
    sgd_momentum_step([t], [np.ones(2)], MomentumState())
    assert t.data is ref and np.allclose(ref, 0.99)
    with pytest.raises(ShapeMismatch):
        sgd_momentum_step([np.zeros(2)], [np.zeros(3)], MomentumState())
    with pytest.raises(ShapeMismatch):
        sgd_momentum_step([np.zeros(2)], [], MomentumState())
    with pytest.raises(BadConfig):
        MomentumState(0.0)
    with pytest.raises(BadConfig):
        MomentumState(0.01, 1.0)


def test_reset_zeroes_velocity():
    p = np.zeros(2)
    s = MomentumState.for_params([p])
    sgd_momentum_step([p], [np.ones(2)], s)
    s.reset()
    before = p.copy()
    sgd_momentum_step([p], [np.ones(2)], s)
    assert np.allclose(before - p, 0.01)
