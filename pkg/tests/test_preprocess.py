import numpy as np
import pytest

from oracles import reference_fcm
from regionseg import phantom
from regionseg.errors import DegenerateData
from regionseg.preprocess import fcm_cluster, fcm_normalize, normalize_wm
from regionseg.volume import LabelMap, Volume


def test_two_delta_data():
    x = np.r_[np.zeros(100), np.full(100, 10.0)]
    res = fcm_cluster(x, c=2, m=2.0)
    assert np.allclose(res.centroids, [0.0, 10.0], atol=1e-6)
    assert np.allclose(reference_fcm(x, 2), [0.0, 10.0], atol=1e-6)


def test_translation_equivariance():
    x = np.random.default_rng(0).normal(size=500) * 3 + np.repeat([0, 20, 40], [150, 200, 150])
    a, b = fcm_cluster(x), fcm_cluster(x + 5.0)
    assert np.allclose(b.centroids, a.centroids + 5.0, atol=1e-9)


def test_separated_blobs_match_reference():
    rng = np.random.default_rng(42)
    x = np.concatenate([rng.normal(mu, 2.0, 1000) for mu in (10, 50, 90)])
    res = fcm_cluster(x, c=3)
    assert np.all(np.abs(res.centroids - [10, 50, 90]) < 1.0)
    assert np.all(np.abs(res.centroids - reference_fcm(x, 3)) < 1.0)
    assert np.all(np.diff(res.centroids) > 0)


def test_memberships_and_monotone_objective():
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(mu, 5.0, 300) for mu in (0, 30, 70)])
    res = fcm_cluster(x, c=3, tol=1e-12, max_iter=60)
    assert np.allclose(res.memberships.sum(axis=1), 1.0, atol=1e-9)
    assert (res.memberships >= 0).all() and (res.memberships <= 1).all()
    obj = np.array(res.objective)
    assert np.all(np.diff(obj) <= 1e-9 * obj[0])
    assert res.iterations <= 60


def test_max_iter_is_not_an_error():
    x = np.random.default_rng(1).random(200)
    res = fcm_cluster(x, c=3, tol=0.0, max_iter=3)
    assert res.iterations == 3


def test_exact_coincidence_gives_one_hot():
    x = np.array([0.0, 0.0, 5.0, 10.0, 10.0])
    res = fcm_cluster(x, c=3)
    i = int(np.argmin(np.abs(res.centroids - 10.0)))
    if res.centroids[i] == 10.0:
        assert np.array_equal(res.memberships[3], np.eye(3)[i])


def test_degenerate_inputs():
    with pytest.raises(DegenerateData):
        fcm_cluster(np.ones(50), c=2)
    with pytest.raises(ValueError):
        fcm_cluster(np.arange(10.0), c=1)
    with pytest.raises(ValueError):
        fcm_cluster(np.arange(10.0), m=1.0)


def test_wm_mode_maps_to_one():
    vol, lab = phantom.generate(phantom.desk_spec(seed=0, noise_sigma=10.0, bias_amplitude=0.0,
                                                  gain_range=(0.8, 0.8)))
    out, summary = fcm_normalize(vol)
    assert abs(summary.centroids[-1] * summary.scale - 1.0) < 1e-9
    # white matter (value 1000 * gain before scaling) lands near 1
    brain = out.voxels[(lab.labels == 0) & (out.voxels > 0.9)]
    assert abs(np.median(brain) - 1.0) < 0.05


def test_fixed_point_and_scale_invariance():
    vol, _ = phantom.generate(phantom.desk_spec(seed=1))
    norm = normalize_wm(vol)
    again = normalize_wm(norm)
    assert np.max(np.abs(again.voxels - norm.voxels)) < 1e-9
    for k in (0.5, 2.0, 100.0):
        scaled = normalize_wm(vol.with_voxels(vol.voxels * k))
        assert np.max(np.abs(scaled.voxels - norm.voxels)) < 1e-9


def test_explicit_mask():
    arr = np.zeros((6, 6, 6))
    arr[1:5, 1:5, 1:5] = np.random.default_rng(0).choice([100.0, 200.0, 400.0], size=(4, 4, 4))
    arr[0, 0, 0] = 5000.0   # outside the mask, must not drive the scale
    mask = np.zeros((6, 6, 6), dtype=int)
    mask[1:5, 1:5, 1:5] = 1
    out = normalize_wm(Volume(arr), LabelMap(mask))
    assert np.isclose(out.voxels[arr == 400.0].mean(), 1.0, atol=1e-6)
    assert np.isclose(out.voxels[0, 0, 0], 5000.0 / 400.0, rtol=1e-6)
