"""Acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line; the lines are also printed in
the terminal summary. The phantom experiment (criteria 5 and 6) trains
four networks and takes roughly 45 minutes on one CPU core.
"""
import json
import time

import numpy as np
import pytest

from oracles import (
    brute_directed, naive_conv3d, naive_transposed_conv, numeric_grad, percentile_linear, reference_fcm,
    rel_err,
)
from regionseg import experiment, metrics, nifti_io
from regionseg.cli import main
from regionseg.errors import NiftiError
from regionseg.losses import ClassWeights, soft_dice_loss, weighted_cross_entropy
from regionseg.preprocess import fcm_cluster
from regionseg.tensor import (
    BatchNormState, Tensor, batchnorm3d, conv3d, maxpool3d, no_grad, relu, softmax_channels,
    transposed_conv3d,
)
from regionseg.tiling import coverage, extract_arrays, plan_patches, stitch
from regionseg.unet import UNetConfig, build, forward
from regionseg.volume import Volume

RESULTS = {}


def _record(n, title, ok, detail):
    line = f"criterion {n} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS[n] = line
    print(line)
    assert ok, line


def _grad_err(build_fn, arrays, h=1e-5, seed=0):
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build_fn(*tensors)
    r = rng.standard_normal(out.shape) if out.data.ndim else None
    out.backward(r)

    def f():
        with no_grad():
            o = build_fn(*[Tensor(t.data) for t in tensors]).data
        return float((o * r).sum()) if r is not None else float(o)

    return max(rel_err(t.grad, numeric_grad(f, t.data, h)) for t in tensors)


def test_criterion_1_gradient_integrity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 2, 4, 4, 4))
    errs = {
        "conv3d": _grad_err(lambda a, w, b: conv3d(a, w, b),
                            [x, rng.standard_normal((3, 2, 3, 3, 3)), rng.standard_normal(3)]),
        "transposed_conv3d": _grad_err(lambda a, w, b: transposed_conv3d(a, w, b),
                                       [x, rng.standard_normal((2, 3, 2, 2, 2)), rng.standard_normal(3)]),
        "maxpool3d": _grad_err(lambda a: maxpool3d(a)[0],
                               [rng.permutation(x.size).reshape(x.shape) * 0.1]),
        "batchnorm3d": _grad_err(lambda a, g, b: batchnorm3d(a, BatchNormState(2, gamma=g, beta=b), "train"),
                                 [x, rng.random(2) + 0.5, rng.standard_normal(2)]),
        "relu": _grad_err(lambda a: relu(a), [np.where(np.abs(x) < 0.05, 0.5, x)]),
        "softmax": _grad_err(lambda a: softmax_channels(a), [x]),
    }
    t = rng.integers(0, 3, (2, 4, 4, 4))
    w = ClassWeights(rng.random(3) + 0.2)
    errs["weighted_cross_entropy"] = _grad_err(lambda z: weighted_cross_entropy(z, t, w),
                                               [rng.standard_normal((2, 3, 4, 4, 4))])
    p = softmax_channels(Tensor(rng.standard_normal((2, 3, 4, 4, 4)))).data
    errs["soft_dice_loss"] = _grad_err(lambda q: soft_dice_loss(q, t), [p], h=1e-6)

    model = build(UNetConfig(2, (2, 3), 2, seed=3))
    xin = rng.standard_normal((2, 1, 4, 4, 2))
    r = rng.standard_normal((2, 2, 4, 4, 2))
    saved = [(bn.running_mean.copy(), bn.running_var.copy()) for bn in model.batchnorms()]

    def restore():
        for bn, (m, v) in zip(model.batchnorms(), saved):
            bn.running_mean[...] = m
            bn.running_var[...] = v

    def f():
        with no_grad():
            val = float((forward(model, xin, "train").data * r).sum())
        restore()
        return val

    model.zero_grad()
    forward(model, Tensor(xin), "train").backward(r)
    restore()
    net_err = 0.0
    for prm in model.parameters():
        num = numeric_grad(f, prm.data, 1e-6)
        # biases feeding batch statistics have zero gradient; measure them absolutely
        scale = max(np.linalg.norm(prm.grad) + np.linalg.norm(num), 1e-3)
        net_err = max(net_err, float(np.linalg.norm(prm.grad - num) / scale))
    secs = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-6 and net_err < 1e-5 and secs < 120
    _record(1, "gradient integrity", ok,
            f"worst primitive {worst} rel err {errs[worst]:.2e}, tiny U-Net {net_err:.2e}, {secs:.1f}s")


def test_criterion_2_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    x = rng.integers(-4, 5, (2, 2, 8, 8, 8)).astype(float)
    w = rng.integers(-3, 4, (2, 2, 3, 3, 3)).astype(float)
    conv_exact = np.array_equal(conv3d(Tensor(x), Tensor(w)).data, naive_conv3d(x, w))
    xf, wf = rng.standard_normal((2, 2, 8, 8, 8)), rng.standard_normal((2, 2, 3, 3, 3))
    conv_float = float(np.max(np.abs(conv3d(Tensor(xf), Tensor(wf)).data - naive_conv3d(xf, wf))))
    wt = rng.standard_normal((2, 3, 2, 2, 2))
    tconv = float(np.max(np.abs(transposed_conv3d(Tensor(xf), Tensor(wt)).data - naive_transposed_conv(xf, wt))))

    hd_err, pairs = 0.0, 0
    while pairs < 200:
        shape = tuple(int(s) for s in rng.integers(2, 13, 3))
        a = rng.random(shape) < rng.uniform(0.05, 0.5)
        b = rng.random(shape) < rng.uniform(0.05, 0.5)
        if not a.any() or not b.any():
            continue
        spacing = tuple(float(s) for s in rng.choice([0.5, 1.0, 2.0, 3.0], 3))
        ref = percentile_linear(np.concatenate([brute_directed(a, b, spacing), brute_directed(b, a, spacing)]), 95)
        hd_err = max(hd_err, abs(metrics.hd95(a.astype(int), b.astype(int), 1, spacing) - ref))
        pairs += 1

    wil_err = 0.0
    for n in range(1, 13):
        for _ in range(4):
            xs, ys = rng.integers(0, 8, n) / 4.0, rng.integers(0, 8, n) / 4.0
            if np.all(xs == ys):
                continue
            wil_err = max(wil_err, abs(metrics.wilcoxon_signed_rank(xs, ys)[1] - metrics.wilcoxon_enumerate(xs, ys)[1]))

    blobs = np.concatenate([rng.normal(mu, 2.0, 1000) for mu in (10, 50, 90)])
    fcm_err = float(np.max(np.abs(fcm_cluster(blobs, 3).centroids - reference_fcm(blobs, 3))))
    secs = time.perf_counter() - t0
    ok = (conv_exact and conv_float < 1e-12 and tconv < 1e-12 and hd_err <= 1e-9 and wil_err <= 1e-12
          and fcm_err < 1.0 and secs < 300)
    _record(2, "oracle equivalence", ok,
            f"conv exact={conv_exact}, float {conv_float:.1e}; HD95 {pairs} pairs max err {hd_err:.1e}; "
            f"Wilcoxon n<=12 max err {wil_err:.1e}; FCM centroid gap {fcm_err:.3f}; {secs:.1f}s")


def test_criterion_3_tiling_laws():
    plan = plan_patches((240, 240, 240), (80, 80, 80), (40, 40, 40))
    rng = np.random.default_rng(3)
    worst = 0.0
    min_cov = None
    for shape, patch, stride in [((240, 240, 240), 80, 40), ((30, 17, 22), 8, 5), ((9, 9, 9), 4, 3),
                                 ((64, 64, 64), 32, 16), ((5, 7, 3), 8, 8)]:
        p = plan_patches(shape, patch, stride)
        field = rng.random((3,) + shape)
        field /= field.sum(axis=0, keepdims=True)
        worst = max(worst, float(np.max(np.abs(stitch(extract_arrays(field, p), p, 3) - field))))
        c = int(coverage(p).min())
        min_cov = c if min_cov is None else min(min_cov, c)
    ok = len(plan) == 125 and worst <= 1e-12 and min_cov >= 1
    _record(3, "tiling laws", ok,
            f"{len(plan)} patches for 240^3, stitch(extract) err {worst:.1e}, min coverage {min_cov}")


def test_criterion_4_metric_conventions():
    rng = np.random.default_rng(4)
    ok_id = ok_sym = True
    for _ in range(100):
        shape = tuple(int(s) for s in rng.integers(3, 10, 3))
        a = (rng.random(shape) < 0.3).astype(int)
        b = (rng.random(shape) < 0.3).astype(int)
        a.flat[0] = b.flat[-1] = 1
        sp = tuple(float(s) for s in rng.choice([0.5, 1.0, 2.0], 3))
        ok_id &= metrics.dsc(a, a, 1) == 1.0 and metrics.hd95(a, a, 1, sp) == 0.0
        ok_sym &= metrics.dsc(a, b, 1) == metrics.dsc(b, a, 1)
        ok_sym &= metrics.hd95(a, b, 1, sp) == metrics.hd95(b, a, 1, sp)
    recs = [metrics.EvalRecord("s1", {"x": 0.8}, {"x": 1.0}), metrics.EvalRecord("s2", {"x": 0.9}, {"x": 2.0})]
    rows = metrics.summarize(recs)
    fmt_ok = (metrics.fmt_mean_std(0.901, 0.044) == "0.901±0.044"
              and metrics.fmt_mean_std(rows[0].dsc_mean, rows[0].dsc_std) == "0.850±0.071")
    _record(4, "metric conventions", ok_id and ok_sym and fmt_ok,
            f"identity={ok_id}, symmetry={ok_sym} on 100 pairs, summary format={fmt_ok}")


@pytest.fixture(scope="module")
def phantom_experiment():
    t0 = time.perf_counter()
    result = experiment.run(experiment.ExperimentConfig(), progress=print)
    result.wall_seconds = time.perf_counter() - t0
    print(result.report())
    return result


@pytest.mark.slow
def test_criterion_5_phantom_end_to_end(phantom_experiment):
    r = phantom_experiment
    w, p = r.wilcoxon if r.wilcoxon else (float("nan"), float("nan"))
    ok = r.region_mean_dsc >= 0.90 and r.region_mean_dsc > r.patch_mean_dsc and r.wall_seconds <= 3600
    _record(5, "phantom end-to-end", ok,
            f"region DSC {r.region_mean_dsc:.4f}, patch DSC {r.patch_mean_dsc:.4f}, "
            f"Wilcoxon W={w:.1f} p={p:.3g}, {r.wall_seconds / 60:.1f} min")


@pytest.mark.slow
def test_criterion_6_training_cost(phantom_experiment):
    r = phantom_experiment
    analytic = 125 * 80 ** 3 / (96 ** 3 + 128 * 160 * 128 + 96 ** 3)
    accounted = experiment.full_scale_inflation()
    rel = abs(accounted - analytic) / analytic
    ok = r.time_ratio >= 3.0 and rel <= 0.05
    _record(6, "training-cost direction", ok,
            f"patch/region train time {r.time_ratio:.2f}x, phantom voxel ratio {r.voxel_ratio:.2f}x, "
            f"full-scale voxel ratio {accounted:.3f} vs analytic {analytic:.3f}")


def test_criterion_7_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["phantom", "--out", str(data), "--count", "3", "--seed", "7"]) == 0
    cfg = {"schedule": {"pretrain_epochs": 1, "train_epochs": 1, "batch_size": 2},
           "network": {"resolution_steps": 2, "channels": [2, 4]},
           "patch": {"shape": 32, "stride": 16},
           "train": [{"image": f"data/phantom{i:03d}.nii", "label": f"data/phantom{i:03d}_labels.nii"}
                     for i in (7, 8)]}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    same = True
    for run in ("a", "b"):
        for region in ("brainstem", "ventricles", "striatum", "whole"):
            assert main(["train", "--region", region, "--config", str(tmp_path / "cfg.json"),
                         "--out", str(tmp_path / run), "--seed", "3"]) == 0
    for region in ("brainstem", "ventricles", "striatum", "whole"):
        same &= (tmp_path / "a" / f"{region}_final.ckpt").read_bytes() == \
            (tmp_path / "b" / f"{region}_final.ckpt").read_bytes()
    img = str(data / "phantom009.nii")
    outs = []
    for run in ("a", "b"):
        ck = []
        for region in ("brainstem", "ventricles", "striatum"):
            ck += ["--checkpoint", str(tmp_path / "a" / f"{region}_final.ckpt")]
        assert main(["predict", "--mode", "region", *ck, "--workers", "3", img, str(tmp_path / f"r{run}.nii")]) == 0
        assert main(["predict", "--mode", "patch", "--checkpoint", str(tmp_path / "a" / "whole_final.ckpt"),
                     img, str(tmp_path / f"p{run}.nii")]) == 0
        outs.append(((tmp_path / f"r{run}.nii").read_bytes(), (tmp_path / f"p{run}.nii").read_bytes()))
    same_pred = outs[0] == outs[1]
    _record(7, "determinism", same and same_pred,
            f"4 checkpoints byte-identical={same}, region and patch label maps byte-identical={same_pred}")


def test_criterion_8_format_fidelity(tmp_path):
    rng = np.random.default_rng(8)
    bits = rng.integers(0, 2 ** 32, (11, 7, 5), dtype=np.uint64).astype(np.uint32)
    vals = bits.view(np.float32)
    vals = np.where(np.isfinite(vals), vals, np.float32(-0.0))
    p = tmp_path / "f.nii"
    nifti_io.write_volume(Volume(vals, (0.9, 1.1, 2.5), (3.0, -4.0, 5.5)), nifti_io.FLOAT32, p)
    back = nifti_io.read_volume(p)
    round_trip = np.array_equal(back.voxels.astype(np.float32).view(np.uint32), vals.view(np.uint32))

    le = p.read_bytes()
    be = nifti_io.byteswap_header(le[:348]) + le[348:352] + vals.astype(">f4").tobytes(order="F")
    swapped = nifti_io.volume_from_bytes(be).same_as(nifti_io.volume_from_bytes(le))

    base = np.frombuffer(le, dtype=np.uint8)
    crashes, accepted = [], 0
    for i in range(100_000):
        if i % 2:
            buf = rng.integers(0, 256, 348, dtype=np.uint8).tobytes() + le[348:]
        else:
            b = base.copy()
            k = rng.integers(1, 9)
            b[rng.integers(0, 348, k)] = rng.integers(0, 256, k, dtype=np.uint8)
            buf = b.tobytes()
        try:
            nifti_io.volume_from_bytes(buf)
            accepted += 1
        except NiftiError:
            pass
        except Exception as exc:            # anything else is a crash
            crashes.append(repr(exc))
    _record(8, "format fidelity", round_trip and swapped and not crashes,
            f"float32 bit-identical={round_trip}, byte-swapped parse identical={swapped}, "
            f"100000 fuzzed headers: {len(crashes)} crashes, {accepted} accepted")
