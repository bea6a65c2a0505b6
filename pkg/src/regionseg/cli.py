"""Command-line entry point: ``regionseg <command> ...``.

Commands: phantom, preprocess, train, predict, evaluate, benchmark.
Exit status is 0 on success, 2 for usage, configuration or input problems
and 3 for numeric failures during training.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__, experiment, metrics, nifti_io, phantom
from .errors import (
    BadConfig,
    DegenerateData,
    NiftiError,
    NonFiniteLoss,
    PlanMismatch,
    RegionSegError,
    ShapeMismatch,
    StructureOutsideRegion,
)
from .preprocess import fcm_normalize
from .regions import NUM_GLOBAL_CLASSES, PALETTE, REGION_NAMES, load_regions
from .tiling import plan_patches
from .train import (
    TrainSchedule,
    patch_dataset,
    predict_full_patch_based,
    predict_full_region_based,
    region_dataset,
    train_region,
    worker_cap,
)
from .unet import UNetConfig, build, load_checkpoint, model_from_bytes, save_checkpoint

log = logging.getLogger("regionseg")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(RegionSegError):
    pass


@dataclass
class RunManifest:
    command: str
    args: dict
    seed: int | None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    config: dict | None = None
    started: float = field(default_factory=time.time)
    seconds: float = 0.0
    version: str = __version__

    @property
    def run_id(self) -> str:
        """Hash of everything that determines the outputs."""
        key = json.dumps({"command": self.command, "args": self.args, "seed": self.seed,
                          "config": self.config, "inputs": [_digest(p) for p in self.inputs]},
                         sort_keys=True, default=str)
        return hashlib.sha1(key.encode()).hexdigest()[:12]

    def write(self, path) -> None:
        doc = asdict(self)
        doc["run_id"] = self.run_id
        doc["output_sha1"] = {p: _digest(p) for p in self.outputs if Path(p).is_file()}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _digest(path) -> str:
    p = Path(path)
    if not p.is_file():
        return str(path)
    return hashlib.sha1(p.read_bytes()).hexdigest()


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise BadConfig(f"{path}: invalid JSON ({exc})") from None


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


# ---------------------------------------------------------------- phantom
def cmd_phantom(args) -> RunManifest:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec_dict = _read_json(args.spec) if args.spec else None
    m = RunManifest("phantom", vars(args), args.seed, config=spec_dict)
    for i in range(args.count):
        seed = args.seed + i
        if spec_dict is not None:
            spec = phantom.PhantomSpec.from_dict({**spec_dict, "seed": seed})
            vol, lab = phantom.generate(spec, regions=[] if args.no_region_check else None)
        else:
            vol, lab = phantom.generate(phantom.desk_spec(seed=seed))
        img_p, lab_p = out / f"phantom{seed:03d}.nii", out / f"phantom{seed:03d}_labels.nii"
        nifti_io.write_volume(vol, nifti_io.FLOAT32, img_p)
        nifti_io.write_volume(lab, nifti_io.INT16, lab_p)
        m.outputs += [str(img_p), str(lab_p)]
    print(f"wrote {args.count} phantom pairs to {out}")
    return m


# ---------------------------------------------------------------- preprocess
def cmd_preprocess(args) -> RunManifest:
    vol = nifti_io.read_volume(_need_file(args.input))
    mask = nifti_io.read_labels(_need_file(args.mask)) if args.mask else None
    out, summary = fcm_normalize(vol, mask, c=args.clusters, seed=args.seed)
    nifti_io.write_volume(out, nifti_io.FLOAT32, args.output)
    cents = ", ".join(f"{c:.4g}" for c in summary.centroids)
    print(f"centroids [{cents}]  scale {summary.scale:.6g}  iterations {summary.iterations}")
    return RunManifest("preprocess", vars(args), args.seed,
                       inputs=[args.input] + ([args.mask] if args.mask else []), outputs=[args.output])


# ---------------------------------------------------------------- train
def _load_pairs(entries, base: Path):
    pairs = []
    for e in entries:
        try:
            img, lab = base / e["image"], base / e["label"]
        except (KeyError, TypeError):
            raise BadConfig(f"dataset entry needs 'image' and 'label': {e!r}") from None
        pairs.append((nifti_io.read_volume(_need_file(img)),
                      nifti_io.read_labels(_need_file(lab), NUM_GLOBAL_CLASSES)))
    return pairs


def _network(cfg: dict, num_classes: int, seed: int) -> UNetConfig:
    net = cfg.get("network", {})
    steps = int(net.get("resolution_steps", 3))
    channels = tuple(net.get("channels", (8, 16, 32)[:steps]))
    return UNetConfig(steps, channels, num_classes, 1, seed)


def cmd_train(args) -> RunManifest:
    cfg = _read_json(args.config)
    base = Path(args.config).resolve().parent
    sched = TrainSchedule.from_dict({**cfg.get("schedule", {}), "seed": args.seed})
    specs = load_regions(base / cfg["regions"]) if cfg.get("regions") else load_regions()
    train_pairs = _load_pairs(cfg.get("train", []), base)
    val_pairs = _load_pairs(cfg.get("validation", []), base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.region == "whole":
        if not train_pairs:
            raise BadConfig("training manifest lists no subjects")
        patch = cfg.get("patch", {})
        plan = plan_patches(train_pairs[0][0].shape, patch.get("shape", 32), patch.get("stride", 16))
        data = patch_dataset(train_pairs, plan)
        val = patch_dataset(val_pairs, plan) if val_pairs else None
        model = build(_network(cfg, NUM_GLOBAL_CLASSES, args.seed))
        model.meta = {"mode": "patch", "patch_shape": list(plan.patch_shape),
                      "stride": list(plan.stride)}
        print(f"patch plan: {len(plan)} patches of {plan.patch_shape} per subject")
    else:
        spec = next((s for s in specs if s.name == args.region), None)
        if spec is None:
            raise BadConfig(f"region config has no {args.region!r} entry")
        data = region_dataset(train_pairs, spec)
        val = region_dataset(val_pairs, spec) if val_pairs else None
        model = build(_network(cfg, spec.num_classes, args.seed))
        model.meta = {"mode": "region", "region": spec.to_dict()}

    model, hist = train_region(model, data, sched, validation=val,
                               progress=lambda r: print(f"epoch {r.epoch:3d} {r.phase:8s} loss {r.loss:.5f}"
                                                        + ("" if r.val_dsc is None else f" val_dsc {r.val_dsc:.4f}")))
    final_p, best_p, hist_p = (out / f"{args.region}_final.ckpt", out / f"{args.region}_best.ckpt",
                               out / f"{args.region}_history.csv")
    save_checkpoint(model, final_p)
    best = model_from_bytes(hist.best_checkpoint)
    best.meta = model.meta
    save_checkpoint(best, best_p)
    hist.write_csv(hist_p)
    print(f"trained {args.region} in {hist.total_seconds:.1f}s; best epoch {hist.best_epoch}")
    inputs = [str(base / e[k]) for e in cfg.get("train", []) + cfg.get("validation", []) for k in ("image", "label")]
    return RunManifest("train", vars(args), args.seed, inputs=inputs,
                       outputs=[str(final_p), str(best_p), str(hist_p)], config=cfg)


# ---------------------------------------------------------------- predict
def _load_models(paths):
    models = []
    for p in paths:
        try:
            models.append(load_checkpoint(_need_file(p)))
        except BadConfig as exc:
            raise BadConfig(f"{p}: {exc}") from None
    return models


def cmd_predict(args) -> RunManifest:
    vol = nifti_io.read_volume(_need_file(args.input))
    models = _load_models(args.checkpoints)
    if args.mode == "region":
        by_name = {}
        for p, m in zip(args.checkpoints, models):
            if m.meta.get("mode") != "region":
                raise BadConfig(f"{p} is not a region checkpoint")
            by_name[m.meta["region"]["name"]] = m
        specs = load_regions(args.regions) if args.regions else load_regions()
        missing = [s.name for s in specs if s.name not in by_name]
        if missing:
            raise BadConfig(f"no checkpoint for region(s) {missing}")
        timings = {}
        pred = predict_full_region_based(by_name, vol, specs, args.workers, timings)
        for name, t in timings.items():
            print(f"{name}: {t:.3f}s")
    else:
        if len(models) != 1:
            raise UsageError("patch mode takes exactly one checkpoint")
        model = models[0]
        if model.meta.get("mode") != "patch":
            raise BadConfig(f"{args.checkpoints[0]} is not a patch checkpoint")
        plan = plan_patches(vol.shape, model.meta["patch_shape"], model.meta["stride"])
        print(f"patch plan: {len(plan)} patches")
        t0 = time.perf_counter()
        pred = predict_full_patch_based(model, vol, plan)
        print(f"patch inference: {time.perf_counter() - t0:.3f}s")
    nifti_io.write_volume(pred, nifti_io.INT16, args.output)
    return RunManifest("predict", vars(args), None, inputs=[args.input] + list(args.checkpoints),
                       outputs=[args.output])


# ---------------------------------------------------------------- evaluate
def _pairs_by_name(pred_dir: Path, truth_dir: Path):
    preds = {p.name: p for p in sorted(pred_dir.glob("*.nii"))}
    truths = {p.name: p for p in sorted(truth_dir.glob("*.nii"))}
    if not preds:
        raise UsageError(f"no .nii files in {pred_dir}")
    if set(preds) != set(truths):
        diff = sorted(set(preds) ^ set(truths))
        raise UsageError(f"unmatched files between {pred_dir} and {truth_dir}: {diff}")
    return [(n, preds[n], truths[n]) for n in sorted(preds)]


def _evaluate_dir(pred_dir, truth_dir, pooled: bool):
    records = []
    for name, p, t in _pairs_by_name(Path(pred_dir), Path(truth_dir)):
        truth = nifti_io.read_labels(t)
        pred = nifti_io.read_labels(p)
        records.append(metrics.evaluate(Path(name).stem, pred, truth, PALETTE, truth.spacing, pooled))
    return records


def cmd_evaluate(args) -> RunManifest:
    pooled = args.hd95 == "pooled"
    records = _evaluate_dir(args.pred_dir, args.truth_dir, pooled)
    out = Path(args.output)
    summary_p = out.with_name(out.stem + "_summary.csv")
    metrics.write_records_csv(records, out)
    rows = metrics.summarize(records)
    metrics.write_summary_csv(rows, summary_p)
    print(metrics.format_summary(rows))
    outputs = [str(out), str(summary_p)]
    if args.compare:
        other = _evaluate_dir(args.compare, args.truth_dir, pooled)
        x = [d for r in records for d in r.dsc.values()]
        y = [d for r in other for d in r.dsc.values()]
        w, p = metrics.wilcoxon_signed_rank(x, y)
        print(f"Wilcoxon signed-rank ({len(x)} subject-structure pairs): W={w:.1f} p={p:.4g}")
        test_p = out.with_name(out.stem + "_wilcoxon.csv")
        with open(test_p, "w", newline="") as fh:
            csv.writer(fh).writerows([["n", "W", "p"], [len(x), repr(w), repr(p)]])
        outputs.append(str(test_p))
    return RunManifest("evaluate", vars(args), None, outputs=outputs)


# ---------------------------------------------------------------- benchmark
def cmd_benchmark(args) -> RunManifest:
    cfg_dict = _read_json(args.config) if args.config else {}
    cfg = experiment.ExperimentConfig.from_dict({**cfg_dict, "seed": args.seed,
                                                 "workers": args.workers})
    res = experiment.run(cfg, progress=print)
    print(res.report())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench_p = out / "benchmark.csv"
    epochs = len(res.patch_history.records)
    with open(bench_p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pipeline", "train_seconds", "seconds_per_epoch", "voxels_per_epoch", "mean_dsc"])
        w.writerow(["region", f"{res.region_train_seconds:.3f}",
                    f"{res.region_train_seconds / epochs:.3f}", res.region_voxels_per_epoch,
                    repr(res.region_mean_dsc)])
        w.writerow(["patch", f"{res.patch_train_seconds:.3f}",
                    f"{res.patch_train_seconds / epochs:.3f}", res.patch_voxels_per_epoch,
                    repr(res.patch_mean_dsc)])
    metrics.write_records_csv(res.region_records, out / "region_records.csv")
    metrics.write_records_csv(res.patch_records, out / "patch_records.csv")
    return RunManifest("benchmark", vars(args), args.seed, config=cfg.to_dict(),
                       outputs=[str(bench_p), str(out / "region_records.csv"),
                                str(out / "patch_records.csv")])


# ---------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regionseg", description="Region-based 3-D U-Net segmentation")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write synthetic phantom image/label pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="phantom spec JSON (default: built-in 64^3 layout)")
    p.add_argument("--no-region-check", action="store_true", help="skip the box containment check")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", help="FCM intensity normalization")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mask")
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one region model or the whole-volume patch model")
    p.add_argument("--region", required=True, choices=list(REGION_NAMES) + ["whole"])
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment a full volume")
    p.add_argument("--mode", required=True, choices=["region", "patch"])
    p.add_argument("--checkpoint", dest="checkpoints", action="append", required=True,
                   help="model checkpoint; repeat once per region in region mode")
    p.add_argument("--regions", help="region config JSON (default: bundled layout)")
    p.add_argument("--workers", type=int, default=3)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("truth_dir")
    p.add_argument("output", help="per-record CSV; the summary goes next to it")
    p.add_argument("--compare", help="second prediction directory for a paired Wilcoxon test")
    p.add_argument("--hd95", choices=["pooled", "max"], default="pooled")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="matched region vs patch phantom experiment")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=3)
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is not None:
        args.workers = worker_cap(args.workers)
    func = args.func
    start = time.perf_counter()
    try:
        manifest = func(args)
    except NonFiniteLoss as exc:
        print(f"regionseg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, BadConfig, NiftiError, ShapeMismatch, PlanMismatch, DegenerateData,
            StructureOutsideRegion, FileNotFoundError) as exc:
        print(f"regionseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest.args = {k: v for k, v in vars(args).items() if k != "func"}
    manifest.seconds = time.perf_counter() - start
    target = Path(args.out) / f"{args.command}_manifest.json" if hasattr(args, "out") \
        else Path(str(getattr(args, "output")) + ".manifest.json")
    manifest.write(target)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
