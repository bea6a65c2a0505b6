"""Time the compiled and numpy convolution/pooling kernels on U-Net sized
inputs and report GFLOP/s plus the speedup of the compiled backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from regionseg.tensor import backend

CASES = [
    # (batch, cin, cout, X, Y, Z)
    (1, 1, 8, 32, 40, 32),
    (1, 8, 8, 32, 40, 32),
    (1, 16, 16, 16, 20, 16),
    (2, 16, 8, 24, 24, 24),
]


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run(repeat: int = 5) -> list[dict]:
    rng = np.random.default_rng(0)
    rows = []
    names = backend.available_backends()
    for b, cin, cout, X, Y, Z in CASES:
        x = rng.standard_normal((b, cin, X, Y, Z))
        w = rng.standard_normal((cout, cin, 3, 3, 3))
        bias = rng.standard_normal(cout)
        g = rng.standard_normal((b, cout, X, Y, Z))
        flops = 2.0 * b * cin * cout * 27 * X * Y * Z
        for name in names:
            prev = backend.use_backend(name)
            k = backend.kernels
            try:
                row = {"backend": name, "shape": f"{b}x{cin}->{cout}x{X}x{Y}x{Z}"}
                row["forward_s"] = _best(lambda: k.conv3x3_forward(x, w, bias), repeat)
                row["backward_input_s"] = _best(lambda: k.conv3x3_backward_input(g, w), repeat)
                row["backward_weight_s"] = _best(lambda: k.conv3x3_backward_weight(x, g), repeat)
                row["maxpool_s"] = _best(lambda: k.maxpool2_forward(x), repeat)
                for op in ("forward", "backward_input", "backward_weight"):
                    row[f"{op}_gflops"] = flops / row[f"{op}_s"] / 1e9
                rows.append(row)
            finally:
                backend.use_backend(prev)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args()
    rows = run(args.repeat)
    header = f"{'backend':9s} {'case':22s} {'fwd GF/s':>9s} {'bwd-in GF/s':>12s} {'bwd-w GF/s':>11s} {'pool ms':>8s}"
    print(header)
    for r in rows:
        print(f"{r['backend']:9s} {r['shape']:22s} {r['forward_gflops']:9.2f} "
              f"{r['backward_input_gflops']:12.2f} {r['backward_weight_gflops']:11.2f} "
              f"{1e3 * r['maxpool_s']:8.2f}")
    by = {}
    for r in rows:
        by.setdefault(r["shape"], {})[r["backend"]] = r
    if "compiled" in backend.available_backends():
        print("\nspeedup compiled / numpy (forward, backward-input, backward-weight):")
        for shape, d in by.items():
            c, n = d["compiled"], d["numpy"]
            print(f"  {shape:22s} " + "  ".join(
                f"{n[k] / c[k]:5.2f}x" for k in ("forward_s", "backward_input_s", "backward_weight_s")))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
