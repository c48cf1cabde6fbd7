#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times each hot kernel on the shapes the default training loop actually
produces (a labeled batch of 64 plus 2x64 unlabeled views through a
32 -> 64 -> 10 network), then times full training runs under each
backend and reports the end-to-end speedup and the largest deviation
between the two backends' results.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 200 --steps 300 --csv out.csv
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

import lcgclab.kernels as K
from lcgclab.config import default_config
from lcgclab.data import synthesize
from lcgclab.debias import run_training
from lcgclab.tensor import flatten_values


def make_cases(rng):
    """(name, args) for every kernel, on training-loop shapes."""
    n, d, h, c = 192, 32, 64, 10  # 64 labeled + 128 unlabeled rows
    x = rng.normal(size=(n, d))
    w1 = rng.normal(size=(d, h))
    hid = rng.normal(size=(n, h))
    g_hid = rng.normal(size=(n, h))
    w2 = rng.normal(size=(h, c))
    z = rng.normal(size=(n, c)) * 3.0
    v = rng.normal(size=h)
    return [
        ("matmul", (x, w1)),
        ("matmul_tn", (x, g_hid)),
        ("matmul_nt", (g_hid, w1)),
        ("add_rowvec", (hid, v)),
        ("sum_rows", (g_hid,)),
        ("relu", (hid,)),
        ("relu_vjp", (g_hid, hid)),
        ("log_softmax_rows", (z,)),
        ("softmax_rows", (z,)),
        ("matmul", (hid, w2)),
    ]


def best_of(fn, args, repeats):
    """Median of per-call times over `repeats` calls (after 3 warmups)."""
    for _ in range(3):
        fn(*args)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for name, args in make_cases(rng):
        shape = "x".join(str(a.shape) for a in args if hasattr(a, "shape"))
        impls = {b: K._TABLES[b][name] for b in K.available_backends()}
        out = {b: np.asarray(impl(*args)) for b, impl in impls.items()}
        t = {b: best_of(impl, args, repeats) for b, impl in impls.items()}
        if "numba" in out:
            deviation = float(np.max(np.abs(out["numba"] - out["numpy"])))
            speedup = t["numpy"] / t["numba"]
        else:
            deviation, speedup = 0.0, float("nan")
        rows.append(
            {
                "kernel": name,
                "shapes": shape,
                "numpy_us": t["numpy"] * 1e6,
                "numba_us": t.get("numba", float("nan")) * 1e6,
                "speedup": speedup,
                "max_abs_dev": deviation,
            }
        )
    return rows


def bench_end_to_end(steps):
    """Time identical training runs under each backend."""
    cfg = default_config().override(method="lcgc", steps=steps)
    ds = synthesize(cfg.spec)
    settings = cfg.train_settings()
    original = K.backend_name()
    results = {}
    try:
        for backend in K.available_backends():
            K.set_backend(backend)
            run_training(ds, cfg.hidden, settings, seed=1)  # warm the JIT
            t0 = time.perf_counter()
            params, record = run_training(ds, cfg.hidden, settings, seed=1)
            results[backend] = {
                "seconds": time.perf_counter() - t0,
                "theta": flatten_values(params.tensors()),
                "bacc": record.final_bacc,
            }
    finally:
        K.set_backend(original)
    return results


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="compare the compiled and pure-numpy kernel backends"
    )
    parser.add_argument(
        "--repeats", type=int, default=200,
        help="timing repetitions per kernel (default 200)",
    )
    parser.add_argument(
        "--steps", type=int, default=300,
        help="training steps for the end-to-end comparison (default 300)",
    )
    parser.add_argument(
        "--csv", type=str, default=None,
        help="also write the per-kernel table to this CSV path",
    )
    args = parser.parse_args(argv)

    print(f"available backends: {', '.join(K.available_backends())}")
    if "numba" not in K.available_backends():
        print("numba not importable; timing the numpy fallback only")

    rows = bench_kernels(args.repeats)
    header = (
        f"{'kernel':<18} {'shapes':<28} {'numpy us':>9} {'numba us':>9} "
        f"{'speedup':>8} {'max|dev|':>9}"
    )
    print()
    print(header)
    print("-" * len(header))
    for r in rows:
        print(
            f"{r['kernel']:<18} {r['shapes']:<28} {r['numpy_us']:>9.1f} "
            f"{r['numba_us']:>9.1f} {r['speedup']:>8.2f} "
            f"{r['max_abs_dev']:>9.1e}"
        )

    if args.csv:
        import csv

        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"\nwrote {args.csv}")

    print(f"\nend-to-end: {args.steps} training steps, default config")
    results = bench_end_to_end(args.steps)
    for backend, res in results.items():
        rate = args.steps / res["seconds"]
        print(
            f"  {backend:<6} {res['seconds']:.2f}s "
            f"({rate:.0f} steps/s), final bACC {res['bacc']:.4f}"
        )
    if len(results) == 2:
        speedup = results["numpy"]["seconds"] / results["numba"]["seconds"]
        dev = float(
            np.max(np.abs(results["numba"]["theta"] - results["numpy"]["theta"]))
        )
        print(f"  numba end-to-end speedup: {speedup:.2f}x")
        print(f"  max |final-parameter deviation| between backends: {dev:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
