"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--pipeline] [--json out.json]

Each kernel is run once per backend to check the outputs agree, then timed with
``timeit`` (best of ``--repeat``).  Sizes mirror a training batch and a
desk-scale evaluation.  ``--pipeline`` also times training plus evaluation on
the default synthetic dataset, once per backend in a fresh interpreter (the
backend is fixed at import).
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from cfair.kernels import available_backends


def make_cases(rng):
    d, k, b, n = 64, 100, 256, 1000
    G = rng.standard_normal((b, d))
    M = rng.standard_normal((k, d))
    T = rng.uniform(-1, 1, (b, k))
    W = rng.uniform(0, 1, (b, k)) / (b * k)
    U = rng.standard_normal((n, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    ids = np.repeat(np.arange(n // 10), 10)
    return {
        f"pair_cosines  B={b} K={k} d={d}": ("pair_cosines", (G, M)),
        f"pair_loss_grad B={b} K={k} d={d}": ("pair_loss_grad", (G, M, T, W)),
        f"pair_scores   n={n} d={d}": ("pair_scores", (U, ids)),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out])
    return np.ravel(out)


PIPELINE = """
import time, warnings
from cfair import kernels
from cfair.centroids import estimate_centroids, pseudo_blocks
from cfair.cftrain import TrainConfig, TrainingTables, compute_weights, train
from cfair.curves import fairness_report
from cfair.fairmodule import forward
from cfair.synth import SynthConfig, generate, parse_groups
from cfair.transform import build_target_table

ds = generate(SynthConfig(64, parse_groups("A:50:10:0.3,B:50:10:0.8"), seed=7))
t0 = time.perf_counter()
cs = estimate_centroids(ds)
blocks = pseudo_blocks(ds, cs)
tables = TrainingTables.build(ds, build_target_table(ds, cs, 0, blocks), compute_weights(ds, cs, blocks))
t1 = time.perf_counter()
res = train(ds, cs, tables, TrainConfig(batch_size=256, learning_rate=1e-3, epochs=20, seed=7))
t2 = time.perf_counter()
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    fairness_report(ds.with_embeddings(forward(res.params, ds.embeddings)), [0.1, 0.01])
t3 = time.perf_counter()
print(kernels.BACKEND, t1 - t0, t2 - t1, t3 - t2)
"""


def time_pipeline(backends):
    rows = []
    print(f"\n{'pipeline (N=1000, K=100, d=64)':38s} {'tables':>10s} {'train':>10s} {'eval':>10s}")
    for name in backends:
        env = dict(os.environ)
        env.pop("CF_PURE_PYTHON", None)
        if name == "python":
            env["CF_PURE_PYTHON"] = "1"
        out = subprocess.run([sys.executable, "-c", PIPELINE], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        tables, train_s, eval_s = (float(x) for x in out[1:])
        rows.append({"backend": out[0], "tables": tables, "train": train_s, "eval": eval_s})
        print(f"{out[0]:38s} {tables:9.3f}s {train_s:9.3f}s {eval_s:9.3f}s")
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pipeline", action="store_true", help="also time a full train + eval run")
    ap.add_argument("--json", default=None, help="also write results to this file")
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available", file=sys.stderr)
    cases = make_cases(np.random.default_rng(0))
    rows = []
    print(f"{'kernel':38s} " + " ".join(f"{name:>12s}" for name in backends) + "    speedup  max|diff|")
    for label, (fn_name, inputs) in cases.items():
        outs, times = {}, {}
        for name, mod in backends.items():
            fn = getattr(mod, fn_name)
            outs[name] = _flat(fn(*inputs))
            timer = timeit.Timer(lambda: fn(*inputs))
            loops, _ = timer.autorange()
            times[name] = min(timer.repeat(args.repeat, loops)) / loops
        diff = float(np.max(np.abs(outs["python"] - outs["cython"]))) if "cython" in outs else 0.0
        speedup = times["python"] / times["cython"] if "cython" in times else 1.0
        rows.append({"kernel": label.split()[0], "case": label, "seconds": times, "speedup": speedup,
                     "max_abs_diff": diff})
        cells = " ".join(f"{times[n] * 1e3:10.3f}ms" for n in backends)
        print(f"{label:38s} {cells} {speedup:9.2f}x  {diff:.1e}")
    result = {"kernels": rows}
    if args.pipeline:
        result["pipeline"] = time_pipeline(backends)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=2)


if __name__ == "__main__":
    main()
