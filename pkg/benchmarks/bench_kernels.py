"""Benchmark the compiled kernels against the pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py
The script times the scatter/segment kernels on graph-shaped workloads and
one full training step (forward + backward) per backend. The fallback is
exercised in-process via pcbgnn._kernels_np; the end-to-end comparison
re-launches the interpreter with PCBGNN_PURE_PYTHON=1.
"""

from __future__ import annotations

import os
import subprocess
import sys
import time

import numpy as np

from pcbgnn import _kernels_np, kernels


def _time(fn, *args, repeat=5):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels():
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':28s} {'shape':>18s} {'numpy':>10s} {'active':>10s} {'speedup':>8s}")
    for n_edges, dim, num_rows in [(500, 64, 120), (2000, 64, 400), (2000, 385, 400), (20000, 64, 700)]:
        vals = rng.standard_normal((n_edges, dim))
        idx = rng.integers(0, num_rows, n_edges)
        for name, np_fn, fast_fn in [
            ("scatter_add_rows (sorted)", _kernels_np.scatter_add_rows, kernels.scatter_add_rows),
            ("scatter_add_rows_fast", _kernels_np.scatter_add_rows_fast, kernels.scatter_add_rows_fast),
            ("segment_max", _kernels_np.segment_max, kernels.segment_max),
        ]:
            t_np = _time(np_fn, vals, idx, num_rows)
            t_fast = _time(fast_fn, vals, idx, num_rows)
            shape = f"({n_edges}x{dim})->{num_rows}"
            print(f"{name:28s} {shape:>18s} {t_np * 1e3:9.2f}ms {t_fast * 1e3:9.2f}ms {t_np / t_fast:7.1f}x")


def bench_training_step():
    code = r"""
import time
import numpy as np
from pcbgnn import kernels
from pcbgnn.autodiff import Tape
from pcbgnn.embedding import HashNgramEmbedder
from pcbgnn.graph import build_labeled_graph
from pcbgnn.model import ModelSpec, PairModel
from pcbgnn.netlist import Task
from pcbgnn.synth import GenConfig, generate

emb = HashNgramEmbedder()
graphs = [build_labeled_graph(s, emb) for s in generate(GenConfig(task=Task.PULL_UP_DOWN, count=6, seed=1))]
model = PairModel(ModelSpec(task=Task.PULL_UP_DOWN, backbone="gatv2", num_layers=3, hidden_dim=64, heads=4, theta=0.1), seed=0)
for g in graphs:
    with Tape() as tape:
        loss = model.training_loss(g).total
    tape.backward(loss)
t0 = time.perf_counter()
for _ in range(3):
    for g in graphs:
        with Tape() as tape:
            loss = model.training_loss(g).total
        tape.backward(loss)
print(f"{kernels.BACKEND}: {(time.perf_counter() - t0) / 18 * 1000:.1f} ms per graph (fwd+bwd)")
"""
    print("\nfull training step, GATv2 3x64 on ~120-node graphs:")
    for env_extra in ({}, {"PCBGNN_PURE_PYTHON": "1"}):
        env = {**os.environ, **env_extra}
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        print(" ", out.stdout.strip() or out.stderr.strip().splitlines()[-1])


if __name__ == "__main__":
    bench_kernels()
    bench_training_step()
