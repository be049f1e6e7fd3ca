"""
A miniature bench run
=====================

The bench trains one model per (shape, archetype, strategy) cell, writes a
long-form metrics report and aggregates it into D-Scores (lower is better).
This plan is scaled down to run in about a minute.
"""

import sys
import tempfile

from implicit_sampling.bench import BenchPlan, run_bench

plan = BenchPlan(
    shapes=["sphere"],
    strategies=["S_UNI", "S_HNS", "S_BS", "S_NS"],
    models=[{"archetype": "GlobalMLP", "kind": "occ"}],
    epochs=100,
    resolution=32,
    eval_samples=3000,
)
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="bench_")
res = run_bench(plan, workers=1, out_dir=out)

for strategy, score in sorted(res.dscores.items(), key=lambda kv: kv[1]):
    print(f"{strategy:8s} D = {score:.4f}")
print(f"report written to {out}")
