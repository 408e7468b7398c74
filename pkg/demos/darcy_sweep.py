"""Darcy flow with a thresholded permeability: build, evaluate, then re-query on finer grids.

The desk preset trains a dozen 2-D PINNs, so this takes a while on one core.
Pass ``--neurons`` to shorten it.
"""
import argparse

from rebano.config import preset
from rebano.experiments import run_benchmark, sweep_resolution

ap = argparse.ArgumentParser()
ap.add_argument("--neurons", type=int, default=4)
ap.add_argument("--out", default="demo_out/darcy")
args = ap.parse_args()

cfg = preset("darcy-desk")
cfg["models"]["rebano"]["n_neurons"] = args.neurons
cfg["experiment"]["models"] = ["rebano"]
report = run_benchmark(cfg, out_dir=args.out, cache_dir="demo_cache/darcy")
row = report["rows"][0]
print(f"params {row['params']}")
print(f"mean error train/id/ood: {row['e_mean_train']:.4f} / {row['e_mean_id']:.4f} / {row['e_mean_ood']:.4f}")
print(f"generalization ratios r_id={row['r_id']:.3f} r_ood={row['r_ood']:.3f}")

basis = report["_artifacts"]["rebano"]
for r in sweep_resolution(basis, cfg, [17, 33, 65], count=10):
    print(f"grid {r['grid']:4d}: mean error {r['e_mean']:.4f}")
print(f"report written to {args.out}")
