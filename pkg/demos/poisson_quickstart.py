"""Build a small reduced-basis operator for 1-D Poisson and query it on fresh inputs.

Run with ``python3 demos/poisson_quickstart.py``.  Trained PINNs are cached in
``./demo_cache`` so a second run only repeats the cheap online stage.
"""
import numpy as np

from rebano.config import preset
from rebano.experiments import build_rebano, make_dataset, rebano_predict
from rebano.grf import CovarianceSpec, sample
from rebano.fields import Grid
from rebano.metrics import rel_l2
from rebano.solvers import solve_poisson_1d

cfg = preset("poisson-desk")
cfg["models"]["rebano"]["n_neurons"] = 4  # a short build; the preset uses 8
train = make_dataset(cfg, "train", count=40)

basis, seconds = build_rebano(cfg, train, cache_dir="demo_cache")
print(f"offline stage: {basis.size} neurons in {seconds:.1f} s, parameters {basis.parameter_label}")
for k, h in enumerate(basis.history):
    print(f"  neuron {k + 1}: training input {h['input_id']}, indicator {h['delta']:.3e}")

# fresh in-distribution and out-of-distribution forcings
rng = np.random.default_rng(123)
grid = Grid.unit(cfg["dataset"]["n"])
for split in ("test_id", "test_ood"):
    spec = CovarianceSpec.from_dict(cfg["dataset"]["covariance"][split])
    inputs = [sample(spec, grid, rng) for _ in range(10)]
    preds = rebano_predict(basis, cfg, inputs)
    errs = [rel_l2(p, solve_poisson_1d(f)) for p, f in zip(preds, inputs)]
    print(f"{split}: mean relative L2 error {np.mean(errs):.4f}, max {np.max(errs):.4f}")
