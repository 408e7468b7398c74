"""Compare greedy and random neuron selection on the 1-D Poisson pool.

Both arms share the first neuron, so their curves start at the same point.
"""
from rebano.config import preset
from rebano.experiments import ablate_greedy, ablation_medians, make_dataset

cfg = preset("poisson-desk")
train = make_dataset(cfg, "train", count=60, with_outputs=False)
rows = ablate_greedy(cfg, seeds=[0, 1, 2], n_max=5, train=train, cache_dir="demo_cache")
med = ablation_medians(rows)
print(" n   greedy       random")
for n in med["greedy"]:
    print(f"{n:2d}   {med['greedy'][n]:.3e}   {med['random'][n]:.3e}")
