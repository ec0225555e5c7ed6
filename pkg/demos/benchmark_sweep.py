# %% [markdown]
# # Missing-ratio sweep
#
# Completion accuracy and downstream classification as the fraction of
# hidden (object, kernel) slots grows. Uses the same code path as
# `mkmc bench`; a small configuration keeps it under a minute.

# %%
import numpy as np

from mkmc import MkmcConfig
from mkmc import dataset as ds
from mkmc.cli import bench_cell

ratios = (0.1, 0.3, 0.5, 0.7)
cfg = MkmcConfig(max_iters=100)
results = {}
for seed in range(3):
    spec = ds.SyntheticSpec(ell=100, K=4, d=20, sigma=0.3, seed=seed, n_train=50)
    truth, split = ds.synth_kernel_set(spec)
    sched = ds.make_mask_schedule(spec.ell, spec.K, ratios, seed=seed)
    for r in ratios:
        masked = sched.apply(truth, r)
        for method in ("mkmc", "zero", "mean"):
            results[(method, r, seed)] = bench_cell(truth, masked, split, method, cfg, c=1.0)

# %% Mean over seeds
print("ratio  method  distance  roc(M)")
for r in ratios:
    for method in ("mkmc", "zero", "mean"):
        d, roc = np.mean([results[(method, r, s)] for s in range(3)], axis=0)
        print(f"{r:5.1f}  {method:6s}  {d:8.4f}  {roc:6.3f}")
