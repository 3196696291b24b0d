"""
What intermediate communication changes
=======================================

Runs the same ingredients twice: once fully independent, and once with a
synchronisation every T epochs where the coordinator soups the current
weights and sends the result back to every worker (optimiser state stays
local).  Also shows that the independent pipeline does not depend on how
many workers run it.
"""

from dataclasses import replace

from gnnsoup import Hyperparams, ModelArch, PipelineConfig, hyper_grid_expand, run_pipeline, run_pipeline_with_communication
from gnnsoup.datasets import sbm_dataset

ds = sbm_dataset(n=600, k=4, p_in=0.04, p_out=0.012, noise=1.2, seed=3)
arch = ModelArch("gcn", 2, 32, ds.num_features, ds.num_classes)
grid = hyper_grid_expand(Hyperparams(epochs=30), {"learning_rate": [0.02, 0.005], "dropout_rate": [0.5, 0.2]}, count=8)
cfg = PipelineConfig(arch=arch, hyper_grid=grid, ingredient_count=8, gpu_count=4)

# %%
# Worker count only changes wall-clock time.

free = run_pipeline(ds, cfg)
for w in (2, 4):
    other = run_pipeline(ds, replace(cfg, worker_count=w))
    same = other.soup_state.params.fingerprint() == free.soup_state.params.fingerprint()
    print(f"worker_count={w}: soup identical to worker_count=1: {same}")

# %%
# Synchronising every 10 epochs versus never.

for t in (10, 30):
    rep = run_pipeline_with_communication(ds, replace(cfg, comm_interval=t), baseline=free)
    ab = rep.ablation
    print(f"\nsync every {t} epochs ({ab['syncs']} syncs)")
    print(rep.table())
