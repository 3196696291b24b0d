"""
Soups of mini-batch trained ingredients
=======================================

The same pipeline, with every ingredient trained on sampled subgraphs
instead of the full graph: node-wise neighbour sampling, edge sampling
and layer-wise importance sampling.  Ingredients never exchange weights
while training; the coordinator soups each group of four as it finishes.
"""

from gnnsoup import Hyperparams, ModelArch, PipelineConfig, SamplerConfig, hyper_grid_expand, run_pipeline
from gnnsoup.datasets import sbm_dataset
from gnnsoup.sampling import sample_layer_wise, sample_node_wise
import numpy as np

ds = sbm_dataset(n=1000, k=4, p_in=0.03, p_out=0.008, noise=1.0, seed=2)
arch = ModelArch("gcn", 2, 32, ds.num_features, ds.num_classes)

# %%
# What the samplers hand to the model: one block per layer.  Node-wise
# sampling keeps at most q neighbours per node; layer-wise sampling draws
# a fixed number of nodes per layer shared by the whole batch.

batch = ds.splits.train[:64]
nw = sample_node_wise(ds.graph, batch, q=5, depth=2, rng=np.random.default_rng(0))
lw = sample_layer_wise(ds.graph, batch, [128, 128], rng=np.random.default_rng(0))
for name, lb in (("node-wise", nw), ("layer-wise", lw)):
    shapes = " -> ".join(str(n.size) for n in lb.nodes[::-1])
    print(f"{name:<10} nodes per hop (input to output): {shapes}; block nnz {[b.nnz for b in lb.blocks]}")

# %%
# Ten ingredients per sampler.

grid = hyper_grid_expand(Hyperparams(epochs=10, batch_size=128), {"learning_rate": [0.01, 0.005], "dropout_rate": [0.5, 0.2]}, count=10)
samplers = {
    "node-sample": SamplerConfig(kind="node", fanout_q=10, batch_size=128),
    "edge-sample": SamplerConfig(kind="edge", edge_budget=800),
    "layer-sample": SamplerConfig(kind="layer", layer_sizes=(256, 256), batch_size=128),
}
for mode, sampler in samplers.items():
    cfg = PipelineConfig(arch=arch, hyper_grid=grid, ingredient_count=10, gpu_count=4, mode=mode, sampler=sampler)
    rep = run_pipeline(ds, cfg)
    print(f"\n{mode}")
    print(rep.table())
    print("sampler:", {k: round(v, 1) if isinstance(v, float) else v for k, v in rep.sampler_stats.items()})
