"""
Partition soup on a grid
========================

Partitions a 24x24 grid graph once into K clusters, saves the partition,
and trains every ingredient on random unions of q clusters (edges between
the chosen clusters included).  Labels follow the grid quadrants with a
tenth of them resampled, so neighbourhood smoothing helps.
"""

import tempfile
from pathlib import Path

import numpy as np

from gnnsoup import Hyperparams, ModelArch, PipelineConfig, hyper_grid_expand, run_pipeline
from gnnsoup.datasets import grid_dataset
from gnnsoup.partition import ClusterBatchConfig, edge_cut, partition_graph, random_balanced_partition

ds = grid_dataset(side=24, seed=0, noise=1.0)

# %%
# Multilevel partitioning versus random balanced assignments.

part = partition_graph(ds.graph, 16)
rng = np.random.default_rng(0)
random_cut = np.mean([edge_cut(ds.graph, random_balanced_partition(ds.num_nodes, 16, rng)) for _ in range(20)])
print(f"k=16: edge cut {part.edge_cut} vs {random_cut:.0f} for random balanced; cluster sizes {part.sizes().min()}..{part.sizes().max()}")

# %%
# Ten ingredients; one epoch visits every cluster once in groups of q=2.

arch = ModelArch("gcn", 2, 32, ds.num_features, ds.num_classes)
grid = hyper_grid_expand(Hyperparams(epochs=20), {"learning_rate": [0.02, 0.01], "dropout_rate": [0.5, 0.2]}, count=10)
cfg = PipelineConfig(arch=arch, hyper_grid=grid, ingredient_count=10, gpu_count=5, mode="partition",
                     partition_k=16, cluster=ClusterBatchConfig(q=2))
with tempfile.TemporaryDirectory() as tmp:
    rep = run_pipeline(ds, cfg, out_dir=tmp, partition=part)
    print(rep.table())
    print("outputs:", sorted(p.name for p in Path(tmp).iterdir()))
