"""Model soups for graph neural networks.

Independently trained GNN ingredients (full-batch, sampled or
partitioned) merged by greedy weight interpolation.
"""

from .graph import Dataset, Graph, SplitSet, induce_subgraph, load_dataset, mean_normalize, save_dataset, spmm, sym_normalize
from .nn import (
    Evaluator,
    Hyperparams,
    Ingredient,
    ModelArch,
    ModelParams,
    evaluate,
    forward,
    init_params,
    sgc_precompute,
    train_ingredient,
    train_step,
)
from .partition import PartitionMap, form_cluster_batch, load_partition, partition_graph, save_partition
from .pipeline import PipelineConfig, SoupReport, hyper_grid_expand, run_pipeline, run_pipeline_with_communication
from .sampling import SamplerConfig, layer_importance, sample_edge_wise, sample_layer_wise, sample_node_wise
from .soup import SoupConfig, SoupState, ensemble_eval, greedy_soup, incremental_soup, interpolate

__version__ = "0.1.0"
