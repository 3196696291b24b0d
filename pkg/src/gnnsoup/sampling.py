"""Mini-batch samplers producing per-layer blocks.

Blocks are indexed by hop: ``blocks[h]`` has rows ``nodes[h]`` and
columns ``nodes[h + 1]``, with ``nodes[0]`` the output batch.  Each
``nodes[h + 1]`` starts with ``nodes[h]`` in the same order, so every
target keeps its own column.  The forward pass consumes the blocks from
the deepest hop upwards (``LayeredBlocks.layer_blocks``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Dataset, Graph, induce_subgraph, mean_normalize, sym_normalize
from .nn import Batch, ModelArch

SAMPLER_KINDS = ("node", "edge", "layer")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "node"
    fanout_q: int = 10
    edge_budget: int = 2000
    layer_sizes: tuple[int, ...] = (256, 256)
    batch_size: int = 256
    seed: int = 0
    conditional: bool = True

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.kind == "node" and self.fanout_q < 1:
            raise ValueError("fanout_q must be positive")
        if self.kind == "edge" and self.edge_budget < 1:
            raise ValueError("edge_budget must be positive")
        if self.kind == "layer" and (not self.layer_sizes or min(self.layer_sizes) < 1):
            raise ValueError("layer_sizes must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class LayeredBlocks:
    nodes: list[np.ndarray]
    blocks: list[sp.csr_matrix]

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def layer_blocks(self) -> list[sp.csr_matrix]:
        """Blocks in forward order (input layer first)."""
        return self.blocks[::-1]

    def density(self) -> float:
        cells = sum(b.shape[0] * b.shape[1] for b in self.blocks)
        return sum(b.nnz for b in self.blocks) / cells


@dataclass
class Subgraph:
    nodes: np.ndarray  # original ids, sorted; position = local id
    graph: Graph
    operator: Graph
    sampled_edges: np.ndarray | None = None  # (m, 2) original ids, u < v


def _check_batch(batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("empty batch")
    return batch


def _extend(targets: np.ndarray, new_nodes: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Column node list = targets then unseen new nodes (sorted); plus a
    global-id -> column lookup."""
    seen = np.zeros(n, dtype=bool)
    seen[targets] = True
    extra = np.unique(new_nodes[~seen[new_nodes]])
    cols = np.concatenate([targets, extra])
    lookup = np.full(n, -1, dtype=np.int64)
    lookup[cols] = np.arange(cols.size)
    return cols, lookup


def _segments(g: Graph, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row id (position in targets) and CSR position of every stored
    neighbour of the targets."""
    starts = g.row_offsets[targets]
    lens = g.row_offsets[targets + 1] - starts
    rows = np.repeat(np.arange(targets.size), lens)
    offs = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
    return rows, np.repeat(starts, lens) + offs


def sample_node_wise(g: Graph, batch, q: int, depth: int, rng: np.random.Generator) -> LayeredBlocks:
    """GraphSAGE-style uniform neighbour sampling capped at ``q`` per node.

    Each target keeps itself plus ``min(q, deg)`` distinct neighbours drawn
    without replacement; rows are mean-normalised.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    targets = _check_batch(batch)
    nodes, blocks = [targets], []
    for _ in range(depth):
        rows, pos = _segments(g, targets)
        nbr = g.col_indices[pos]
        keep_loop = nbr != targets[rows]
        rows, nbr = rows[keep_loop], nbr[keep_loop]
        keys = rng.random(rows.size)
        order = np.lexsort((keys, rows))
        rows, nbr = rows[order], nbr[order]
        first = np.searchsorted(rows, rows, side="left")
        keep = (np.arange(rows.size) - first) < q
        rows, nbr = rows[keep], nbr[keep]

        cols, lookup = _extend(targets, nbr, g.num_nodes)
        r = np.concatenate([np.arange(targets.size), rows])
        c = np.concatenate([np.arange(targets.size), lookup[nbr]])
        counts = np.bincount(r, minlength=targets.size).astype(np.float64)
        block = sp.csr_matrix((1.0 / counts[r], (r, c)), shape=(targets.size, cols.size))
        block.sort_indices()
        blocks.append(block)
        nodes.append(cols)
        targets = cols
    return LayeredBlocks(nodes, blocks)


def sample_edge_wise(g: Graph, budget: int, rng: np.random.Generator, operator: str = "sym") -> Subgraph:
    """Uniformly draw ``min(budget, E)`` distinct undirected edges and return
    the subgraph induced on their endpoints, renormalised."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    edges = g.undirected_edges()
    if edges.shape[0] == 0:
        raise ValueError("graph has no edges to sample")
    k = min(budget, edges.shape[0])
    pick = np.sort(rng.choice(edges.shape[0], size=k, replace=False))
    sub, nodes = induce_subgraph(g, edges[pick].ravel())
    norm = sym_normalize if operator == "sym" else mean_normalize
    return Subgraph(nodes, sub, norm(sub), edges[pick])


def layer_importance(g: Graph) -> np.ndarray:
    """p(u) proportional to the squared row norm of the normalised adjacency.

    An unvalued graph is normalised first; a valued graph is taken as the
    normalised operator itself.
    """
    op = g if g.values is not None else sym_normalize(g)
    sq = np.asarray(op.csr.multiply(op.csr).sum(axis=1)).ravel()
    return sq / sq.sum()


def sample_layer_wise(
    g: Graph,
    batch,
    sizes,
    rng: np.random.Generator,
    operator: Graph | None = None,
    probs: np.ndarray | None = None,
    conditional: bool = True,
) -> LayeredBlocks:
    """Importance-sampled layer blocks with unbiased rescaling.

    For hop ``h`` the targets keep their own columns exactly; ``sizes[h]``
    further nodes are drawn with replacement from the rest of the 1-hop
    neighbourhood (or from all nodes when ``conditional`` is false) with
    probability proportional to ``probs``, and each drawn entry is scaled by
    ``count / (sizes[h] * q(u))``.  When the candidate set is no larger than
    ``sizes[h]`` all of it is taken with unit scale.
    """
    sizes = [int(s) for s in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("sizes must be positive")
    op = operator if operator is not None else sym_normalize(g)
    p = probs if probs is not None else layer_importance(op)
    a = op.csr
    targets = _check_batch(batch)
    nodes, blocks = [targets], []
    for s in sizes:
        rows_a = a[targets]
        is_target = np.zeros(g.num_nodes, dtype=bool)
        is_target[targets] = True
        if conditional:
            cand = np.unique(rows_a.indices)
            cand = cand[~is_target[cand]]
        else:
            cand = np.flatnonzero(~is_target)
        if cand.size <= s:
            drawn = cand
            weight = np.ones(cand.size)
        else:
            qc = p[cand] / p[cand].sum()
            draws = rng.choice(cand.size, size=s, replace=True, p=qc)
            counts = np.bincount(draws, minlength=cand.size)
            hit = np.flatnonzero(counts)
            drawn = cand[hit]
            weight = counts[hit] / (s * qc[hit])
        cols, lookup = _extend(targets, drawn, g.num_nodes)
        scale = np.zeros(g.num_nodes)
        scale[targets] = 1.0
        scale[drawn] = weight
        sel = rows_a[:, cols].tocsr()
        sel = sel @ sp.diags(scale[cols])
        sel = sp.csr_matrix(sel)
        sel.eliminate_zeros()
        sel.sort_indices()
        blocks.append(sel)
        nodes.append(cols)
        targets = cols
    return LayeredBlocks(nodes, blocks)


# -- batch sources for the trainer -------------------------------------------


class _SourceBase:
    def __init__(self, dataset: Dataset, arch: ModelArch, cfg: SamplerConfig, dtype=np.float32):
        self.dataset = dataset
        self.arch = arch
        self.cfg = cfg
        self.x = dataset.features.astype(dtype)
        self.stats = {"batches": 0, "input_nodes": 0, "output_nodes": 0, "block_nnz": 0}

    def _rng(self, rng):
        return np.random.default_rng([self.cfg.seed, int(rng.integers(2**32))])

    def _node_batches(self, rng):
        train = rng.permutation(self.dataset.splits.train)
        bs = self.cfg.batch_size
        return [train[i : i + bs] for i in range(0, train.size, bs)]

    def _record(self, n_in, n_out, nnz):
        s = self.stats
        s["batches"] += 1
        s["input_nodes"] += int(n_in)
        s["output_nodes"] += int(n_out)
        s["block_nnz"] += int(nnz)

    def summary(self) -> dict:
        s = self.stats
        n = max(s["batches"], 1)
        return {
            "kind": self.cfg.kind,
            "batches": s["batches"],
            "mean_input_nodes": s["input_nodes"] / n,
            "mean_output_nodes": s["output_nodes"] / n,
            "mean_block_nnz": s["block_nnz"] / n,
        }

    def _blocks_batch(self, lb: LayeredBlocks) -> Batch:
        out = lb.nodes[0]
        self._record(lb.nodes[-1].size, out.size, sum(b.nnz for b in lb.blocks))
        return Batch(lb.layer_blocks(), self.x[lb.nodes[-1]], self.dataset.labels[out], np.ones(out.size, dtype=bool))

    def _subgraph_batch(self, sub: Subgraph) -> Batch | None:
        mask = np.isin(sub.nodes, self.dataset.splits.train)
        if not mask.any():
            return None
        self._record(sub.nodes.size, int(mask.sum()), sub.operator.num_stored_edges)
        return Batch(sub.operator, self.x[sub.nodes], self.dataset.labels[sub.nodes], mask)


class NodeSampleSource(_SourceBase):
    def batches(self, epoch, rng):
        rng = self._rng(rng)
        for b in self._node_batches(rng):
            lb = sample_node_wise(self.dataset.graph, b, self.cfg.fanout_q, self.arch.num_layers, rng)
            yield self._blocks_batch(lb)


class LayerSampleSource(_SourceBase):
    def __init__(self, dataset, arch, cfg, dtype=np.float32):
        super().__init__(dataset, arch, cfg, dtype)
        if len(cfg.layer_sizes) != arch.num_layers:
            raise ValueError("layer_sizes length must equal num_layers")
        self.op = dataset.operator("sym")
        self.probs = layer_importance(self.op)

    def batches(self, epoch, rng):
        rng = self._rng(rng)
        for b in self._node_batches(rng):
            lb = sample_layer_wise(
                self.dataset.graph, b, self.cfg.layer_sizes, rng, self.op, self.probs, self.cfg.conditional
            )
            yield self._blocks_batch(lb)


class EdgeSampleSource(_SourceBase):
    """``ceil(E / budget)`` edge-sampled subgraphs per epoch."""

    def __init__(self, dataset, arch, cfg, dtype=np.float32):
        super().__init__(dataset, arch, cfg, dtype)
        self.steps = max(1, math.ceil(dataset.graph.num_edges / cfg.edge_budget))

    def batches(self, epoch, rng):
        rng = self._rng(rng)
        for _ in range(self.steps):
            sub = sample_edge_wise(self.dataset.graph, self.cfg.edge_budget, rng, self.arch.operator_kind)
            yield self._subgraph_batch(sub)


def make_source(dataset: Dataset, arch: ModelArch, cfg: SamplerConfig, dtype=np.float32):
    cls = {"node": NodeSampleSource, "edge": EdgeSampleSource, "layer": LayerSampleSource}[cfg.kind]
    return cls(dataset, arch, cfg, dtype)
