"""Multilevel k-way graph partitioning and cluster mini-batches.

The partitioner follows the classic multilevel recipe: heavy-edge
matching to coarsen, greedy graph growing on the coarsest graph, then
boundary refinement with single-node moves while projecting back.  Only
strictly improving moves are taken, so refinement never raises the cut.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Dataset, Graph, induce_subgraph, mean_normalize, sym_normalize
from .nn import Batch, ModelArch

BALANCE_TOL = 0.10


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PartitionMap:
    num_clusters: int
    assignment: np.ndarray
    edge_cut: int
    graph_fingerprint: str = ""

    def __post_init__(self):
        a = np.ascontiguousarray(self.assignment, dtype=np.int64)
        if a.size and (a.min() < 0 or a.max() >= self.num_clusters):
            raise PartitionError("cluster id out of range")
        if np.bincount(a, minlength=self.num_clusters).min(initial=1) == 0:
            raise PartitionError("empty cluster")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def num_nodes(self) -> int:
        return self.assignment.size

    def clusters(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(np.bincount(self.assignment, minlength=self.num_clusters))[:-1]
        return np.split(order, bounds)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_clusters)


@dataclass(frozen=True)
class ClusterBatchConfig:
    q: int = 2
    seed: int = 0
    single_batch_per_epoch: bool = False

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")


def edge_cut(g: Graph, assignment) -> int:
    e = g.undirected_edges()
    a = np.asarray(assignment)
    return int(np.count_nonzero(a[e[:, 0]] != a[e[:, 1]]))


# -- multilevel machinery ----------------------------------------------------


@dataclass
class _Level:
    adj: sp.csr_matrix  # symmetric, weighted, zero diagonal
    vwgt: np.ndarray
    cmap: np.ndarray | None = None  # fine node -> coarse node of the next level


def _weighted_cut(adj: sp.csr_matrix, part: np.ndarray) -> float:
    c = adj.tocoo()
    return float(c.data[part[c.row] != part[c.col]].sum()) / 2.0


def _heavy_edge_matching(adj: sp.csr_matrix, rng) -> np.ndarray:
    n = adj.shape[0]
    match = np.full(n, -1, dtype=np.int64)
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    for v in rng.permutation(n):
        if match[v] >= 0:
            continue
        best, best_w = v, 0.0
        for j in range(indptr[v], indptr[v + 1]):
            u = indices[j]
            if match[u] < 0 and u != v and data[j] > best_w:
                best, best_w = u, data[j]
        match[v] = best
        match[best] = v
    cmap = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for v in range(n):
        if cmap[v] < 0:
            cmap[v] = nxt
            cmap[match[v]] = nxt
            nxt += 1
    return cmap


def _contract(adj, vwgt, cmap):
    n, nc = adj.shape[0], int(cmap.max()) + 1
    p = sp.csr_matrix((np.ones(n), (np.arange(n), cmap)), shape=(n, nc))
    cadj = (p.T @ adj @ p).tocsr()
    cadj.setdiag(0)
    cadj.eliminate_zeros()
    cadj.sort_indices()
    return cadj, np.bincount(cmap, weights=vwgt, minlength=nc)


def _grow(adj, vwgt, k, seed_order) -> np.ndarray:
    """Greedy graph growing: fill parts 0..k-2 to their share by repeatedly
    absorbing the frontier node most connected to the part."""
    n = adj.shape[0]
    part = np.full(n, k - 1, dtype=np.int64)
    free = np.ones(n, dtype=bool)
    total = vwgt.sum()
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    seeds = iter(seed_order)
    for p in range(k - 1):
        target = total / k
        remaining_parts = k - p
        if free.sum() <= remaining_parts - 1:
            break
        size = 0.0
        conn = {}
        heap: list = []
        while size < target and free.sum() > remaining_parts - 1:
            v = None
            while heap:
                negw, u = heapq.heappop(heap)
                if free[u] and conn.get(u) == -negw:
                    v = u
                    break
            if v is None:
                for s in seeds:
                    if free[s]:
                        v = s
                        break
                if v is None:
                    v = int(np.flatnonzero(free)[0])
            if size > 0 and size + vwgt[v] > target * (1 + BALANCE_TOL):
                break
            free[v] = False
            part[v] = p
            size += vwgt[v]
            for j in range(indptr[v], indptr[v + 1]):
                u = indices[j]
                if free[u]:
                    conn[u] = conn.get(u, 0.0) + data[j]
                    heapq.heappush(heap, (-conn[u], u))
    return part


def _refine(adj, vwgt, part, k, max_w, max_passes=20) -> np.ndarray:
    """Boundary refinement with strictly cut-reducing, balance-respecting moves."""
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    n = adj.shape[0]
    pw = np.bincount(part, weights=vwgt, minlength=k)
    pc = np.bincount(part, minlength=k)
    cut = _weighted_cut(adj, part)
    for _ in range(max_passes):
        moved = False
        for v in range(n):
            lo, hi = indptr[v], indptr[v + 1]
            if lo == hi:
                continue
            src = part[v]
            nbr_parts = part[indices[lo:hi]]
            if np.all(nbr_parts == src):
                continue
            ext = np.bincount(nbr_parts, weights=data[lo:hi], minlength=k)
            internal = ext[src]
            ext[src] = -np.inf
            dst = int(np.argmax(ext))
            gain = ext[dst] - internal
            if gain > 0 and pc[src] > 1 and pw[dst] + vwgt[v] <= max_w:
                part[v] = dst
                pw[src] -= vwgt[v]
                pw[dst] += vwgt[v]
                pc[src] -= 1
                pc[dst] += 1
                moved = True
        new_cut = _weighted_cut(adj, part)
        assert new_cut <= cut + 1e-9, "refinement increased the edge cut"
        cut = new_cut
        if not moved:
            break
    return part


def _fill_empty(part, k, vwgt):
    """Give each empty part one node taken from the heaviest part."""
    counts = np.bincount(part, minlength=k)
    for p in np.flatnonzero(counts == 0):
        src = int(np.argmax(counts))
        v = int(np.flatnonzero(part == src)[-1])
        part[v] = p
        counts[src] -= 1
        counts[p] += 1
    return part


def partition_graph(g: Graph, k: int, trials: int = 8, seed: int = 0) -> PartitionMap:
    """Deterministic multilevel k-way partition balanced to within 10%."""
    n = g.num_nodes
    if k < 1 or k > n:
        raise PartitionError(f"k must lie in [1, {n}], got {k}")
    if k == 1:
        return PartitionMap(1, np.zeros(n, dtype=np.int64), 0, g.fingerprint())
    rng = np.random.default_rng(seed)
    adj = sp.csr_matrix((np.ones(g.num_stored_edges), g.col_indices, g.row_offsets), shape=(n, n))
    adj.setdiag(0)
    adj.eliminate_zeros()
    levels = [_Level(adj, np.ones(n))]
    limit = max(100, 20 * k)
    while levels[-1].adj.shape[0] > limit:
        lvl = levels[-1]
        cmap = _heavy_edge_matching(lvl.adj, rng)
        nc = int(cmap.max()) + 1
        if nc > 0.95 * lvl.adj.shape[0]:
            break
        lvl.cmap = cmap
        cadj, cw = _contract(lvl.adj, lvl.vwgt, cmap)
        levels.append(_Level(cadj, cw))

    def max_weight(vwgt):
        return max(math.ceil((1 + BALANCE_TOL) * n / k), float(vwgt.max()))

    coarse = levels[-1]
    nc = coarse.adj.shape[0]
    best, best_cut = None, np.inf
    for t in range(trials):
        order = rng.permutation(nc) if t else np.argsort(np.asarray(coarse.adj.sum(axis=1)).ravel(), kind="stable")
        part = _fill_empty(_grow(coarse.adj, coarse.vwgt, k, order), k, coarse.vwgt)
        part = _refine(coarse.adj, coarse.vwgt, part, k, max_weight(coarse.vwgt))
        c = _weighted_cut(coarse.adj, part)
        if c < best_cut:
            best, best_cut = part.copy(), c
    part = best
    for lvl in reversed(levels[:-1]):
        part = part[lvl.cmap]
        part = _refine(lvl.adj, lvl.vwgt, part, k, max_weight(lvl.vwgt))
    part = _fill_empty(part, k, levels[0].vwgt)
    return PartitionMap(k, part, edge_cut(g, part), g.fingerprint())


def random_balanced_partition(n: int, k: int, rng) -> np.ndarray:
    return rng.permutation(np.arange(n) % k)


# -- persistence -------------------------------------------------------------


def save_partition(p: PartitionMap, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "num_nodes": p.num_nodes,
        "num_clusters": p.num_clusters,
        "edge_cut": p.edge_cut,
        "graph_fingerprint": p.graph_fingerprint,
    }
    (root / "header.json").write_text(json.dumps(header, sort_keys=True))
    (root / "assignment.bin").write_bytes(np.ascontiguousarray(p.assignment, dtype="<u4").tobytes())
    return root


def load_partition(path, num_nodes: int | None = None, graph: Graph | None = None) -> PartitionMap:
    root = Path(path)
    try:
        header = json.loads((root / "header.json").read_text())
        raw = (root / "assignment.bin").read_bytes()
        n = int(header["num_nodes"])
        k = int(header["num_clusters"])
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise PartitionError(f"corrupt partition file {root}: {exc}") from exc
    if len(raw) != 4 * n:
        raise PartitionError(f"corrupt partition file {root}: expected {4 * n} bytes, got {len(raw)}")
    expected = graph.num_nodes if graph is not None else num_nodes
    if expected is not None and expected != n:
        raise PartitionError(f"partition has {n} nodes but dataset has {expected}")
    if graph is not None and header.get("graph_fingerprint") not in ("", None, graph.fingerprint()):
        raise PartitionError("partition was computed for a different graph")
    assignment = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    try:
        return PartitionMap(k, assignment, int(header["edge_cut"]), header.get("graph_fingerprint", ""))
    except PartitionError as exc:
        raise PartitionError(f"corrupt partition file {root}: {exc}") from exc


# -- cluster batches ---------------------------------------------------------


def form_cluster_batch(g: Graph, p: PartitionMap, chosen, operator: str = "sym"):
    """Subgraph induced on the union of ``chosen`` clusters (between-cluster
    edges among them kept), with a freshly normalised operator."""
    chosen = np.asarray(chosen)
    if chosen.size == 0 or chosen.size > p.num_clusters:
        raise ValueError("must choose between 1 and K clusters")
    nodes = np.flatnonzero(np.isin(p.assignment, chosen))
    sub, nodes = induce_subgraph(g, nodes)
    norm = sym_normalize if operator == "sym" else mean_normalize
    return nodes, sub, norm(sub)


def cluster_schedule(p: PartitionMap, cfg: ClusterBatchConfig, rng) -> list[np.ndarray]:
    """Cluster groups for one epoch: a random permutation cut into groups of
    q, or a single random group when ``single_batch_per_epoch``."""
    if cfg.q > p.num_clusters:
        raise ValueError("q must not exceed the number of clusters")
    perm = rng.permutation(p.num_clusters)
    if cfg.single_batch_per_epoch:
        return [np.sort(perm[: cfg.q])]
    return [np.sort(perm[i : i + cfg.q]) for i in range(0, p.num_clusters, cfg.q)]


class ClusterBatchSource:
    def __init__(self, dataset: Dataset, arch: ModelArch, partition: PartitionMap, cfg: ClusterBatchConfig, dtype=np.float32):
        if partition.num_nodes != dataset.num_nodes:
            raise PartitionError("partition does not match dataset size")
        self.dataset = dataset
        self.arch = arch
        self.partition = partition
        self.cfg = cfg
        self.x = dataset.features.astype(dtype)
        self.is_train = np.zeros(dataset.num_nodes, dtype=bool)
        self.is_train[dataset.splits.train] = True
        self.skipped = 0
        self.stats = {"batches": 0, "nodes": 0, "edges": 0}

    def batches(self, epoch, rng):
        rng = np.random.default_rng([self.cfg.seed, int(rng.integers(2**32))])
        for group in cluster_schedule(self.partition, self.cfg, rng):
            nodes, sub, op = form_cluster_batch(self.dataset.graph, self.partition, group, self.arch.operator_kind)
            mask = self.is_train[nodes]
            if not mask.any():
                self.skipped += 1
                yield None
                continue
            self.stats["batches"] += 1
            self.stats["nodes"] += int(nodes.size)
            self.stats["edges"] += int(sub.num_stored_edges)
            yield Batch(op, self.x[nodes], self.dataset.labels[nodes], mask, info={"clusters": group.tolist()})

    def summary(self) -> dict:
        n = max(self.stats["batches"], 1)
        return {
            "kind": "partition",
            "num_clusters": self.partition.num_clusters,
            "q": self.cfg.q,
            "batches": self.stats["batches"],
            "skipped_batches": self.skipped,
            "mean_nodes": self.stats["nodes"] / n,
            "mean_stored_edges": self.stats["edges"] / n,
        }
