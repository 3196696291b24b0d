"""Sparse graph container, dataset I/O and the propagation operators.

Graphs are stored in CSR form with 0-based dense node ids.  Undirected
graphs hold both directions of every edge.  Operators used for message
passing (symmetric or mean normalized adjacency with self-loops) are
returned as valued ``Graph`` objects, so samplers and the training engine
share one representation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Raised when a dataset directory is malformed."""


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray | None = None

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        if ro.shape != (self.num_nodes + 1,) or ro[0] != 0 or ro[-1] != ci.size:
            raise ValueError("row_offsets inconsistent with col_indices")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= self.num_nodes):
            raise ValueError("column index out of range")
        vals = None
        if self.values is not None:
            vals = np.ascontiguousarray(self.values, dtype=np.float64)
            if vals.shape != ci.shape:
                raise ValueError("values length must match col_indices")
        for arr in (ro, ci, vals):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_edges(cls, num_nodes: int, src, dst, symmetric: bool = True) -> Graph:
        """Build an unweighted graph; drops self-loops and duplicate edges."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if symmetric:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        keep = src != dst
        src, dst = src[keep], dst[keep]
        m = sp.coo_matrix(
            (np.ones(src.size), (src, dst)), shape=(num_nodes, num_nodes)
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(num_nodes, m.indptr, m.indices)

    @classmethod
    def from_scipy(cls, m: sp.spmatrix, keep_values: bool = True) -> Graph:
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValueError("Graph requires a square matrix")
        return cls(m.shape[0], m.indptr, m.indices, m.data if keep_values else None)

    @property
    def num_stored_edges(self) -> int:
        return int(self.col_indices.size)

    @property
    def num_edges(self) -> int:
        """Undirected edge count (self-loops counted once)."""
        r = np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))
        loops = int(np.count_nonzero(r == self.col_indices))
        return (self.num_stored_edges - loops) // 2 + loops

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[v] : self.row_offsets[v + 1]]

    def edge_array(self) -> np.ndarray:
        """(E_stored, 2) array of stored (src, dst) pairs in CSR order."""
        r = np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))
        return np.stack([r, self.col_indices], axis=1)

    def undirected_edges(self) -> np.ndarray:
        """Each undirected edge once as (u, v) with u < v, sorted."""
        e = self.edge_array()
        return e[e[:, 0] < e[:, 1]]

    @cached_property
    def csr(self) -> sp.csr_matrix:
        data = self.values if self.values is not None else np.ones(self.num_stored_edges)
        return sp.csr_matrix(
            (data, self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.num_nodes).tobytes())
        h.update(self.row_offsets.tobytes())
        h.update(self.col_indices.tobytes())
        if self.values is not None:
            h.update(self.values.tobytes())
        return h.hexdigest()[:16]


def _with_self_loops(g: Graph) -> sp.csr_matrix:
    a = sp.csr_matrix(
        (np.ones(g.num_stored_edges), g.col_indices, g.row_offsets),
        shape=(g.num_nodes, g.num_nodes),
    )
    a.setdiag(0)
    a.eliminate_zeros()
    return (a + sp.identity(g.num_nodes, format="csr")).tocsr()


def sym_normalize(g: Graph) -> Graph:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = _with_self_loops(g)
    d = np.asarray(a.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(g.num_nodes), np.diff(a.indptr))
    a.data = 1.0 / np.sqrt(d[rows] * d[a.indices])
    return Graph.from_scipy(a)


def mean_normalize(g: Graph) -> Graph:
    """Row-stochastic D^-1 (A + I): mean over the closed neighbourhood."""
    a = _with_self_loops(g)
    d = np.asarray(a.sum(axis=1)).ravel()
    return Graph.from_scipy(sp.diags(1.0 / d) @ a)


def spmm(g: Graph | sp.spmatrix, m: np.ndarray) -> np.ndarray:
    """Sparse (valued) adjacency times dense matrix.

    The result has the dtype of ``m``; operator values are cast to it.
    """
    op = g.csr if isinstance(g, Graph) else g
    if op.shape[1] != m.shape[0]:
        raise ValueError(f"dimension mismatch: operator {op.shape} vs matrix {m.shape}")
    if op.dtype != m.dtype:
        op = op.astype(m.dtype)
    return np.asarray(op @ m)


def induce_subgraph(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Subgraph on ``nodes`` keeping edges with both endpoints inside.

    Returns the subgraph and the sorted array of original ids; position i in
    that array is the new id of original node ``nodes_sorted[i]``.
    """
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    if nodes.size == 0:
        raise ValueError("cannot induce a subgraph on an empty node set")
    if nodes[0] < 0 or nodes[-1] >= g.num_nodes:
        raise ValueError("node id out of range")
    sub = g.csr[nodes][:, nodes].tocsr()
    sub.sort_indices()
    vals = sub.data if g.values is not None else None
    return Graph(nodes.size, sub.indptr, sub.indices, vals), nodes


@dataclass(frozen=True)
class SplitSet:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.unique(np.asarray(getattr(self, name), dtype=np.int64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.val.size == 0:
            raise ValueError("validation split must be non-empty")
        pairs = [(self.train, self.val), (self.train, self.test), (self.val, self.test)]
        if any(np.intersect1d(a, b).size for a, b in pairs):
            raise ValueError("splits must be pairwise disjoint")

    def check(self, num_nodes: int):
        for arr in (self.train, self.val, self.test):
            if arr.size and (arr[0] < 0 or arr[-1] >= num_nodes):
                raise ValueError("split id out of range")


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    splits: SplitSet
    num_classes: int
    name: str = "dataset"
    _ops: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.shape[0] != n:
            raise ValueError("feature row count mismatch")
        if self.labels.shape != (n,):
            raise ValueError("label count mismatch")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        self.splits.check(n)
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def operator(self, kind: str) -> Graph:
        """Full-graph propagation operator, cached: ``"sym"`` or ``"mean"``."""
        if kind not in self._ops:
            fn = {"sym": sym_normalize, "mean": mean_normalize}[kind]
            self._ops[kind] = fn(self.graph)
        return self._ops[kind]


def _fail(path: Path, msg: str, line: int | None = None):
    where = f"{path}:{line}" if line is not None else str(path)
    raise DatasetError(f"{where}: {msg}")


def load_dataset(path) -> Dataset:
    """Read a dataset directory (meta.json, edges.tsv, features.bin,
    labels.tsv, splits.json)."""
    root = Path(path)
    files = {n: root / n for n in ("meta.json", "edges.tsv", "features.bin", "labels.tsv", "splits.json")}
    for name, p in files.items():
        if not p.is_file():
            _fail(p, "missing file")
    meta = json.loads(files["meta.json"].read_text())
    try:
        n = int(meta["num_nodes"])
        f = int(meta["num_features"])
        c = int(meta["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        _fail(files["meta.json"], f"bad meta: {exc}")

    src, dst = [], []
    with files["edges.tsv"].open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                _fail(files["edges.tsv"], "expected 'src<TAB>dst'", lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                _fail(files["edges.tsv"], "non-integer node id", lineno)
            if not (0 <= u < n and 0 <= v < n):
                _fail(files["edges.tsv"], f"node id out of range [0, {n})", lineno)
            src.append(u)
            dst.append(v)
    graph = Graph.from_edges(n, src, dst)

    raw = files["features.bin"].read_bytes()
    if len(raw) != 4 * n * f:
        _fail(files["features.bin"], f"expected {4 * n * f} bytes for {n}x{f} floats, got {len(raw)}")
    features = np.frombuffer(raw, dtype="<f4").reshape(n, f).astype(np.float32)

    labels = []
    with files["labels.tsv"].open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                y = int(line)
            except ValueError:
                _fail(files["labels.tsv"], "non-integer label", lineno)
            if not 0 <= y < c:
                _fail(files["labels.tsv"], f"label {y} outside [0, {c})", lineno)
            labels.append(y)
    if len(labels) != n:
        _fail(files["labels.tsv"], f"label count mismatch: {len(labels)} labels for {n} nodes")

    sp_raw = json.loads(files["splits.json"].read_text())
    try:
        splits = SplitSet(*(np.asarray(sp_raw[k], dtype=np.int64) for k in ("train", "val", "test")))
        splits.check(n)
    except (KeyError, ValueError) as exc:
        _fail(files["splits.json"], str(exc))
    return Dataset(graph, features, np.asarray(labels, dtype=np.int64), splits, c, name=root.name)


def save_dataset(ds: Dataset, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"num_nodes": ds.num_nodes, "num_features": ds.num_features, "num_classes": ds.num_classes}
    (root / "meta.json").write_text(json.dumps(meta))
    edges = ds.graph.undirected_edges()
    (root / "edges.tsv").write_text("".join(f"{u}\t{v}\n" for u, v in edges))
    (root / "features.bin").write_bytes(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
    (root / "labels.tsv").write_text("".join(f"{y}\n" for y in ds.labels))
    splits = {k: getattr(ds.splits, k).tolist() for k in ("train", "val", "test")}
    (root / "splits.json").write_text(json.dumps(splits))
    return root
