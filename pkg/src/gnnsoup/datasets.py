"""Synthetic fixtures and raw-format importers.

The SBM fixture draws a planted-partition graph; node features are the
community one-hot (width 16) plus Gaussian noise, which keeps the task
learnable without making it trivial.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Dataset, DatasetError, Graph, SplitSet


def stratified_split(labels, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> SplitSet:
    """Per-class random split; every class contributes to every part when
    it has enough members."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_train = int(round(fractions[0] * members.size))
        n_val = int(round(fractions[1] * members.size))
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train : n_train + n_val])
        parts[2].append(members[n_train + n_val :])
    return SplitSet(*(np.concatenate(p) for p in parts))


def sbm_edges(sizes, p_in: float, p_out: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Undirected SBM edge list (u < v) for communities of the given sizes."""
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = labels.size
    src, dst = [], []
    for u in range(n - 1):
        v = np.arange(u + 1, n)
        p = np.where(labels[v] == labels[u], p_in, p_out)
        hit = v[rng.random(v.size) < p]
        src.append(np.full(hit.size, u))
        dst.append(hit)
    return np.concatenate(src), np.concatenate(dst)


def noisy_onehot(labels, dim: int, noise: float, rng) -> np.ndarray:
    x = rng.normal(0.0, noise, size=(labels.size, dim))
    x[np.arange(labels.size), labels % dim] += 1.0
    return x.astype(np.float32)


def sbm_dataset(
    n: int = 1000,
    k: int = 4,
    p_in: float = 0.05,
    p_out: float = 0.005,
    seed: int = 0,
    feature_dim: int = 16,
    noise: float = 0.5,
    fractions=(0.6, 0.2, 0.2),
) -> Dataset:
    rng = np.random.default_rng(seed)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    labels = np.repeat(np.arange(k), sizes)
    src, dst = sbm_edges(sizes, p_in, p_out, rng)
    graph = Graph.from_edges(n, src, dst)
    x = noisy_onehot(labels, feature_dim, noise, rng)
    splits = stratified_split(labels, fractions, seed)
    return Dataset(graph, x, labels.astype(np.int64), splits, k, name=f"sbm-n{n}-k{k}-s{seed}")


def grid_graph(side: int) -> Graph:
    idx = np.arange(side * side).reshape(side, side)
    src = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    dst = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return Graph.from_edges(side * side, src, dst)


def grid_dataset(side: int = 16, seed: int = 0, feature_dim: int = 16, noise: float = 0.5, flip: float = 0.1) -> Dataset:
    """Grid graph labelled by quadrant (4 classes), with a fraction ``flip``
    of labels resampled so the graph carries real signal."""
    rng = np.random.default_rng(seed)
    r, c = np.divmod(np.arange(side * side), side)
    labels = (2 * (r >= side // 2) + (c >= side // 2)).astype(np.int64)
    flipped = rng.random(labels.size) < flip
    labels[flipped] = rng.integers(0, 4, size=int(flipped.sum()))
    x = noisy_onehot(labels, feature_dim, noise, rng)
    return Dataset(grid_graph(side), x, labels, stratified_split(labels, seed=seed), 4, name=f"grid{side}")


def random_graph(n: int, p: float, seed: int = 0) -> Graph:
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return Graph.from_edges(n, iu[keep], ju[keep])


def read_cora_linqs(root) -> Dataset:
    """Import the LINQS Cora export (``cora.content`` + ``cora.cites``).

    Paper ids are remapped to dense ids in file order; class names are
    numbered in sorted order.  Citations pointing at unknown papers are
    reported as errors.
    """
    root = Path(root)
    content, cites = root / "cora.content", root / "cora.cites"
    for p in (content, cites):
        if not p.is_file():
            raise DatasetError(f"{p}: missing file")
    ids, feats, names = {}, [], []
    with content.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise DatasetError(f"{content}:{lineno}: expected id, features, label")
            if parts[0] in ids:
                raise DatasetError(f"{content}:{lineno}: duplicate paper id {parts[0]}")
            ids[parts[0]] = len(ids)
            try:
                feats.append([float(t) for t in parts[1:-1]])
            except ValueError:
                raise DatasetError(f"{content}:{lineno}: non-numeric feature") from None
            names.append(parts[-1])
    if len({len(f) for f in feats}) != 1:
        raise DatasetError(f"{content}: rows have differing feature counts")
    src, dst = [], []
    with cites.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetError(f"{cites}:{lineno}: expected 'cited citing'")
            try:
                src.append(ids[parts[0]])
                dst.append(ids[parts[1]])
            except KeyError as exc:
                raise DatasetError(f"{cites}:{lineno}: unknown paper id {exc.args[0]}") from None
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names], dtype=np.int64)
    graph = Graph.from_edges(len(ids), src, dst)
    x = row_normalize(np.asarray(feats, dtype=np.float32))
    return Dataset(graph, x, labels, stratified_split(labels), len(classes), name="cora")


def row_normalize(x: np.ndarray) -> np.ndarray:
    """Scale each row to sum to one; all-zero rows stay zero."""
    s = x.sum(axis=1, keepdims=True)
    return np.divide(x, s, out=np.zeros_like(x), where=s != 0)


_PLANETOID_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def read_cora_planetoid(root, name: str = "cora") -> Dataset:
    """Import the Planetoid pickles (``ind.<name>.x`` ... ``ind.<name>.test.index``).

    Uses the public split that ships with them: the first ``len(y)`` nodes
    train, the next 500 validate, and the listed test ids test.
    """
    root = Path(root)
    parts = {}
    for part in _PLANETOID_PARTS:
        path = root / f"ind.{name}.{part}"
        if not path.is_file():
            raise DatasetError(f"{path}: missing file")
        try:
            with path.open("rb") as fh:
                parts[part] = pickle.load(fh, encoding="latin1")
        except (pickle.UnpicklingError, EOFError, ValueError) as exc:
            raise DatasetError(f"{path}: unreadable pickle ({exc})") from None
    index_path = root / f"ind.{name}.test.index"
    if not index_path.is_file():
        raise DatasetError(f"{index_path}: missing file")
    test_idx = []
    for lineno, line in enumerate(index_path.read_text().splitlines(), 1):
        if line.strip():
            try:
                test_idx.append(int(line))
            except ValueError:
                raise DatasetError(f"{index_path}:{lineno}: expected an integer node id") from None
    test_idx = np.asarray(test_idx, dtype=np.int64)

    def dense(m):
        return np.asarray(m.todense() if sp.issparse(m) else m, dtype=np.float32)

    x = np.vstack([dense(parts["allx"]), dense(parts["tx"])])
    y = np.vstack([dense(parts["ally"]), dense(parts["ty"])])
    # test rows are stored in sorted order; put them back at their ids
    order = np.sort(test_idx)
    x[test_idx] = x[order]
    y[test_idx] = y[order]
    n = x.shape[0]
    graph_dict = parts["graph"]
    src = [u for u, vs in graph_dict.items() for _ in vs]
    dst = [v for vs in graph_dict.values() for v in vs]
    if (src and max(src) >= n) or (dst and max(dst) >= n):
        raise DatasetError(f"{root / f'ind.{name}.graph'}: node id out of range [0, {n})")
    labels = y.argmax(axis=1).astype(np.int64)
    n_train = dense(parts["y"]).shape[0]
    splits = SplitSet(np.arange(n_train), np.arange(n_train, n_train + 500), order)
    return Dataset(Graph.from_edges(n, src, dst), row_normalize(x), labels, splits, y.shape[1], name=name)


def read_cora(root) -> Dataset:
    """Planetoid pickles if present, else the LINQS export."""
    root = Path(root)
    if (root / "ind.cora.x").exists():
        return read_cora_planetoid(root)
    return read_cora_linqs(root)
