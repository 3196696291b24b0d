"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the session prints them together at
the end (see ``conftest.py``).  Cora is read from ``$GNNSOUP_CORA_DIR``
or ``data/cora`` next to the repository root, in either the Planetoid or
the LINQS layout.  Without it, criterion 8 is reported as FAIL (not run)
and the test is skipped.
"""

import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gnnsoup.datasets import grid_graph, random_graph, read_cora, sbm_dataset
from gnnsoup.graph import Graph, sym_normalize
from gnnsoup.nn import Evaluator, Hyperparams, Ingredient, ModelArch, ModelParams, forward, train_ingredient
from gnnsoup.partition import edge_cut, load_partition, partition_graph, random_balanced_partition, save_partition
from gnnsoup.pipeline import PipelineConfig, hyper_grid_expand, run_pipeline, run_pipeline_with_communication
from gnnsoup.presets import CORA_GCN, DESK
from gnnsoup.sampling import SamplerConfig, layer_importance, sample_layer_wise
from gnnsoup.soup import ensemble_eval, greedy_soup
from oracles import dense_adjacency, dense_forward, dense_sym_norm, literal_greedy_soup
from test_nn import _grad_check

pytestmark = pytest.mark.slow

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str):
    RESULTS[n] = f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def _modes_cfg(ds, mode):
    hyper = DESK[mode]
    grid = hyper_grid_expand(hyper, {"learning_rate": [0.01, 0.005], "dropout_rate": [0.5, 0.3]}, count=10)
    sampler = {
        "node-sample": SamplerConfig(kind="node", fanout_q=10, batch_size=128),
        "edge-sample": SamplerConfig(kind="edge", edge_budget=1000),
        "layer-sample": SamplerConfig(kind="layer", layer_sizes=(256, 256), batch_size=128),
    }.get(mode)
    arch = ModelArch("gcn", 2, 32, ds.num_features, ds.num_classes)
    return PipelineConfig(arch=arch, hyper_grid=grid, ingredient_count=10, gpu_count=4, mode=mode, sampler=sampler, partition_k=32)


def test_c1_soup_dominance_all_modes(sbm_1000):
    t0 = time.perf_counter()
    rows, ok = [], True
    for mode in ("full-batch", "node-sample", "edge-sample", "layer-sample", "partition"):
        rep = run_pipeline(sbm_1000, _modes_cfg(sbm_1000, mode))
        best = max(r["val_acc"] for r in rep.ingredients)
        ok &= rep.soup_val >= best
        rows.append(f"{mode} {rep.soup_val:.4f}>={best:.4f}")
    secs = time.perf_counter() - t0
    record(1, ok and secs < 300, f"soup val >= best ingredient val in every mode ({'; '.join(rows)}); {secs:.1f}s < 300s")


def test_c2_greedy_oracle_equivalence():
    ds = sbm_dataset(n=100, k=3, p_in=0.12, p_out=0.04, seed=5, noise=1.5)
    arch = ModelArch("gcn", 2, 8, ds.num_features, ds.num_classes)
    ings = [
        train_ingredient(ds, arch, Hyperparams(learning_rate=lr, epochs=15, seed=i + 1), 0, dtype=np.float64, name=str(i))
        for i, lr in enumerate([0.05, 0.02, 0.01])
    ]
    st = greedy_soup(ings, ds)
    models = [(list(i.params.weights), list(i.params.biases)) for i in ings]
    ahat = ds.operator("sym").to_dense()
    soup, acc = literal_greedy_soup(models, [i.val_acc for i in ings], ahat, ds.features.astype(np.float64), ds.labels, ds.splits.val)
    err = max(float(np.max(np.abs(a - b))) for a, b in zip(st.params.weights + st.params.biases, soup[0] + soup[1]))
    record(2, err <= 1e-10 and st.val_acc == acc, f"max |soup - literal oracle| = {err:.2e} <= 1e-10, val {st.val_acc:.4f} == {acc:.4f}")


def test_c3_gradients():
    t0 = time.perf_counter()
    errs = {kind: max(_grad_check(kind)) for kind in ("gcn", "sgc", "sage-mean")}
    secs = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in errs.values()) and secs < 30
    detail = ", ".join(f"{k} {e:.1e}" for k, e in errs.items())
    record(3, ok, f"max relative FD error per model ({detail}) < 1e-4; {secs:.1f}s < 30s")


def test_c4_forward_oracle():
    g = Graph.from_edges(4, [0, 1, 2], [1, 2, 3])
    arch = ModelArch("gcn", 2, 3, 2, 2)
    w0 = np.array([[0.5, -0.2, 0.1], [0.3, 0.8, -0.5]], dtype=np.float32)
    w1 = np.array([[1.0, -1.0], [0.5, 0.25], [-0.75, 0.4]], dtype=np.float32)
    b0 = np.array([0.1, 0.0, -0.1], dtype=np.float32)
    b1 = np.array([0.05, -0.05], dtype=np.float32)
    p = ModelParams(arch, [w0, w1], [b0, b1])
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -0.5]], dtype=np.float32)
    got = forward(p, sym_normalize(g), x)
    ahat = dense_sym_norm(dense_adjacency(4, g.undirected_edges()))
    want = dense_forward("gcn", ahat, x.astype(np.float64), [w0.astype(np.float64), w1.astype(np.float64)], [b0.astype(np.float64), b1.astype(np.float64)])
    err = float(np.max(np.abs(got - want)))
    record(4, err <= 1e-6, f"4-node path GCN vs dense evaluation, max abs diff {err:.1e} <= 1e-6")


def test_c5_layer_sampler():
    g = random_graph(8, 0.45, seed=3)
    op = sym_normalize(g)
    probs = layer_importance(op)
    dense = op.to_dense()
    want_p = (dense**2).sum(axis=1) / (dense**2).sum()
    p_err = float(np.max(np.abs(probs - want_p)))
    x = np.random.default_rng(0).normal(size=(8, 3))
    batch = np.array([0, 1, 2])
    want = (dense @ x)[batch]
    rng = np.random.default_rng(4)
    draws = 50_000
    samples = np.empty((draws, batch.size, 3))
    for t in range(draws):
        lb = sample_layer_wise(g, batch, [2], rng, op, probs)
        samples[t] = lb.blocks[0] @ x[lb.nodes[1]]
    se = samples.std(axis=0, ddof=1) / np.sqrt(draws)
    z = np.abs(samples.mean(axis=0) - want) / np.where(se > 0, se, np.inf)
    exact = np.all(np.abs(samples.mean(axis=0) - want)[se == 0] < 1e-12)
    ok = bool(np.all(z <= 3) and exact and p_err <= 1e-12)
    record(5, ok, f"50k draws, max |mean - AX|/SE = {z.max():.2f} <= 3; importance probs err {p_err:.1e} <= 1e-12")


def test_c6_worker_count_determinism(sbm_1000, tmp_path):
    base = _modes_cfg(sbm_1000, "node-sample")
    blobs, accs = [], []
    for w in (1, 2, 4):
        out = tmp_path / f"w{w}"
        cfg = replace(base, worker_count=w)
        rep = run_pipeline(sbm_1000, cfg, out_dir=out)
        blobs.append([(out / f"ingredient_{i}.ckpt" / "params.bin").read_bytes() for i in range(10)])
        accs.append((rep.soup_val, rep.soup_test, (out / "soup.ckpt" / "params.bin").read_bytes()))
    ok = blobs[0] == blobs[1] == blobs[2] and accs[0] == accs[1] == accs[2]
    record(6, ok, f"worker_count 1/2/4: 10 ingredient checkpoints and soup bit-identical, soup val {accs[0][0]:.4f}")


def test_c7_partitioner(tmp_path):
    g = grid_graph(16)
    p = partition_graph(g, 4)
    rng = np.random.default_rng(0)
    rand = float(np.mean([edge_cut(g, random_balanced_partition(256, 4, rng)) for _ in range(100)]))
    root = save_partition(p, tmp_path / "p")
    back = load_partition(root, graph=g)
    again = save_partition(back, tmp_path / "q")
    same = np.array_equal(back.assignment, p.assignment) and (root / "assignment.bin").read_bytes() == (again / "assignment.bin").read_bytes()
    ok = p.edge_cut <= 0.5 * rand and same
    record(7, ok, f"16x16 grid k=4 cut {p.edge_cut} <= 0.5 x random mean {rand:.1f}; save/load bit-identical={same}")


def _cora_root():
    env = os.environ.get("GNNSOUP_CORA_DIR")
    for cand in ([Path(env)] if env else []) + [Path(__file__).resolve().parents[1] / "data" / "cora"]:
        if (cand / "ind.cora.x").exists() or (cand / "cora.content").exists():
            return cand
    return None


@pytest.fixture(scope="module")
def cora_runs():
    root = _cora_root()
    if root is None:
        return None
    ds = read_cora(root)
    arch = ModelArch("gcn", 2, 64, ds.num_features, ds.num_classes)
    grid = hyper_grid_expand(CORA_GCN, {"learning_rate": [0.01, 0.005], "weight_decay": [5e-4, 1e-3], "dropout_rate": [0.5, 0.6]}, count=10)
    t0 = time.perf_counter()
    reps = [
        run_pipeline(ds, PipelineConfig(arch=arch, hyper_grid=grid, ingredient_count=10, gpu_count=4, shared_init_seed=s))
        for s in range(3)
    ]
    return ds, reps, time.perf_counter() - t0


def test_c8_cora(cora_runs):
    if cora_runs is None:
        RESULTS[8] = "FAIL  criterion  8: not run, Cora not found (set GNNSOUP_CORA_DIR or add data/cora)"
        print(RESULTS[8])
        pytest.skip("Cora dataset not available offline")
    ds, reps, secs = cora_runs
    vanilla = float(np.mean([r.vanilla_mean_test for r in reps]))
    soup = float(np.mean([r.soup_test for r in reps]))
    ok = vanilla >= 0.78 and soup >= vanilla + 0.003 and secs < 600
    record(8, ok, f"Cora N={ds.num_nodes}: vanilla mean test {vanilla:.4f} >= 0.78, soup {soup:.4f} >= vanilla + 0.003; {secs:.0f}s < 600s")


def test_c9_ensemble(sbm_small, cora_runs):
    arch = ModelArch("gcn", 2, 16, sbm_small.num_features, sbm_small.num_classes)
    ing = train_ingredient(sbm_small, arch, Hyperparams(epochs=20, seed=1), 0)
    single = Evaluator(sbm_small, arch).split_accuracy(ing.params, "test")
    copies = [Ingredient(ing.params.copy(), ing.hyper, ing.val_acc, ing.init_fingerprint, name=str(i)) for i in range(5)]
    ens = ensemble_eval(copies, sbm_small, sbm_small.splits.test)
    ok = ens == single
    detail = f"ensemble of 5 identical = single ({ens:.4f} == {single:.4f})"
    if cora_runs is not None:
        _, reps, _ = cora_runs
        detail += "; Cora soup/ensemble test " + ", ".join(f"{r.soup_test:.4f}/{r.ensemble_test:.4f}" for r in reps)
    else:
        detail += "; Cora comparison not run (no data)"
    record(9, ok, detail)


def test_c10_communication_ablation(sbm_small):
    arch = ModelArch("gcn", 2, 16, sbm_small.num_features, sbm_small.num_classes)
    grid = hyper_grid_expand(Hyperparams(epochs=10), {"learning_rate": [0.02, 0.01]}, count=4)
    cfg = PipelineConfig(arch=arch, hyper_grid=grid, ingredient_count=4, gpu_count=2, comm_interval=10)
    free = run_pipeline(sbm_small, replace(cfg, comm_interval=None))
    late = run_pipeline_with_communication(sbm_small, cfg, baseline=free)
    same_free = late.soup_state.params.fingerprint() == free.soup_state.params.fingerprint() and [
        i.params.fingerprint() for i in late.trained
    ] == [i.params.fingerprint() for i in free.trained]

    h = Hyperparams(epochs=10, seed=7)
    cfg1 = PipelineConfig(arch=arch, hyper_grid=[h], ingredient_count=4, gpu_count=2, comm_interval=1)
    every = run_pipeline_with_communication(sbm_small, cfg1)
    solo = train_ingredient(sbm_small, arch, h, 0)
    same_solo = every.soup_state.params.fingerprint() == solo.params.fingerprint()
    record(10, same_free and same_solo, f"T>=epochs equals free run: {same_free}; T=1 identical configs equals solo training: {same_solo}")
