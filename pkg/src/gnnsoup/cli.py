"""Command-line entry points: prepare, partition, pipeline, soup, eval, ensemble.

Run ``gnnsoup <command> --help`` for flags.  ``pipeline`` takes a JSON
run config; keys present in the file override the matching flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, load_ingredient, save_checkpoint
from .datasets import read_cora, sbm_dataset, stratified_split
from .graph import Dataset, DatasetError, Graph, SplitSet, load_dataset, save_dataset
from .nn import Evaluator, Hyperparams, ModelArch
from .partition import ClusterBatchConfig, PartitionError, load_partition, partition_graph, save_partition
from .pipeline import PipelineConfig, hyper_grid_expand, run_pipeline, run_pipeline_with_communication
from .sampling import SamplerConfig
from .soup import SoupConfig, SoupError, ensemble_eval, greedy_soup, write_lineage

log = logging.getLogger("gnnsoup")


@dataclass
class RunConfig:
    """Everything ``pipeline`` needs.  Unknown keys are rejected.

    Defaults: 2-layer GCN with 64 hidden units, 10 full-batch ingredients
    dequeued 4 at a time, alpha grid step 0.01, float32.
    """

    dataset: str = ""
    out: str = "runs/pipeline"
    mode: str = "full-batch"
    arch: dict = field(default_factory=lambda: {"kind": "gcn", "num_layers": 2, "hidden_dim": 64})
    ingredient_count: int = 10
    gpu_count: int = 4
    worker_count: int = 1
    executor: str = "thread"
    shared_init_seed: int = 0
    base_hyper: dict = field(default_factory=dict)
    variations: dict = field(default_factory=lambda: {"learning_rate": [0.01, 0.005], "dropout_rate": [0.5, 0.3]})
    sampler: dict = field(default_factory=dict)
    partition: dict = field(default_factory=dict)
    comm_interval: int | None = None
    alpha_step: float = 0.01
    soup_commit: str = "literal"
    precision: str = "float32"

    @classmethod
    def from_dict(cls, doc: dict, base: RunConfig | None = None) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = base or cls()
        for k, v in doc.items():
            setattr(cfg, k, v)
        return cfg

    def pipeline_config(self, ds: Dataset) -> PipelineConfig:
        arch = ModelArch(in_dim=ds.num_features, out_dim=ds.num_classes, **self.arch)
        base = Hyperparams(**{"dropout_rate": arch.dropout_rate, **self.base_hyper})
        grid = hyper_grid_expand(base, self.variations, self.ingredient_count) if self.variations else [base]
        sampler = None
        if self.mode in ("node-sample", "edge-sample", "layer-sample"):
            kind = self.mode.split("-")[0]
            sampler = SamplerConfig(kind=kind, **self.sampler)
        part = dict(self.partition)
        part.pop("path", None)
        k = part.pop("k", 32)
        return PipelineConfig(
            arch=arch,
            hyper_grid=grid,
            ingredient_count=self.ingredient_count,
            gpu_count=self.gpu_count,
            worker_count=self.worker_count,
            mode=self.mode,
            shared_init_seed=self.shared_init_seed,
            sampler=sampler,
            partition_k=k,
            cluster=ClusterBatchConfig(**part),
            comm_interval=self.comm_interval,
            soup=SoupConfig(self.alpha_step, self.soup_commit),
            executor=self.executor,
            dtype=self.precision,
        )


# -- commands ----------------------------------------------------------------


def _read_raw(args) -> Dataset:
    if args.sbm is not None:
        kv = dict(item.split("=", 1) for item in args.sbm)
        return sbm_dataset(
            n=int(kv.get("n", 1000)),
            k=int(kv.get("k", 4)),
            p_in=float(kv.get("p_in", 0.05)),
            p_out=float(kv.get("p_out", 0.005)),
            seed=args.seed,
        )
    if args.cora is not None:
        return read_cora(args.cora)
    for name in ("edges", "features", "labels"):
        if getattr(args, name) is None:
            raise DatasetError(f"--{name} is required without --sbm/--cora")
    for name in ("edges", "features", "labels"):
        if not Path(getattr(args, name)).is_file():
            raise DatasetError(f"{getattr(args, name)}: missing file")
    src, dst = [], []
    with open(args.edges) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                src.append(int(parts[0]))
                dst.append(int(parts[1]))
            except (ValueError, IndexError):
                raise DatasetError(f"{args.edges}:{lineno}: expected two integer node ids") from None
    if str(args.features).endswith(".npy"):
        x = np.load(args.features).astype(np.float32)
    else:
        try:
            x = np.loadtxt(args.features, dtype=np.float32, ndmin=2)
        except ValueError as exc:
            raise DatasetError(f"{args.features}: {exc}") from None
    try:
        y = np.loadtxt(args.labels, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise DatasetError(f"{args.labels}: {exc}") from None
    n = x.shape[0]
    if y.shape[0] != n:
        raise DatasetError(f"{args.labels}: label count mismatch ({y.shape[0]} labels, {n} feature rows)")
    if src and max(max(src), max(dst)) >= n:
        raise DatasetError(f"{args.edges}: node id out of range [0, {n})")
    splits = stratified_split(y, seed=args.seed)
    return Dataset(Graph.from_edges(n, src, dst), x, y, splits, int(y.max()) + 1, name=Path(args.out).name)


def cmd_prepare(args) -> int:
    ds = _read_raw(args)
    if args.splits is not None:
        doc = json.loads(Path(args.splits).read_text())
        ds = Dataset(ds.graph, ds.features, ds.labels, SplitSet(doc["train"], doc["val"], doc["test"]), ds.num_classes, ds.name)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: N={ds.num_nodes} E={ds.graph.num_edges} features={ds.num_features} classes={ds.num_classes}")
    return 0


def cmd_partition(args) -> int:
    ds = load_dataset(args.dataset)
    p = partition_graph(ds.graph, args.k)
    save_partition(p, args.out)
    sizes = p.sizes()
    print(f"wrote {args.out}: k={p.num_clusters} edge_cut={p.edge_cut} sizes min/max={sizes.min()}/{sizes.max()}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = RunConfig()
    for name in ("dataset", "out", "mode", "ingredient_count", "worker_count", "gpu_count", "comm_interval"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if args.partition is not None:
        cfg.partition = {**cfg.partition, "path": args.partition}
    if args.config is not None:
        cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text()), cfg)
    if not cfg.dataset:
        raise ValueError("no dataset given (--dataset or config key 'dataset')")
    ds = load_dataset(cfg.dataset)
    pcfg = cfg.pipeline_config(ds)
    part = None
    if pcfg.mode == "partition" and cfg.partition.get("path"):
        part = load_partition(cfg.partition["path"], graph=ds.graph)
        if part.num_clusters != pcfg.partition_k and "k" in cfg.partition:
            raise ValueError(f"saved partition has k={part.num_clusters} but config asks for k={pcfg.partition_k}")
    if pcfg.comm_interval is not None:
        report = run_pipeline_with_communication(ds, pcfg, out_dir=cfg.out, partition=part)
    else:
        report = run_pipeline(ds, pcfg, out_dir=cfg.out, partition=part)
    print(report.table())
    if report.sampler_stats:
        print("sampler: " + ", ".join(f"{k}={v:.1f}" if isinstance(v, float) else f"{k}={v}" for k, v in report.sampler_stats.items()))
    if report.skipped:
        print(f"skipped {len(report.skipped)} diverged ingredient(s)")
    print(f"report: {Path(cfg.out) / 'report.json'}")
    return 0


def cmd_soup(args) -> int:
    ds = load_dataset(args.dataset)
    ings = [load_ingredient(p, name=str(i)) for i, p in enumerate(args.checkpoints)]
    state = greedy_soup(ings, ds, SoupConfig(args.alpha_step, args.commit))
    ev = Evaluator(ds, state.params.arch)
    save_checkpoint(args.out, state.params, None, None, state.val_acc, extra={"base": state.base, "init_fingerprint": state.init_fingerprint})
    write_lineage(state, Path(args.out) / "lineage.json")
    print(f"soup val={state.val_acc:.4f} test={ev.split_accuracy(state.params, 'test'):.4f} accepted steps={len(state.lineage)}")
    return 0


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    params, _ = load_checkpoint(args.checkpoint)
    if params.arch.in_dim != ds.num_features or params.arch.out_dim != ds.num_classes:
        raise ValueError(
            f"checkpoint dims ({params.arch.in_dim}->{params.arch.out_dim}) do not match dataset "
            f"({ds.num_features}->{ds.num_classes})"
        )
    ev = Evaluator(ds, params.arch)
    print(f"val={ev.split_accuracy(params, 'val'):.6f} test={ev.split_accuracy(params, 'test'):.6f}")
    return 0


def cmd_ensemble(args) -> int:
    ds = load_dataset(args.dataset)
    ings = [load_ingredient(p, name=str(i)) for i, p in enumerate(args.checkpoints)]
    val = ensemble_eval(ings, ds, ds.splits.val)
    test = ensemble_eval(ings, ds, ds.splits.test)
    print(f"ensemble of {len(ings)}: val={val:.6f} test={test:.6f} (inference cost x{len(ings)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gnnsoup", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="write a canonical dataset directory")
    p.add_argument("--edges")
    p.add_argument("--features", help=".npy or whitespace text, one row per node")
    p.add_argument("--labels")
    p.add_argument("--splits", help="JSON with train/val/test id lists (default: stratified 60/20/20)")
    p.add_argument("--cora", help="directory holding the Planetoid ind.cora.* files or cora.content + cora.cites")
    p.add_argument("--sbm", nargs="*", metavar="KEY=VALUE", help="synthetic SBM, e.g. n=1000 k=4 p_in=0.05 p_out=0.005")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("partition", help="k-way partition a dataset and save it")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("pipeline", help="train ingredients and soup them")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--mode", choices=["full-batch", "node-sample", "edge-sample", "layer-sample", "partition"])
    p.add_argument("--ingredient-count", dest="ingredient_count", type=int)
    p.add_argument("--worker-count", dest="worker_count", type=int)
    p.add_argument("--gpu-count", dest="gpu_count", type=int)
    p.add_argument("--comm-interval", dest="comm_interval", type=int)
    p.add_argument("--partition", help="saved partition directory for partition mode (computed if omitted)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("soup", help="greedy soup over existing checkpoints")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha-step", dest="alpha_step", type=float, default=0.01)
    p.add_argument("--commit", choices=["literal", "best"], default="literal")
    p.add_argument("checkpoints", nargs="+")
    p.set_defaults(func=cmd_soup)

    p = sub.add_parser("eval", help="val/test accuracy of a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="logit-averaging ensemble of checkpoints")
    p.add_argument("--dataset", required=True)
    p.add_argument("checkpoints", nargs="+")
    p.set_defaults(func=cmd_ensemble)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, CheckpointError, PartitionError, SoupError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
