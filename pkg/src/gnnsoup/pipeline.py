"""Communication-free ingredient training and incremental souping.

Ingredients are dequeued ``gpu_count`` at a time, trained in isolation
(each one a pure function of its config) on a pool of ``worker_count``
threads or processes, and folded into the soup once the whole group has
finished.  Merge cadence depends only on ``gpu_count``, never on the
physical worker count, so results do not change with parallelism.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint, save_ingredient
from .graph import Dataset
from .nn import (
    DivergenceError,
    Evaluator,
    FullBatchSource,
    Hyperparams,
    Ingredient,
    ModelArch,
    Trainer,
    init_params,
)
from .partition import ClusterBatchConfig, ClusterBatchSource, PartitionMap, load_partition, partition_graph, save_partition
from .sampling import SamplerConfig, make_source
from .soup import SoupConfig, SoupState, ensemble_eval, greedy_soup, incremental_soup, write_lineage

log = logging.getLogger(__name__)

MODES = ("full-batch", "node-sample", "edge-sample", "layer-sample", "partition")
_SAMPLER_OF_MODE = {"node-sample": "node", "edge-sample": "edge", "layer-sample": "layer"}
HYPER_AXES = ("seed", "batch_size", "learning_rate", "weight_decay", "dropout_rate", "epochs")


class PipelineError(RuntimeError):
    pass


def hyper_grid_expand(base: Hyperparams, variations: dict, count: int | None = None, seed_start: int = 1) -> list[Hyperparams]:
    """Cartesian product of ``variations`` (last axis varies fastest),
    cycled or truncated to ``count`` entries.

    Unless ``seed`` is itself an axis, entry ``i`` gets training seed
    ``seed_start + i``.
    """
    if not variations or any(len(v) == 0 for v in variations.values()):
        raise ValueError("empty hyperparameter grid")
    unknown = set(variations) - set(HYPER_AXES)
    if unknown:
        raise ValueError(f"unknown hyperparameter axes: {sorted(unknown)}")
    axes = list(variations)
    combos = [dict(zip(axes, vals)) for vals in itertools.product(*(variations[a] for a in axes))]
    n = len(combos) if count is None else count
    out = []
    for i in range(n):
        h = replace(base, **combos[i % len(combos)])
        if "seed" not in variations:
            h = replace(h, seed=seed_start + i)
        out.append(h)
    return out


@dataclass
class PipelineConfig:
    arch: ModelArch
    hyper_grid: list[Hyperparams]
    ingredient_count: int = 10
    gpu_count: int = 4
    worker_count: int = 1
    mode: str = "full-batch"
    shared_init_seed: int = 0
    sampler: SamplerConfig | None = None
    partition_k: int = 32
    cluster: ClusterBatchConfig = field(default_factory=ClusterBatchConfig)
    comm_interval: int | None = None
    soup: SoupConfig = field(default_factory=SoupConfig)
    executor: str = "thread"
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.worker_count < 1 or self.gpu_count < 1 or self.ingredient_count < 1:
            raise ValueError("counts must be positive")
        if not self.hyper_grid:
            raise ValueError("hyper_grid must not be empty")
        if self.mode in _SAMPLER_OF_MODE:
            if self.sampler is None:
                self.sampler = SamplerConfig(kind=_SAMPLER_OF_MODE[self.mode])
            elif self.sampler.kind != _SAMPLER_OF_MODE[self.mode]:
                raise ValueError(f"mode {self.mode} needs a {_SAMPLER_OF_MODE[self.mode]} sampler")
        if self.executor not in ("thread", "process"):
            raise ValueError("executor must be 'thread' or 'process'")
        if self.comm_interval is not None and self.comm_interval < 1:
            raise ValueError("comm_interval must be positive")

    def hypers(self) -> list[Hyperparams]:
        """Hyperparameters for each ingredient; the grid is cycled."""
        g = self.hyper_grid
        return [g[i % len(g)] for i in range(self.ingredient_count)]

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def metadata(self) -> dict:
        d = {
            "mode": self.mode,
            "arch": self.arch.to_dict(),
            "ingredient_count": self.ingredient_count,
            "gpu_count": self.gpu_count,
            "shared_init_seed": self.shared_init_seed,
            "comm_interval": self.comm_interval,
            "alpha_step": self.soup.alpha_step,
            "soup_commit": self.soup.commit,
            "dtype": self.dtype,
        }
        if self.sampler is not None and self.mode in _SAMPLER_OF_MODE:
            d["sampler"] = asdict(self.sampler)
        if self.mode == "partition":
            d["partition"] = {"k": self.partition_k, **asdict(self.cluster)}
        return d


@dataclass
class SoupReport:
    ingredients: list[dict]
    lineage: list[dict]
    soup_base: str
    soup_val: float
    soup_test: float
    best_single: dict
    vanilla_mean_test: float
    vanilla_mean_val: float
    ensemble_val: float
    ensemble_test: float
    metadata: dict
    sampler_stats: dict | None = None
    ablation: dict | None = None
    skipped: list[dict] = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    soup_state: SoupState | None = field(default=None, repr=False)
    trained: list[Ingredient] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__ if f not in ("soup_state", "trained")}

    def content_hash(self) -> str:
        d = self.to_dict()
        d.pop("timing", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def table(self) -> str:
        rows = [
            ("vanilla mean", self.vanilla_mean_val, self.vanilla_mean_test),
            (f"best single ({self.best_single['name']})", self.best_single["val_acc"], self.best_single["test_acc"]),
            (f"ensemble x{len(self.ingredients)}", self.ensemble_val, self.ensemble_test),
            ("greedy soup", self.soup_val, self.soup_test),
        ]
        if self.ablation is not None:
            rows.append((f"soup, comm every {self.ablation['comm_interval']} ep", self.ablation["soup_val"], self.ablation["soup_test"]))
        width = max(len(r[0]) for r in rows)
        lines = [f"{'model':<{width}}  {'val':>7}  {'test':>7}", "-" * (width + 18)]
        lines += [f"{name:<{width}}  {v:7.4f}  {t:7.4f}" for name, v, t in rows]
        if self.ablation is not None:
            lines.append(f"{'delta test (comm - free)':<{width}}  {'':>7}  {self.ablation['delta_test']:+7.4f}")
        return "\n".join(lines)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        (out / "report.txt").write_text(self.table() + "\n")
        with open(out / "ingredients.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "val_acc", "test_acc", "final_loss", *HYPER_AXES])
            for r in self.ingredients:
                w.writerow([r["name"], r["val_acc"], r["test_acc"], r["final_loss"], *(r["hyper"][a] for a in HYPER_AXES)])
        return out / "report.json"


# -- ingredient training -----------------------------------------------------


def _make_source(dataset: Dataset, cfg: PipelineConfig, partition: PartitionMap | None):
    dtype = cfg.np_dtype
    if cfg.mode == "full-batch":
        return FullBatchSource(dataset, cfg.arch, dtype)
    if cfg.mode == "partition":
        return ClusterBatchSource(dataset, cfg.arch, partition, cfg.cluster, dtype)
    return make_source(dataset, cfg.arch, cfg.sampler, dtype)


@dataclass
class _Job:
    index: int
    hyper: Hyperparams


def _new_trainer(dataset, cfg, partition, job: _Job) -> Trainer:
    params = init_params(cfg.arch, cfg.shared_init_seed, cfg.np_dtype)
    return Trainer(params, job.hyper, _make_source(dataset, cfg, partition))


def _finish(trainer: Trainer, job: _Job, fingerprint: str, evaluator: Evaluator, seconds: float) -> Ingredient:
    val = evaluator.split_accuracy(trainer.params, "val")
    stats = {
        "final_loss": trainer.losses[-1] if trainer.losses else None,
        "skipped_batches": trainer.skipped,
        "seconds": seconds,
    }
    summary = getattr(trainer.source, "summary", None)
    if summary is not None:
        stats["sampler"] = summary()
    return Ingredient(trainer.params, job.hyper, val, fingerprint, name=str(job.index), stats=stats)


def _train_job(args) -> Ingredient | dict:
    dataset, cfg, partition, job, fingerprint = args
    t0 = time.perf_counter()
    try:
        trainer = _new_trainer(dataset, cfg, partition, job)
        trainer.run(job.hyper.epochs)
        return _finish(trainer, job, fingerprint, Evaluator(dataset, cfg.arch, cfg.np_dtype), time.perf_counter() - t0)
    except DivergenceError as exc:
        return {"index": job.index, "reason": str(exc)}


def _prepare_partition(dataset, cfg, out_dir, partition):
    if cfg.mode != "partition":
        return None
    if partition is not None:
        if partition.num_nodes != dataset.num_nodes:
            raise PipelineError("partition does not match dataset")
        return partition
    path = Path(out_dir) / "partition" if out_dir is not None else None
    if path is not None and (path / "header.json").exists():
        return load_partition(path, graph=dataset.graph)
    p = partition_graph(dataset.graph, cfg.partition_k)
    if path is not None:
        save_partition(p, path)
    return p


def _groups(n: int, size: int) -> list[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _executor(cfg: PipelineConfig):
    cls = ThreadPoolExecutor if cfg.executor == "thread" else ProcessPoolExecutor
    return cls(max_workers=cfg.worker_count)


def train_ingredients(dataset: Dataset, cfg: PipelineConfig, partition=None):
    """Yield ``(group_results, skipped)`` per dequeued group, in order."""
    fingerprint = init_params(cfg.arch, cfg.shared_init_seed, cfg.np_dtype).fingerprint()
    jobs = [_Job(i, h) for i, h in enumerate(cfg.hypers())]
    with _executor(cfg) as pool:
        for grp in _groups(len(jobs), cfg.gpu_count):
            args = [(dataset, cfg, partition, jobs[i], fingerprint) for i in grp]
            results = list(pool.map(_train_job, args))
            done = [r for r in results if isinstance(r, Ingredient)]
            failed = [r for r in results if not isinstance(r, Ingredient)]
            for f in failed:
                log.warning("ingredient %s diverged and is skipped: %s", f["index"], f["reason"])
            yield done, failed


def _merge_groups(groups, dataset, cfg, evaluator):
    state, trained, skipped = None, [], []
    for done, failed in groups:
        trained += done
        skipped += failed
        state = incremental_soup(state, done, cfg=cfg.soup, evaluator=evaluator)
    if state is None:
        raise PipelineError("every ingredient diverged")
    return state, trained, skipped


def _report(dataset, cfg, evaluator, state, trained, skipped, timing) -> SoupReport:
    rows = []
    for ing in trained:
        rows.append(
            {
                "name": ing.name,
                "hyper": ing.hyper.to_dict(),
                "val_acc": ing.val_acc,
                "test_acc": evaluator.split_accuracy(ing.params, "test"),
                "seconds": ing.stats.get("seconds"),
                "final_loss": ing.stats.get("final_loss"),
            }
        )
    # timing lives in its own field so report hashes stay reproducible
    timing = dict(timing)
    timing["ingredient_seconds"] = {r["name"]: r.pop("seconds") for r in rows}
    best = max(rows, key=lambda r: (r["val_acc"], -int(r["name"])))
    test_nodes = dataset.splits.test
    sampler_stats = None
    if cfg.mode != "full-batch":
        per = [ing.stats["sampler"] for ing in trained if "sampler" in ing.stats]
        if per:
            keys = [k for k, v in per[0].items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
            sampler_stats = {k: float(np.mean([p[k] for p in per])) for k in keys}
            sampler_stats["kind"] = per[0].get("kind")
    return SoupReport(
        ingredients=rows,
        lineage=state.lineage_records(),
        soup_base=state.base,
        soup_val=state.val_acc,
        soup_test=evaluator.split_accuracy(state.params, "test"),
        best_single={"name": best["name"], "val_acc": best["val_acc"], "test_acc": best["test_acc"]},
        vanilla_mean_test=float(np.mean([r["test_acc"] for r in rows])),
        vanilla_mean_val=float(np.mean([r["val_acc"] for r in rows])),
        ensemble_val=ensemble_eval(trained, dataset, dataset.splits.val, evaluator),
        ensemble_test=ensemble_eval(trained, dataset, test_nodes, evaluator),
        metadata=cfg.metadata(),
        sampler_stats=sampler_stats,
        skipped=skipped,
        timing=timing,
        soup_state=state,
        trained=trained,
    )


def _write_outputs(report: SoupReport, cfg: PipelineConfig, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ing in report.trained:
        save_ingredient(out / f"ingredient_{ing.name}.ckpt", ing, cfg.shared_init_seed)
    st = report.soup_state
    save_checkpoint(
        out / "soup.ckpt",
        st.params,
        None,
        cfg.shared_init_seed,
        st.val_acc,
        extra={"init_fingerprint": st.init_fingerprint, "name": "soup", "base": st.base},
    )
    write_lineage(st, out / "soup.ckpt" / "lineage.json")
    report.write(out)


def run_pipeline(dataset: Dataset, cfg: PipelineConfig, out_dir=None, partition: PartitionMap | None = None) -> SoupReport:
    """Train every ingredient independently and soup them group by group."""
    t0 = time.perf_counter()
    partition = _prepare_partition(dataset, cfg, out_dir, partition)
    evaluator = Evaluator(dataset, cfg.arch, cfg.np_dtype)
    state, trained, skipped = _merge_groups(train_ingredients(dataset, cfg, partition), dataset, cfg, evaluator)
    report = _report(dataset, cfg, evaluator, state, trained, skipped, {"total_seconds": time.perf_counter() - t0})
    if out_dir is not None:
        _write_outputs(report, cfg, out_dir)
    return report


def run_pipeline_with_communication(
    dataset: Dataset,
    cfg: PipelineConfig,
    out_dir=None,
    partition: PartitionMap | None = None,
    baseline: SoupReport | None = None,
) -> SoupReport:
    """Ablation: every ``comm_interval`` epochs all workers stop, the
    coordinator greedily soups their current weights and broadcasts the
    result back; optimiser state stays local.  No sync fires at or after
    the final epoch, so the closing merge matches the free pipeline."""
    if cfg.comm_interval is None:
        raise ValueError("comm_interval must be set for the communication ablation")
    t0 = time.perf_counter()
    partition = _prepare_partition(dataset, cfg, out_dir, partition)
    evaluator = Evaluator(dataset, cfg.arch, cfg.np_dtype)
    fingerprint = init_params(cfg.arch, cfg.shared_init_seed, cfg.np_dtype).fingerprint()
    jobs = [_Job(i, h) for i, h in enumerate(cfg.hypers())]
    trainers = {j.index: _new_trainer(dataset, cfg, partition, j) for j in jobs}
    failed: dict[int, dict] = {}
    horizon = max(j.hyper.epochs for j in jobs)
    syncs = 0
    t = 0
    while t < horizon:
        span = min(cfg.comm_interval, horizon - t)
        for j in jobs:
            if j.index in failed:
                continue
            tr = trainers[j.index]
            try:
                tr.run(max(0, min(span, j.hyper.epochs - tr.epoch)))
            except DivergenceError as exc:
                failed[j.index] = {"index": j.index, "reason": str(exc)}
        t += span
        if t >= horizon:
            break
        live = [j for j in jobs if j.index not in failed]
        if not live:
            break
        current = [_finish(trainers[j.index], j, fingerprint, evaluator, 0.0) for j in live]
        merged = greedy_soup(current, cfg=cfg.soup, evaluator=evaluator)
        for j in live:
            trainers[j.index].params = merged.params.copy()
        syncs += 1

    def groups():
        for grp in _groups(len(jobs), cfg.gpu_count):
            done = [_finish(trainers[i], jobs[i], fingerprint, evaluator, 0.0) for i in grp if i not in failed]
            yield done, [failed[i] for i in grp if i in failed]

    state, trained, skipped = _merge_groups(groups(), dataset, cfg, evaluator)
    report = _report(dataset, cfg, evaluator, state, trained, skipped, {"total_seconds": time.perf_counter() - t0})
    if baseline is None:
        baseline = run_pipeline(dataset, replace(cfg, comm_interval=None), partition=partition)
    report.ablation = {
        "comm_interval": cfg.comm_interval,
        "syncs": syncs,
        "soup_val": report.soup_val,
        "soup_test": report.soup_test,
        "free_soup_val": baseline.soup_val,
        "free_soup_test": baseline.soup_test,
        "delta_val": report.soup_val - baseline.soup_val,
        "delta_test": report.soup_test - baseline.soup_test,
    }
    if out_dir is not None:
        _write_outputs(report, cfg, out_dir)
    return report
