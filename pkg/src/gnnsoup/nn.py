"""Forward/backward passes for GCN, SGC and mean-aggregator SAGE.

Gradients are derived by hand for the three fixed architectures.  A layer
computes ``Z = (P @ H) @ W + b`` with ``P`` the propagation operator for
that layer; hidden layers apply ReLU and (in training) inverted dropout.
SGC collapses to a linear classifier on ``P^K X``.

Training runs at float32.  Pass ``dtype=np.float64`` through
``init_params`` / ``Trainer`` to switch the whole engine to double
precision (used by the gradient checks).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import Dataset, Graph

log = logging.getLogger(__name__)

KINDS = ("gcn", "sgc", "sage-mean")


class DivergenceError(RuntimeError):
    """Non-finite activations or loss during training."""


@dataclass(frozen=True)
class ModelArch:
    kind: str
    num_layers: int
    hidden_dim: int
    in_dim: int
    out_dim: int
    activation: str = "relu"
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if min(self.hidden_dim, self.in_dim, self.out_dim) < 1:
            raise ValueError("dimensions must be positive")
        if self.activation != "relu":
            raise ValueError("only relu is supported")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def operator_kind(self) -> str:
        return "mean" if self.kind == "sage-mean" else "sym"

    def weight_shapes(self) -> list[tuple[int, int]]:
        if self.kind == "sgc":
            return [(self.in_dim, self.out_dim)]
        dims = [self.in_dim] + [self.hidden_dim] * (self.num_layers - 1) + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    def structure(self) -> tuple:
        """Fields that must agree for two models to be interpolated."""
        return (self.kind, self.num_layers, self.hidden_dim, self.in_dim, self.out_dim, self.activation)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    arch: ModelArch
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        shapes = self.arch.weight_shapes()
        if [w.shape for w in self.weights] != shapes:
            raise ValueError(f"weight shapes {[w.shape for w in self.weights]} do not match {shapes}")
        if [b.shape for b in self.biases] != [(s[1],) for s in shapes]:
            raise ValueError("bias shapes do not match architecture")

    @property
    def dtype(self):
        return self.weights[0].dtype

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"W{i}", w), (f"b{i}", b)]
        return out

    def tensors(self) -> list[np.ndarray]:
        return [t for _, t in self.named_tensors()]

    def copy(self) -> ModelParams:
        return ModelParams(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> ModelParams:
        return ModelParams(
            self.arch,
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256(json.dumps(self.arch.to_dict(), sort_keys=True).encode())
        for name, t in self.named_tensors():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t).tobytes())
        return h.hexdigest()[:16]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout_rate: float = 0.5
    batch_size: int = 512
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Ingredient:
    params: ModelParams
    hyper: Hyperparams
    val_acc: float
    init_fingerprint: str
    name: str = "0"
    stats: dict = field(default_factory=dict)


def init_params(arch: ModelArch, seed: int, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights and zero biases, a pure function of (arch, seed)."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.weight_shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return ModelParams(arch, weights, biases)


# -- propagation -------------------------------------------------------------

Operator = Graph | sp.spmatrix


def _as_csr(op: Operator, dtype) -> sp.csr_matrix:
    m = op.csr if isinstance(op, Graph) else sp.csr_matrix(op)
    return m if m.dtype == dtype else m.astype(dtype)


def layer_operators(adj: Operator | Sequence[Operator], num_layers: int, dtype) -> list[sp.csr_matrix]:
    """One operator per layer: a single graph is shared, a sequence is
    taken as per-layer blocks ordered from the input layer upwards."""
    if isinstance(adj, (Graph, sp.spmatrix)):
        m = _as_csr(adj, dtype)
        return [m] * num_layers
    ops = [_as_csr(a, dtype) for a in adj]
    if len(ops) != num_layers:
        raise ValueError(f"expected {num_layers} layer blocks, got {len(ops)}")
    return ops


def sgc_precompute(adj: Operator | Sequence[Operator], x: np.ndarray, k: int) -> np.ndarray:
    """``A^k X`` by ``k`` successive sparse products."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = x
    for op in layer_operators(adj, k, x.dtype):
        out = np.asarray(op @ out)
    return out


@dataclass
class _Tape:
    props: list
    pre: list
    masks: list
    logits: np.ndarray


def _dropout(h: np.ndarray, rate: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
    if rate <= 0.0:
        return h, None
    keep = 1.0 - rate
    mask = (rng.random(h.shape) < keep).astype(h.dtype) / h.dtype.type(keep)
    return h * mask, mask


def _forward(params, ops, x, train, dropout, rng, cache) -> _Tape:
    arch = params.arch
    dtype = params.dtype
    if x.dtype != dtype:
        x = x.astype(dtype)
    if arch.kind == "sgc":
        if cache is not None and "sgc" in cache:
            p = cache["sgc"]
        else:
            p = x
            for op in ops:
                p = np.asarray(op @ p)
            if cache is not None:
                cache["sgc"] = p
        z = p @ params.weights[0] + params.biases[0]
        return _Tape([p], [z], [], z)

    props, pre, masks = [], [], []
    h = x
    for layer, (op, w, b) in enumerate(zip(ops, params.weights, params.biases)):
        if layer == 0 and cache is not None:
            if "prop0" not in cache:
                cache["prop0"] = np.asarray(op @ h)
            p = cache["prop0"]
        else:
            p = np.asarray(op @ h)
        z = p @ w + b
        props.append(p)
        pre.append(z)
        if layer < arch.num_layers - 1:
            h = np.maximum(z, 0)
            if train:
                h, m = _dropout(h, dropout, rng)
                masks.append(m)
            else:
                masks.append(None)
    return _Tape(props, pre, masks, pre[-1])


def forward(
    params: ModelParams,
    adj,
    x: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float | None = None,
    cache: dict | None = None,
) -> np.ndarray:
    """Logits for every row produced by the last operator.

    ``cache`` (owned by the caller) memoises the input-layer propagation,
    which has no dropout and therefore does not change between steps.
    """
    if x.shape[1] != params.arch.in_dim:
        raise ValueError(f"feature dim {x.shape[1]} != arch in_dim {params.arch.in_dim}")
    ops = layer_operators(adj, params.arch.num_layers, params.dtype)
    if dropout is None:
        dropout = params.arch.dropout_rate
    if train and rng is None:
        raise ValueError("training mode requires an rng")
    tape = _forward(params, ops, x, train, dropout, rng, cache)
    if not np.all(np.isfinite(tape.logits)):
        raise DivergenceError("non-finite logits")
    return tape.logits


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    denom = expz.sum(axis=1, keepdims=True)
    logp = shifted - np.log(denom)
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean(dtype=np.float64))
    grad = expz / denom
    grad[np.arange(n), labels] -= 1
    return loss, grad / logits.dtype.type(n)


@dataclass
class Batch:
    """One training step's inputs.

    ``adj`` is either one operator shared by all layers or a per-layer
    list of (possibly rectangular) blocks; ``x`` rows match the input side,
    ``labels``/``mask`` rows match the output side.
    """

    adj: object
    x: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    cache: dict | None = None
    info: dict = field(default_factory=dict)


def loss_and_grads(
    params: ModelParams,
    batch: Batch,
    weight_decay: float = 0.0,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Masked cross-entropy and gradients of ``CE + wd/2 * ||theta||^2``.

    Returns ``(ce_loss, grads)`` with ``grads`` as ``[(dW0, db0), ...]``.
    """
    arch = params.arch
    if not np.any(batch.mask):
        raise ValueError("batch has no labelled training node")
    train = dropout > 0
    ops = layer_operators(batch.adj, arch.num_layers, params.dtype)
    tape = _forward(params, ops, batch.x, train, dropout, rng, batch.cache)
    if not np.all(np.isfinite(tape.logits)):
        raise DivergenceError("non-finite logits")
    idx = np.flatnonzero(batch.mask)
    loss, g_sel = softmax_cross_entropy(tape.logits[idx], batch.labels[idx])
    dz = np.zeros_like(tape.logits)
    dz[idx] = g_sel

    wd = params.dtype.type(weight_decay)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.weights)
    for layer in range(len(params.weights) - 1, -1, -1):
        w, b = params.weights[layer], params.biases[layer]
        grads[layer] = (tape.props[layer].T @ dz + wd * w, dz.sum(axis=0) + wd * b)
        if layer == 0:
            break
        dh = np.asarray(ops[layer].T @ (dz @ w.T))
        mask = tape.masks[layer - 1]
        if mask is not None:
            dh = dh * mask
        dz = dh * (tape.pre[layer - 1] > 0)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss")
    return loss, grads


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def copy(self) -> AdamState:
        return replace(self, m=[a.copy() for a in self.m], v=[a.copy() for a in self.v])


def adam_update(params: ModelParams, grads, state: AdamState, lr: float):
    """In-place Adam step on every weight and bias tensor."""
    flat = [g for pair in grads for g in pair]
    tensors = params.tensors()
    if not state.m:
        state.m = [np.zeros_like(t) for t in tensors]
        state.v = [np.zeros_like(t) for t in tensors]
    state.step += 1
    dt = params.dtype.type
    b1, b2 = dt(state.beta1), dt(state.beta2)
    c1 = dt(1.0 - state.beta1**state.step)
    c2 = dt(1.0 - state.beta2**state.step)
    lr_, eps = dt(lr), dt(state.eps)
    for t, g, m, v in zip(tensors, flat, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        t -= lr_ * (m / c1) / (np.sqrt(v / c2) + eps)


def train_step(params: ModelParams, batch: Batch, hyper: Hyperparams, opt_state: AdamState, rng) -> float:
    """One Adam step on ``params`` (mutated in place); returns the CE loss."""
    dropout = hyper.dropout_rate if params.arch.kind != "sgc" else 0.0
    loss, grads = loss_and_grads(params, batch, hyper.weight_decay, dropout, rng)
    adam_update(params, grads, opt_state, hyper.learning_rate)
    return loss


class Evaluator:
    """Full-graph eval-mode inference with cached input propagation."""

    def __init__(self, dataset: Dataset, arch: ModelArch, dtype=np.float32):
        self.dataset = dataset
        self.arch = arch
        self.dtype = dtype
        self.op = dataset.operator(arch.operator_kind)
        self.x = dataset.features.astype(dtype)
        self._cache: dict = {}

    def logits(self, params: ModelParams) -> np.ndarray:
        if params.arch.structure() != self.arch.structure():
            raise ValueError("architecture does not match evaluator")
        if params.dtype != self.dtype:
            params = params.astype(self.dtype)
        return forward(params, self.op, self.x, cache=self._cache)

    def accuracy(self, params: ModelParams, nodes) -> float:
        return accuracy_from_logits(self.logits(params), self.dataset.labels, nodes)

    def split_accuracy(self, params: ModelParams, split: str) -> float:
        return self.accuracy(params, getattr(self.dataset.splits, split))


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray, nodes) -> float:
    nodes = np.asarray(nodes)
    if nodes.size == 0:
        raise ValueError("node set must be non-empty")
    pred = np.argmax(logits[nodes], axis=1)  # first max wins ties
    return float(np.mean(pred == labels[nodes]))


def evaluate(params: ModelParams, adj, x, labels, nodes) -> float:
    return accuracy_from_logits(forward(params, adj, x), labels, nodes)


# -- training loop -----------------------------------------------------------


class BatchSource(Protocol):
    def batches(self, epoch: int, rng: np.random.Generator) -> Iterable[Batch]: ...


class FullBatchSource:
    """Whole graph every epoch, loss on the training split."""

    def __init__(self, dataset: Dataset, arch: ModelArch, dtype=np.float32):
        mask = np.zeros(dataset.num_nodes, dtype=bool)
        mask[dataset.splits.train] = True
        self.batch = Batch(
            dataset.operator(arch.operator_kind),
            dataset.features.astype(dtype),
            dataset.labels,
            mask,
            cache={},
        )

    def batches(self, epoch, rng):
        yield self.batch


def step_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, step, 1])


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, 0, 0])


class Trainer:
    """Resumable training run; state is owned by one worker at a time."""

    def __init__(self, params: ModelParams, hyper: Hyperparams, source: BatchSource):
        self.params = params
        self.hyper = hyper
        self.source = source
        self.opt = AdamState()
        self.epoch = 0
        self.losses: list[float] = []
        self.skipped = 0

    def run(self, n_epochs: int):
        for _ in range(n_epochs):
            step = 0
            total = 0.0
            for batch in self.source.batches(self.epoch, epoch_rng(self.hyper.seed, self.epoch)):
                if batch is None:
                    self.skipped += 1
                    continue
                # overflow is caught below as divergence rather than warned about
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = train_step(self.params, batch, self.hyper, self.opt, step_rng(self.hyper.seed, self.epoch, step))
                total += loss
                step += 1
            if step:
                self.losses.append(total / step)
            self.epoch += 1
            if not (np.isfinite(total) and self.params.is_finite()):
                raise DivergenceError(f"parameters became non-finite in epoch {self.epoch - 1}")


def train_ingredient(
    dataset: Dataset,
    arch: ModelArch,
    hyper: Hyperparams,
    init_seed: int,
    batch_source: BatchSource | None = None,
    dtype=np.float32,
    name: str = "0",
    evaluator: Evaluator | None = None,
) -> Ingredient:
    """Train one ingredient from the shared initialisation for ``hyper.epochs``."""
    params = init_params(arch, init_seed, dtype)
    fp = params.fingerprint()
    source = batch_source or FullBatchSource(dataset, arch, dtype)
    trainer = Trainer(params, hyper, source)
    trainer.run(hyper.epochs)
    ev = evaluator or Evaluator(dataset, arch, dtype)
    val = ev.split_accuracy(trainer.params, "val")
    stats = {"final_loss": trainer.losses[-1] if trainer.losses else None, "skipped_batches": trainer.skipped}
    return Ingredient(trainer.params, hyper, val, fp, name=name, stats=stats)
