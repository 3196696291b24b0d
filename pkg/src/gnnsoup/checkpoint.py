"""Checkpoint directories: ``header.json`` plus ``params.bin``.

``params.bin`` holds the tensors W0, b0, W1, b1, ... as row-major
little-endian float32, concatenated in manifest order.  Double precision
parameters are narrowed to float32 on save.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Hyperparams, Ingredient, ModelArch, ModelParams


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path,
    params: ModelParams,
    hyper: Hyperparams | None = None,
    init_seed: int | None = None,
    val_acc: float | None = None,
    extra: dict | None = None,
) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest, chunks, offset = [], [], 0
    for name, t in params.named_tensors():
        data = np.ascontiguousarray(t, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "arch": params.arch.to_dict(),
        "hyper": hyper.to_dict() if hyper is not None else None,
        "init_seed": init_seed,
        "val_acc": val_acc,
        "tensors": manifest,
    }
    if extra:
        header.update(extra)
    (root / "header.json").write_text(json.dumps(header, indent=1, sort_keys=True))
    (root / "params.bin").write_bytes(b"".join(chunks))
    return root


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    root = Path(path)
    try:
        header = json.loads((root / "header.json").read_text())
        raw = (root / "params.bin").read_bytes()
        arch = ModelArch(**header["arch"])
        manifest = header["tensors"]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {root}: {exc}") from exc
    tensors = {}
    end = 0
    for entry in manifest:
        shape = tuple(entry["shape"])
        size = 4 * int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start + size > len(raw):
            raise CheckpointError(f"corrupt checkpoint {root}: params.bin truncated")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=size // 4, offset=start).reshape(shape).astype(np.float32)
        end = max(end, start + size)
    if end != len(raw):
        raise CheckpointError(f"corrupt checkpoint {root}: {len(raw) - end} trailing bytes")
    n = len(arch.weight_shapes())
    try:
        params = ModelParams(arch, [tensors[f"W{i}"] for i in range(n)], [tensors[f"b{i}"] for i in range(n)])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {root}: {exc}") from exc
    return params, header


def load_ingredient(path, name: str | None = None) -> Ingredient:
    params, header = load_checkpoint(path)
    hyper = Hyperparams(**header["hyper"]) if header.get("hyper") else Hyperparams()
    return Ingredient(
        params,
        hyper,
        float(header.get("val_acc") or 0.0),
        header.get("init_fingerprint", ""),
        name=name or header.get("name", Path(path).stem),
    )


def save_ingredient(path, ing: Ingredient, init_seed: int | None = None) -> Path:
    return save_checkpoint(
        path,
        ing.params,
        ing.hyper,
        init_seed,
        ing.val_acc,
        extra={"init_fingerprint": ing.init_fingerprint, "name": ing.name},
    )
