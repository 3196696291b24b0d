"""Hyperparameter presets.

``REFERENCE_HYPERS`` holds the searched optimal settings reported for the
large-graph baselines (lr, weight decay, dropout, epochs, hidden dim,
layers, batch size), keyed by method then dataset.  ``DESK`` holds the
small defaults used for the synthetic fixtures and Cora-sized graphs.
"""

from __future__ import annotations

from .nn import Hyperparams


def _row(lr, wd, dp, ep, hd, nl, bs):
    return {"learning_rate": lr, "weight_decay": wd, "dropout_rate": dp, "epochs": ep, "hidden_dim": hd, "num_layers": nl, "batch_size": bs}


REFERENCE_HYPERS = {
    "graphsage": {
        "flickr": _row(0.0001, 0.0001, 0.5, 50, 512, 4, 1000),
        "reddit": _row(0.0001, 0.0, 0.2, 50, 512, 4, 1000),
        "ogbn-products": _row(0.001, 0.0, 0.5, 50, 512, 4, 1000),
    },
    "fastgcn": {
        "flickr": _row(0.001, 0.0002, 0.1, 50, 512, 2, 5000),
        "reddit": _row(0.01, 0.0, 0.5, 50, 256, 2, 5000),
        "ogbn-products": _row(0.01, 0.0, 0.2, 50, 256, 2, 5000),
    },
    "ladies": {
        "flickr": _row(0.001, 0.0002, 0.1, 50, 512, 2, 5000),
        "reddit": _row(0.01, 0.0001, 0.2, 50, 512, 2, 5000),
        "ogbn-products": _row(0.01, 0.0, 0.2, 30, 256, 2, 5000),
    },
    "clustergcn": {
        "flickr": _row(0.001, 0.0002, 0.2, 30, 256, 2, 5000),
        "reddit": _row(0.0001, 0.0, 0.5, 50, 256, 4, 2000),
        "ogbn-products": _row(0.001, 0.0001, 0.2, 40, 128, 4, 2000),
    },
    "graphsaint": {
        "flickr": _row(0.001, 0.0004, 0.2, 50, 512, 4, 5000),
        "reddit": _row(0.01, 0.0002, 0.7, 30, 128, 2, 5000),
        "ogbn-products": _row(0.01, 0.0, 0.2, 40, 128, 2, 5000),
    },
}

# which baseline family trains the ingredients of each pipeline mode
MODE_METHOD = {
    "node-sample": "graphsage",
    "edge-sample": "graphsaint",
    "layer-sample": "ladies",
    "partition": "clustergcn",
}

SMALL_GRAPH_INGREDIENTS = 50
LARGE_GRAPH_INGREDIENTS = 30


def reference_hypers(method: str, dataset: str = "ogbn-products", seed: int = 0) -> tuple[Hyperparams, dict]:
    """Hyperparams plus architecture hints (hidden_dim, num_layers)."""
    row = REFERENCE_HYPERS[method][dataset]
    hyper = Hyperparams(
        learning_rate=row["learning_rate"],
        weight_decay=row["weight_decay"],
        dropout_rate=row["dropout_rate"],
        batch_size=row["batch_size"],
        epochs=row["epochs"],
        seed=seed,
    )
    return hyper, {"hidden_dim": row["hidden_dim"], "num_layers": row["num_layers"]}


# Kipf & Welling style full-batch GCN settings for Cora-sized graphs
CORA_GCN = Hyperparams(learning_rate=0.01, weight_decay=5e-4, dropout_rate=0.5, batch_size=0, epochs=200, seed=0)

DESK = {
    "full-batch": Hyperparams(learning_rate=0.01, weight_decay=5e-4, dropout_rate=0.5, batch_size=0, epochs=50),
    "node-sample": Hyperparams(learning_rate=0.01, weight_decay=5e-4, dropout_rate=0.5, batch_size=128, epochs=10),
    "edge-sample": Hyperparams(learning_rate=0.01, weight_decay=5e-4, dropout_rate=0.5, batch_size=0, epochs=15),
    "layer-sample": Hyperparams(learning_rate=0.01, weight_decay=5e-4, dropout_rate=0.5, batch_size=128, epochs=10),
    "partition": Hyperparams(learning_rate=0.01, weight_decay=5e-4, dropout_rate=0.5, batch_size=0, epochs=15),
}
