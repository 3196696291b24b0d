"""
Greedy interpolation soup, step by step
=======================================

Trains a handful of GCN ingredients from one shared initialisation on a
noisy stochastic block model, then merges them with the greedy
interpolation soup and compares the result with the individual models,
their plain weight average and a logit-averaging ensemble.
"""

import numpy as np

from gnnsoup import Evaluator, Hyperparams, ModelArch, greedy_soup, hyper_grid_expand, train_ingredient
from gnnsoup.datasets import sbm_dataset
from gnnsoup.soup import ensemble_eval, replay, uniform_soup

# %%
# A 400-node, 4-community graph with noisy features, so single models
# disagree with each other.

ds = sbm_dataset(n=400, k=4, p_in=0.06, p_out=0.015, noise=1.2, seed=1)
arch = ModelArch("gcn", 2, 32, ds.num_features, ds.num_classes)
print(f"N={ds.num_nodes} E={ds.graph.num_edges} train/val/test="
      f"{ds.splits.train.size}/{ds.splits.val.size}/{ds.splits.test.size}")

# %%
# Six ingredients.  They share the initial weights (init seed 0) and differ
# in learning rate, dropout and the seed that drives dropout masks.

hypers = hyper_grid_expand(Hyperparams(epochs=40), {"learning_rate": [0.02, 0.005], "dropout_rate": [0.5, 0.2, 0.0]})
ingredients = [train_ingredient(ds, arch, h, init_seed=0, name=str(i)) for i, h in enumerate(hypers)]
ev = Evaluator(ds, arch)
for ing in ingredients:
    print(f"ingredient {ing.name}: lr={ing.hyper.learning_rate:<6} dropout={ing.hyper.dropout_rate:<4}"
          f" val={ing.val_acc:.4f} test={ev.split_accuracy(ing.params, 'test'):.4f}")

# %%
# The soup starts from the best ingredient and sweeps alpha in steps of
# 0.01 for each further one, keeping every step that does not lower
# validation accuracy.

soup = greedy_soup(ingredients, ds)
print(f"\nsoup base: ingredient {soup.base}, accepted steps: {len(soup.lineage)}")
for step in soup.lineage[:8]:
    print(f"  mix in {step.ingredient} at alpha={step.alpha:.2f} -> val {step.val_acc_after:.4f}")

# %%
# The lineage is enough to rebuild the soup exactly.

rebuilt = replay(soup, {i.name: i for i in ingredients})
assert rebuilt.fingerprint() == soup.params.fingerprint()

# %%
# Comparison on the test split.  The ensemble needs one forward pass per
# member; the soup needs one.

rows = {
    "mean of ingredients": np.mean([ev.split_accuracy(i.params, "test") for i in ingredients]),
    "best single (val)": ev.split_accuracy(max(ingredients, key=lambda i: i.val_acc).params, "test"),
    "uniform weight average": ev.split_accuracy(uniform_soup(ingredients), "test"),
    f"ensemble x{len(ingredients)}": ensemble_eval(ingredients, ds, ds.splits.test),
    "greedy soup": ev.split_accuracy(soup.params, "test"),
}
for name, acc in rows.items():
    print(f"{name:<24} {acc:.4f}")
