"""Variable augmentation on y = (x0*x1^2 + x0)/x1.

The target needs more intermediary nodes than a cheap plain search offers.
A polynomial regressor scores small parameterless candidates z(x); adding
the best one as a new input column lets the same cheap search finish the job.

    python demos/augmentation_worked_example.py
"""
import numpy as np

from udfs.augmentation import propose_augmentations, solve_with_augmentations
from udfs.expr_core import parse
from udfs.frame_search import SearchConfig
from udfs.simplify_equiv import check_recovery
from udfs.skeleton_sampler import SamplerConfig

rng = np.random.default_rng(0)
X = rng.uniform(1, 5, (500, 2))
y = (X[:, 0] * X[:, 1] ** 2 + X[:, 0]) / X[:, 1]
truth = parse("(x0*x1^2 + x0)/x1")

for aug in propose_augmentations(X, y, 3):
    print(f"candidate z = {aug.rendered:<20} score 1 - R2 = {aug.score:.2e}")

cfg = SearchConfig(SamplerConfig(n_vars=2, n_intermediaries=1, max_skeletons=200_000, seed=0))
for k in (0, 1):
    front, chosen = solve_with_augmentations(X, y, cfg, k)
    ok = check_recovery(truth, chosen.tree()).recovered
    print(f"k={k}: {chosen.rendered:<30} R2 {chosen.r2:.12f}  recovered {ok}")
