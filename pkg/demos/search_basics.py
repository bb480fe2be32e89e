"""Recover Nguyen-1 from noiseless samples and inspect the Pareto front.

    python demos/search_basics.py
"""

from udfs.augmentation import ParetoFront, tree_model
from udfs.expr_core import render
from udfs.frame_search import SearchConfig, SearchStats, search
from udfs.simplify_equiv import check_recovery, normalize
from udfs.skeleton_sampler import SamplerConfig, search_space_size
from udfs.bench_harness import generate_data, load_problem

problem = load_problem("Nguyen-1")
X, y, X_test, y_test = generate_data(problem, seed=0)
print(f"{problem.name}: y = {problem.expression}")
print(f"construction tuples with 1 variable, 1 parameter slot, i=4: {search_space_size(2, 4)}")

cfg = SearchConfig(SamplerConfig(n_vars=1, n_params=1, n_intermediaries=4, max_skeletons=50_000, seed=0))
stats = SearchStats()
models = search(X, y, cfg, stats)
print(f"skeletons {stats.n_skeletons}, frames scored {stats.frames_scored}, early stop {stats.stopped_early}")

front = ParetoFront()
front.extend(tree_model(m.tree(), X, y) for m in models)
for m in front.models:
    print(f"  complexity {m.complexity:3d}  1-R2 {1 - m.r2:.3e}  {m.rendered}")

best = front.select(30)
verdict = check_recovery(problem.ground_truth, best.tree())
print(f"selected {render(best.tree())}  ->  {normalize(best.tree()).text}")
print(f"recovered: {verdict.recovered} ({verdict.mode}, {verdict.path})")
