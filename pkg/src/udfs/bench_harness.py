"""Bundled benchmark problems, data generation and recovery reports.

The registry lives in ``data/problems.csv`` (suite, name, expression, domain,
n_samples).  A domain is ``lo:hi`` for every variable or a ``;``-separated
list with one interval per variable.  A problem may belong to several suites
(space separated).  Further problems can be added from a file in the same
layout with ``load_registry`` or from the Feynman database layout with
``load_feynman_csv``.
"""
from __future__ import annotations

import csv
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .augmentation import (AugmentationConfig, ParetoFront, RegressorFamily, r_squared,
                           solve_with_augmentations, tree_model)
from .expr_core import ExpressionTree, evaluate_tree, parse, render
from .frame_search import SearchConfig, resolve_workers, search, search_budgets
from .param_opt import GridConfig
from .simplify_equiv import check_recovery, jaccard_index, simplified_complexity
from .skeleton_sampler import SamplerConfig

SUITES = ("nguyen", "univ", "strogatz", "feynman")


@dataclass(frozen=True)
class Problem:
    name: str
    ground_truth: ExpressionTree
    n_vars: int
    domain: tuple[tuple[float, float], ...]
    n_samples: int = 500
    suites: tuple[str, ...] = ()
    expression: str = ""
    var_names: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.domain) != self.n_vars:
            raise ValueError(f"{self.name}: domain has {len(self.domain)} intervals for {self.n_vars} variables")
        if self.ground_truth.n_vars_required() > self.n_vars:
            raise ValueError(f"{self.name}: ground truth uses more than {self.n_vars} variables")
        for lo, hi in self.domain:
            if not lo < hi:
                raise ValueError(f"{self.name}: empty interval ({lo}, {hi})")
        if self.n_samples < 1:
            raise ValueError(f"{self.name}: n_samples must be >= 1")

    def f(self, X) -> tuple[np.ndarray, np.ndarray]:
        return evaluate_tree(self.ground_truth, X)


def _parse_domain(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(";"):
        lo, hi = part.split(":")
        out.append((float(lo), float(hi)))
    return out


def _problem_from_row(row: dict) -> Problem:
    tree = parse(row["expression"])
    dom = _parse_domain(row["domain"])
    n_vars = max(tree.n_vars_required(), len(dom))
    if len(dom) == 1:
        dom = dom * n_vars
    return Problem(row["name"], tree, n_vars, tuple(dom), int(row.get("n_samples") or 500),
                   tuple(row["suite"].split()), row["expression"])


def load_registry(path=None) -> dict[str, Problem]:
    """Problems from a registry file (the bundled one when ``path`` is None)."""
    if path is None:
        text = resources.files("udfs").joinpath("data/problems.csv").read_text()
    else:
        text = Path(path).read_text()
    problems = {}
    for row in csv.DictReader(text.splitlines()):
        p = _problem_from_row(row)
        problems[p.name] = p
    return problems


_REGISTRY: dict[str, Problem] | None = None


def registry() -> dict[str, Problem]:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = load_registry()
    return _REGISTRY


def register(problems) -> None:
    """Add or override problems in the in-process registry."""
    reg = registry()
    for p in (problems.values() if isinstance(problems, dict) else problems):
        reg[p.name] = p


def list_problems(suite: str | None = None) -> list[str]:
    return [n for n, p in registry().items() if suite is None or suite in p.suites]


def load_problem(name: str) -> Problem:
    reg = registry()
    if name in reg:
        return reg[name]
    folded = {n.lower(): n for n in reg}
    if name.lower() in folded:
        return reg[folded[name.lower()]]
    raise KeyError(f"unknown problem {name!r}; available: {', '.join(reg)}")


def load_suite(suite: str) -> list[Problem]:
    names = list_problems(suite)
    if not names:
        raise KeyError(f"unknown or empty suite {suite!r}; bundled suites: {', '.join(SUITES)}")
    return [registry()[n] for n in names]


def load_feynman_csv(path, n_samples: int = 500) -> tuple[list[Problem], dict[str, str]]:
    """Problems from a file in the Feynman database layout.

    Expected columns: ``Filename``, ``Formula``, ``# variables`` and
    ``v{k}_name``, ``v{k}_low``, ``v{k}_high`` per variable.  Rows whose
    formula the grammar cannot express are skipped and returned with the
    reason.
    """
    problems, skipped = [], {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            name = (row.get("Filename") or "").strip()
            if not name:
                continue
            try:
                k = int(float(row["# variables"]))
                names = tuple(row[f"v{j + 1}_name"].strip() for j in range(k))
                dom = tuple((float(row[f"v{j + 1}_low"]), float(row[f"v{j + 1}_high"])) for j in range(k))
                tree = parse(row["Formula"], names={n: j for j, n in enumerate(names)})
                problems.append(Problem(name, tree, k, dom, n_samples, ("feynman",),
                                        row["Formula"], names))
            except (KeyError, ValueError) as exc:
                skipped[name] = str(exc)
    return problems, skipped


# ---------------------------------------------------------------------------
# data


def _draw_valid(problem: Problem, n: int, rng: np.random.Generator, max_rounds: int = 100):
    lo = np.array([d[0] for d in problem.domain])
    hi = np.array([d[1] for d in problem.domain])
    X = rng.uniform(lo, hi, size=(n, problem.n_vars))
    y, ok = problem.f(X)
    for _ in range(max_rounds):
        bad = np.flatnonzero(~ok)
        if bad.size == 0:
            return X, y
        X[bad] = rng.uniform(lo, hi, size=(bad.size, problem.n_vars))
        y[bad], ok[bad] = problem.f(X[bad])
    raise ValueError(f"{problem.name}: ground truth is invalid on too much of its domain")


def generate_data(problem: Problem, n_samples: int | None = None, noise: float = 0.0,
                  seed: int = 0, n_test: int | None = None):
    """Uniform samples from the problem domain: ``(X_train, y_train, X_test, y_test)``.

    Rows where the ground truth is undefined are redrawn.  Training targets
    get Gaussian noise with standard deviation ``noise * std(f(X_train))``;
    test targets are noiseless.  For a fixed seed the inputs and the noise
    direction do not depend on ``noise``.
    """
    if noise < 0:
        raise ValueError("noise level must be >= 0")
    n = n_samples or problem.n_samples
    rng = np.random.default_rng(seed)
    Xtr, ftr = _draw_valid(problem, n, rng)
    Xte, fte = _draw_valid(problem, n_test or n, rng)
    eps = rng.standard_normal(n)
    ytr = ftr + noise * float(np.std(ftr)) * eps if noise > 0 else ftr.copy()
    return Xtr, ytr, Xte, fte


# ---------------------------------------------------------------------------
# regressor


@dataclass(frozen=True)
class RegressorConfig:
    n_intermediaries: int = 5
    max_skeletons: int = 200_000
    n_params: int = 1
    grid: GridConfig = field(default_factory=GridConfig)
    augment: int = 0
    threshold: int = 30
    family: RegressorFamily = field(default_factory=RegressorFamily)
    node_budget: int = 30
    aug_config: AugmentationConfig = field(default_factory=AugmentationConfig)
    screen_factor: float | None = 10.0
    search_workers: int = 1
    n_samples: int | None = None

    def search_config(self, n_vars: int, seed: int) -> SearchConfig:
        sampler = SamplerConfig(n_vars, self.n_params, self.n_intermediaries, 1,
                                self.max_skeletons, seed)
        return SearchConfig(sampler, grid=self.grid, screen_factor=self.screen_factor,
                            workers=self.search_workers)


def fit(X, y, rcfg: RegressorConfig, seed: int = 0):
    """Run the regressor and return ``(front, selected model)``."""
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    cfg = rcfg.search_config(X.shape[1], seed)
    if rcfg.augment > 0:
        return solve_with_augmentations(X, y, cfg, rcfg.augment, rcfg.threshold, rcfg.family,
                                        rcfg.node_budget, replace(rcfg.aug_config, seed=seed))
    front = ParetoFront()
    front.extend(tree_model(m.tree(), X, y) for m in search(X, y, cfg))
    return front, front.select(rcfg.threshold)


def fit_budgets(X, y, rcfg: RegressorConfig, budgets, seed: int = 0) -> dict:
    """Plain ``fit`` at several skeleton budgets in one search pass.

    Returns ``{budget: (front, selected model)}``; each entry equals what
    ``fit`` returns with ``max_skeletons`` set to that budget.
    """
    if rcfg.augment > 0:
        raise ValueError("budget sweeps cover plain search only")
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    out = {}
    for b, models in search_budgets(X, y, rcfg.search_config(X.shape[1], seed), budgets).items():
        front = ParetoFront()
        front.extend(tree_model(m.tree(), X, y) for m in models)
        out[b] = (front, front.select(rcfg.threshold))
    return out


# ---------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class BenchmarkRow:
    problem: str
    noise: float
    repeat: int
    recovered: bool
    jaccard: float
    r2_test: float
    simplified_complexity: float
    wall_time_s: float
    model: str = ""
    error: str | None = None


CSV_COLUMNS = ("problem", "noise", "repeat", "recovered", "jaccard", "r2_test",
               "simplified_complexity", "wall_time_s")


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow] = field(default_factory=list)

    @property
    def recovery_rate(self) -> float:
        return math.fsum(r.recovered for r in self.rows) / len(self.rows) if self.rows else math.nan

    @property
    def mean_jaccard(self) -> float:
        v = [r.jaccard for r in self.rows if not math.isnan(r.jaccard)]
        return math.fsum(v) / len(v) if v else math.nan

    @property
    def median_r2(self) -> float:
        v = [r.r2_test for r in self.rows if not math.isnan(r.r2_test)]
        return float(np.median(v)) if v else math.nan

    @property
    def mean_complexity(self) -> float:
        v = [r.simplified_complexity for r in self.rows if not math.isnan(r.simplified_complexity)]
        return math.fsum(v) / len(v) if v else math.nan

    @property
    def errors(self) -> list[BenchmarkRow]:
        return [r for r in self.rows if r.error is not None]

    def subset(self, problem: str | None = None, noise: float | None = None) -> "BenchmarkReport":
        return BenchmarkReport([r for r in self.rows
                                if (problem is None or r.problem == problem)
                                and (noise is None or r.noise == noise)])

    def summary(self) -> list[dict]:
        """Aggregates per (problem, noise): mean recovery and complexity, median R^2."""
        keys = sorted({(r.problem, r.noise) for r in self.rows})
        out = []
        for p, g in keys:
            sub = self.subset(p, g)
            out.append({"problem": p, "noise": g, "runs": len(sub.rows),
                        "recovery": sub.recovery_rate, "jaccard": sub.mean_jaccard,
                        "median_r2": sub.median_r2, "complexity": sub.mean_complexity,
                        "wall_time_s": math.fsum(r.wall_time_s for r in sub.rows) / len(sub.rows)})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.problem, r.noise, r.repeat, int(r.recovered), r.jaccard,
                            r.r2_test, r.simplified_complexity, round(r.wall_time_s, 4)])


def run_seed(base: int, name: str, repeat: int) -> int:
    """Seed owned by one (problem, repeat) run; shared across noise levels."""
    return int(np.random.SeedSequence([base, zlib.crc32(name.encode()), repeat]).generate_state(1)[0])


def evaluate_model(problem: Problem, model: ExpressionTree, X_test, y_test, seed: int = 0) -> dict:
    verdict = check_recovery(problem.ground_truth, model, domain=problem.domain, seed=seed)
    pred, ok = evaluate_tree(model, X_test)
    r2 = r_squared(pred, y_test) if ok.all() else -math.inf
    return {"recovered": verdict.recovered, "jaccard": jaccard_index(problem.ground_truth, model),
            "r2_test": float(r2), "simplified_complexity": float(simplified_complexity(model))}


def run_one(problem: Problem, noise: float, repeat: int, rcfg: RegressorConfig,
            seed: int = 0) -> BenchmarkRow:
    """One seeded run; failures are captured in the row instead of raised."""
    t0 = time.perf_counter()
    s = run_seed(seed, problem.name, repeat)
    try:
        Xtr, ytr, Xte, yte = generate_data(problem, rcfg.n_samples, noise, s)
        _, model = fit(Xtr, ytr, rcfg, s)
        tree = model.tree()
        m = evaluate_model(problem, tree, Xte, yte, s)
        return BenchmarkRow(problem.name, noise, repeat, wall_time_s=time.perf_counter() - t0,
                            model=render(tree), **m)
    except Exception as exc:  # recorded, the sweep goes on
        return BenchmarkRow(problem.name, noise, repeat, False, math.nan, math.nan, math.nan,
                            time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")


def _run_task(args):
    return run_one(*args)


def run_benchmark(problems, rcfg: RegressorConfig | None = None, noise_levels=(0.0,),
                  repeats: int = 1, seed: int = 0, workers: int = 1, progress=None) -> BenchmarkReport:
    """Run every problem at every noise level ``repeats`` times.

    Runs are independent and may execute in parallel processes; rows come
    back in (problem, noise, repeat) order regardless.  ``progress`` is
    called with each finished row.
    """
    rcfg = rcfg or RegressorConfig()
    problems = [load_problem(p) if isinstance(p, str) else p for p in problems]
    tasks = [(p, float(g), r, rcfg, seed) for p in problems for g in noise_levels for r in range(repeats)]
    workers = resolve_workers(workers)
    rows = []
    if workers <= 1 or len(tasks) <= 1:
        for t in tasks:
            rows.append(run_one(*t))
            if progress:
                progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_task, tasks):
                rows.append(row)
                if progress:
                    progress(row)
    return BenchmarkReport(rows)
