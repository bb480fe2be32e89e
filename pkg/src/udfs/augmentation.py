"""Derived input variables, polynomial scoring and Pareto model selection.

A derived variable ``z`` is a parameterless expression over a few inputs.  It
is useful when a plain polynomial regressor on ``(x, z)`` fits the targets
much better than one on ``x`` alone.  The best ``k`` candidates each define
an augmented regression problem that is solved by frame search; the models
found are rewritten in the original variables and pooled with the models of
the plain problem on a Pareto front over (1 - R^2, complexity).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel
from .expr_core import (ExpressionDag, ExpressionTree, const, dag_complexity, evaluate_tree,
                        expand_to_tree, op, power, render, tree_to_dag, var)
from .frame_search import FittedModel, SearchConfig, search
from .skeleton_sampler import SamplerConfig, code_to_dag, sample_unique_codes


def r_squared(predictions, Y) -> float:
    """Coefficient of determination.

    With zero target variance the value is undefined; it is reported as 1.0
    when the residuals are exactly zero and as ``-inf`` otherwise.
    """
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(Y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError("predictions and targets differ in length")
    rss = float(np.sum((p - y) ** 2))
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss == 0.0:
        return 1.0 if rss == 0.0 else -np.inf
    return 1.0 - rss / tss


# ---------------------------------------------------------------------------
# polynomial regressors


@dataclass(frozen=True)
class RegressorFamily:
    kind: str = "polynomial"
    degree: int = 3

    def __post_init__(self):
        if self.kind != "polynomial":
            raise ValueError(f"unsupported regressor family {self.kind!r}")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    def exponents(self, n_features: int) -> list[tuple[int, ...]]:
        """Monomial exponent vectors of total degree <= degree, constant first."""
        out = []
        for d in range(self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(n_features), d):
                e = [0] * n_features
                for j in combo:
                    e[j] += 1
                out.append(tuple(e))
        return out


def _design(F: np.ndarray, exps: list[tuple[int, ...]]) -> np.ndarray:
    cols = []
    for e in exps:
        c = np.ones(F.shape[0])
        for j, k in enumerate(e):
            if k:
                c = c * F[:, j] ** k
        cols.append(c)
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class PolynomialFit:
    exponents: tuple[tuple[int, ...], ...]
    coef: np.ndarray            # on raw (unscaled) features

    def predict(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=np.float64)
        return _design(F, list(self.exponents)) @ self.coef

    def tree(self, feature_trees: list[ExpressionTree]) -> ExpressionTree:
        """The polynomial as an expression over the given feature expressions."""
        terms = []
        for e, c in zip(self.exponents, self.coef):
            if c == 0.0:
                continue
            factors = [power(feature_trees[j], k) for j, k in enumerate(e) if k]
            t = const(float(c))
            for f in factors:
                t = op("mul", t, f)
            if factors and c == 1.0:
                t = factors[0]
                for f in factors[1:]:
                    t = op("mul", t, f)
            terms.append(t)
        if not terms:
            return const(0.0)
        out = terms[0]
        for t in terms[1:]:
            out = op("add", out, t)
        return out


def _lstsq(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.mean(A * A, axis=0))
    scale[scale == 0] = 1.0
    beta, *_ = np.linalg.lstsq(A / scale, y, rcond=None)
    return beta / scale


def fit_polynomial(F, y, family: RegressorFamily, sparse_tol: float | None = None) -> PolynomialFit:
    """Least-squares polynomial fit on the columns of ``F``.

    With ``sparse_tol`` set, monomials whose contribution (coefficient times
    column RMS) is below ``sparse_tol * std(y)`` are dropped and the rest refit.
    """
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    exps = family.exponents(F.shape[1])
    A = _design(F, exps)
    coef = _lstsq(A, y)
    if sparse_tol is not None:
        ref = max(float(np.std(y)), 1e-300)
        for _ in range(2):
            contrib = np.abs(coef) * np.sqrt(np.mean(A * A, axis=0))
            keep = contrib >= sparse_tol * ref
            if keep.all() or not keep.any():
                break
            sub = _lstsq(A[:, keep], y)
            coef = np.zeros_like(coef)
            coef[keep] = sub
    return PolynomialFit(tuple(exps), coef)


def polynomial_score(F, y, family: RegressorFamily) -> float:
    """1 - R^2 of the best polynomial of the family on features ``F``."""
    try:
        fit = fit_polynomial(F, y, family)
    except np.linalg.LinAlgError:
        return np.inf
    pred = fit.predict(F)
    if not np.all(np.isfinite(pred)):
        return np.inf
    return max(0.0, 1.0 - r_squared(pred, y))


def _batched_scores(X: np.ndarray, Z: np.ndarray, y: np.ndarray, family: RegressorFamily) -> np.ndarray:
    """Approximate 1 - R^2 for many candidate columns at once (normal equations)."""
    exps = family.exponents(X.shape[1] + 1)
    base = [e for e in exps if e[-1] == 0]
    zexp = [e for e in exps if e[-1] > 0]
    A0 = _design(X, [e[:-1] for e in base])                          # (n, f0)
    Ax = _design(X, [e[:-1] for e in zexp])                          # (n, fz)
    zpow = np.array([e[-1] for e in zexp])
    tss = float(np.sum((y - y.mean()) ** 2))
    out = np.empty(Z.shape[0])
    for lo in range(0, Z.shape[0], 256):
        Zb = Z[lo:lo + 256]                                          # (B, n)
        Az = Ax[None, :, :] * Zb[:, :, None] ** zpow[None, None, :]  # (B, n, fz)
        A = np.concatenate([np.broadcast_to(A0, (Zb.shape[0],) + A0.shape), Az], axis=2)
        scale = np.sqrt(np.mean(A * A, axis=1, keepdims=True))
        scale[scale == 0] = 1.0
        A = A / scale
        G = np.einsum("bni,bnj->bij", A, A)
        rhs = np.einsum("bni,n->bi", A, y)
        ridge = 1e-10 * np.trace(G, axis1=1, axis2=2)[:, None, None] * np.eye(G.shape[1])
        with np.errstate(all="ignore"):
            try:
                beta = np.linalg.solve(G + ridge, rhs[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                beta = np.stack([np.linalg.lstsq(a, y, rcond=None)[0] for a in A])
            res = y[None, :] - np.einsum("bni,bi->bn", A, beta)
            rss = np.sum(res * res, axis=1)
        s = rss / tss if tss > 0 else np.where(rss == 0, 0.0, np.inf)
        s[~np.isfinite(s)] = np.inf
        out[lo:lo + 256] = np.maximum(s, 0.0)
    return out


# ---------------------------------------------------------------------------
# augmentations


@dataclass(frozen=True)
class Augmentation:
    dag: ExpressionDag              # over the subset, variables renumbered 0..len(subset)-1
    subset: tuple[int, ...]
    score: float
    rendered: str

    def __post_init__(self):
        if self.dag.n_params != 0:
            raise ValueError("augmentations have no parameters")

    @property
    def complexity(self) -> int:
        return dag_complexity(self.dag)

    def tree(self) -> ExpressionTree:
        """The derived variable as an expression in the original variables."""
        return expand_to_tree(self.dag).with_vars({i: var(j) for i, j in enumerate(self.subset)})

    def values(self, X) -> tuple[np.ndarray, np.ndarray]:
        return evaluate_tree(self.tree(), X)


def make_augmentation(dag: ExpressionDag, subset, score: float = np.nan) -> Augmentation:
    subset = tuple(int(s) for s in subset)
    aug = Augmentation(dag, subset, 0.0, "")
    return Augmentation(dag, subset, score, render(aug.tree()))


def _prepare_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("X and y must be non-empty with matching rows")
    return X, y


def score_augmentation(z: Augmentation, X, y, family: RegressorFamily | None = None) -> float:
    """1 - R^2 of the family fitted on ``(x, z)``.

    Rows where ``z`` is undefined are dropped; if more than 10 % of the rows
    are dropped the score is infinite.
    """
    family = family or RegressorFamily()
    X, y = _prepare_xy(X, y)
    zv, ok = z.values(X)
    if ok.mean() < 0.9:
        return np.inf
    F = np.column_stack([X[ok], zv[ok]])
    return polynomial_score(F, y[ok], family)


@dataclass(frozen=True)
class AugmentationConfig:
    n_intermediaries: int = 1
    max_skeletons: int = 20_000
    max_subset: int = 3
    node_budget: int = 30
    score_rows: int = 500
    seed: int = 0


def _affine_key(v: np.ndarray) -> bytes | None:
    """Key identifying ``v`` up to an affine map; None for constant vectors.

    Polynomial regressors are invariant under ``z -> a z + b``, so candidates
    with equal keys score the same and only the first one is kept.
    """
    sd = float(np.std(v))
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, float(np.max(np.abs(v)))):
        return None
    u = (v - v.mean()) / sd
    if u[np.argmax(np.abs(u) > 1e-9)] < 0:
        u = -u
    return np.round(u, 8).tobytes()


@dataclass
class _Pool:
    subsets: list = field(default_factory=list)
    skeletons: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    values: list = field(default_factory=list)
    complexity: list = field(default_factory=list)

    def augmentation(self, i: int, score: float) -> Augmentation:
        skel = self.skeletons[i]
        names = [(_kernel_unary if node.arity == 1 else _kernel_binary)[int(lab)]
                 for node, lab in zip(skel.operator_nodes, self.labels[i])]
        return make_augmentation(skel.with_labels(names), self.subsets[i], score)


def _candidate_pool(X: np.ndarray, cfg: AugmentationConfig) -> _Pool:
    """Distinct, everywhere-defined, non-constant candidates for every variable subset."""
    n = X.shape[1]
    pool = _Pool()
    # inputs themselves are already features
    seen = {_affine_key(X[:, j]) for j in range(n)}
    for size in range(1, min(n, cfg.max_subset) + 1):
        for subset in itertools.combinations(range(n), size):
            sc = SamplerConfig(n_vars=size, n_params=0, n_intermediaries=cfg.n_intermediaries,
                               max_skeletons=cfg.max_skeletons, seed=cfg.seed)
            codes, _ = sample_unique_codes(sc)
            Xs = np.ascontiguousarray(X[:, subset])
            max_ops = (codes.shape[1] - 1) // 3
            vals = np.empty((8 ** max_ops, X.shape[0]))
            labs = np.empty((8 ** max_ops, max_ops), dtype=np.int64)
            for code in codes:
                n_ops = int(code[0])
                if size + n_ops > cfg.node_budget:
                    continue
                cnt = _kernel.all_frame_values(code, Xs, vals, labs)
                finite = np.all(np.isfinite(vals[:cnt]), axis=1)
                skel = None
                for f in np.flatnonzero(finite):
                    key = _affine_key(vals[f])
                    if key is None or key in seen:
                        continue
                    seen.add(key)
                    skel = skel or code_to_dag(code, sc)
                    pool.subsets.append(subset)
                    pool.skeletons.append(skel)
                    pool.labels.append(labs[f, :n_ops].copy())
                    pool.values.append(vals[f].copy())
                    pool.complexity.append(size + n_ops)
    return pool


_kernel_unary = {v: k for k, v in _kernel.UNARY_CODE.items()}
_kernel_binary = {v: k for k, v in _kernel.BINARY_CODE.items()}


def _rank_key(a: Augmentation):
    return (max(a.score, 1e-12), a.complexity, a.rendered)


def propose_augmentations(X, y, k: int, family: RegressorFamily | None = None,
                          node_budget: int = 30, config: AugmentationConfig | None = None
                          ) -> list[Augmentation]:
    """The ``k`` best derived variables by polynomial score.

    Candidates are all labelings of sampled parameterless skeletons over
    every variable subset of up to ``max_subset`` inputs, restricted to at
    most ``node_budget`` DAG nodes.  Candidates that are undefined on any
    training row, constant, or equal to an input are discarded, as are
    duplicates by value.  Ties are broken by smaller DAG, then by the
    rendered string.
    """
    if k <= 0:
        return []
    family = family or RegressorFamily()
    config = replace(config or AugmentationConfig(), node_budget=node_budget)
    X, y = _prepare_xy(X, y)
    rows = slice(0, min(X.shape[0], config.score_rows))
    pool = _candidate_pool(X, config)
    if not pool.values:
        return []
    Z = np.stack([v[rows] for v in pool.values])
    with np.errstate(all="ignore"):
        approx = _batched_scores(X[rows], Z, y[rows], family)
    order = sorted(range(len(approx)), key=lambda i: (max(approx[i], 1e-12), pool.complexity[i], i))
    cands = [pool.augmentation(i, float(approx[i])) for i in order[:max(8 * k, 100)]]
    cands.sort(key=_rank_key)
    # rescore the front-runners with an exact least-squares fit
    head = [replace(a, score=score_augmentation(a, X, y, family)) for a in cands[:max(4 * k, 20)]]
    head.sort(key=_rank_key)
    return head[:k]


# ---------------------------------------------------------------------------
# Pareto front and selection


def _fit_of(m: FittedModel) -> float:
    return max(0.0, 1.0 - m.r2) if np.isfinite(m.r2) else np.inf


@dataclass
class ParetoFront:
    """Models nondominated in (1 - R^2, complexity).

    ``a`` dominates ``b`` when it is smaller and its fit is no worse than
    ``b``'s up to a relative slack ``rel_tol`` (plus ``abs_tol``), or when it
    has the same complexity and a fit at least as good.  The slack keeps a
    larger model only if it fits clearly better, which protects against
    fitting noise with extra nodes.
    """

    rel_tol: float = 0.05
    abs_tol: float = 1e-10
    models: list[FittedModel] = field(default_factory=list)

    def dominates(self, a: FittedModel, b: FittedModel) -> bool:
        fa, fb = _fit_of(a), _fit_of(b)
        if a.complexity < b.complexity:
            return fa <= fb * (1.0 + self.rel_tol) + self.abs_tol
        if a.complexity == b.complexity:
            return fa <= fb
        return False

    def insert(self, model: FittedModel) -> bool:
        if not np.isfinite(_fit_of(model)):
            return False
        if any(self.dominates(m, model) for m in self.models):
            return False
        self.models = [m for m in self.models if not self.dominates(model, m)]
        self.models.append(model)
        self.models.sort(key=lambda m: (m.complexity, _fit_of(m)))
        return True

    def extend(self, models) -> None:
        for m in models:
            self.insert(m)

    def select(self, threshold: int = 30) -> FittedModel:
        """Best fit among models no larger than ``threshold``, else the smallest model."""
        if not self.models:
            raise ValueError("empty Pareto front")
        small = [m for m in self.models if m.complexity <= threshold]
        if not small:
            return min(self.models, key=lambda m: (m.complexity, _fit_of(m)))
        return min(small, key=lambda m: (_fit_of(m), m.complexity))

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["complexity", "one_minus_r2", "expression"])
            for m in self.models:
                w.writerow([m.complexity, repr(_fit_of(m)), m.rendered])


def tree_model(tree: ExpressionTree, X, y) -> FittedModel:
    """Wrap an explicit expression as a model scored on ``(X, y)``.

    Numeric constants become parameter nodes, so complexity counts each
    distinct constant once.
    """
    X, y = _prepare_xy(X, y)
    pred, ok = evaluate_tree(tree, X)
    if ok.all():
        loss = float(np.sum((pred - y) ** 2))
        r2 = r_squared(pred, y)
    else:
        loss, r2 = np.inf, -np.inf
    dag, theta = tree_to_dag(tree, X.shape[1])
    return FittedModel(dag, theta, loss, float(r2), dag_complexity(dag), render(tree))


def solve_with_augmentations(X, y, cfg: SearchConfig, k: int, threshold: int = 30,
                             family: RegressorFamily | None = None, node_budget: int = 30,
                             aug_config: AugmentationConfig | None = None,
                             pareto: ParetoFront | None = None, report: dict | None = None
                             ) -> tuple[ParetoFront, FittedModel]:
    """Solve the plain problem and ``k`` augmented ones; select from the joint front.

    Models of augmented problems are rewritten in the original variables
    before they are scored.  For every augmentation the sparse polynomial
    regressor on ``(x, z)`` also enters the front as a candidate.
    """
    family = family or RegressorFamily()
    X, y = _prepare_xy(X, y)
    front = pareto or ParetoFront()
    candidates: list[FittedModel] = []
    plain = search(X, y, cfg)
    candidates += [tree_model(m.tree(), X, y) for m in plain]
    augs = propose_augmentations(X, y, k, family, node_budget, aug_config)
    for aug in augs:
        zt = aug.tree()
        zv, ok = evaluate_tree(zt, X)
        if not ok.all():
            continue
        Xa = np.column_stack([X, zv])
        acfg = replace(cfg, sampler=replace(cfg.sampler, n_vars=X.shape[1] + 1))
        for m in search(Xa, y, acfg):
            candidates.append(tree_model(m.tree().with_vars({X.shape[1]: zt}), X, y))
        poly = fit_polynomial(Xa, y, family, sparse_tol=1e-6)
        feats = [var(j) for j in range(X.shape[1])] + [zt]
        candidates.append(tree_model(poly.tree(feats), X, y))
    front.extend(candidates)
    if report is not None:
        report["augmentations"] = augs
        report["plain"] = plain
        report["candidates"] = candidates
    return front, front.select(threshold)
