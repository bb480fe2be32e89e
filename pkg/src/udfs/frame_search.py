"""Exhaustive operator labeling of sampled skeletons and the overall search loop.

For every skeleton every combination of operator labels (a *frame*) is
scored by the square loss after fitting its parameters on a grid.  The best
frame of every complexity value is kept; these feed model selection.

Two interchangeable evaluation paths exist:

* a compiled kernel (single output, at most one parameter, default operator
  set), used by default;
* a numpy path built on ``param_opt.fit_parameters`` for everything else.

The kernel screens each frame on the first few data rows before evaluating
it fully.  A frame is dropped when its best screened loss over the level-1
grid is at least ``screen_factor`` times the incumbent loss of its
complexity class.  Because the partial loss never exceeds the full loss this
only risks missing frames whose grid refinement would gain more than that
factor; ``screen_factor=None`` turns the screen off.
"""
from __future__ import annotations

import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import _kernel
from .expr_core import (DEFAULT_OPERATORS, ExpressionDag, OperatorSet, expand_to_tree,
                        render)
from .param_opt import GridConfig, fit_parameters
from .skeleton_sampler import (SamplerConfig, code_to_dag, construction_tuple_count,
                               sample_unique_codes)

_UNDO_PAIRS = {("neg", "neg"), ("inv", "inv"), ("log", "exp"), ("exp", "log"), ("square", "sqrt")}


@dataclass(frozen=True)
class SearchConfig:
    sampler: SamplerConfig
    operators: OperatorSet = DEFAULT_OPERATORS
    grid: GridConfig = field(default_factory=GridConfig)
    loss_stop_tolerance: float = 1e-10
    workers: int = 1
    max_frames_per_skeleton: int = 0      # 0 means no cap
    screen_factor: float | None = 10.0
    screen_rows: int = 8
    use_kernel: bool = True

    def __post_init__(self):
        if self.loss_stop_tolerance < 0:
            raise ValueError("loss_stop_tolerance must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.screen_factor is not None and self.screen_factor <= 1:
            raise ValueError("screen_factor must exceed 1 (or be None)")


@dataclass(frozen=True)
class FittedModel:
    frame: ExpressionDag
    theta: np.ndarray
    train_loss: float
    r2: float
    complexity: int
    rendered: str

    def tree(self):
        """Expression tree with the fitted constants substituted."""
        return expand_to_tree(self.frame).with_params(self.theta)

    def predict(self, X) -> np.ndarray:
        from .expr_core import evaluate_batch
        return evaluate_batch(self.frame, X, self.theta).values[:, 0]

    def to_dict(self) -> dict:
        from .expr_core import dag_to_dict
        return {
            "expression": self.rendered,
            "complexity": self.complexity,
            "train_loss": self.train_loss,
            "r2": self.r2,
            "theta": [float(t) for t in self.theta],
            "frame": dag_to_dict(self.frame),
        }


def frame_count(skeleton: ExpressionDag, ops: OperatorSet = DEFAULT_OPERATORS) -> int:
    u, b = skeleton.arity_counts()
    return len(ops.unary) ** u * len(ops.binary) ** b


def is_redundant(frame: ExpressionDag) -> bool:
    """True if some unary node undoes its unary predecessor (see ``_kernel.redundant_at``)."""
    n_in = frame.n_inputs
    ops = frame.operator_nodes
    n_inter = len(frame.intermediaries)
    for k, node in enumerate(ops):
        if node.arity != 1 or node.preds[0] < n_in:
            continue
        inner = ops[node.preds[0] - n_in]
        if inner.arity != 1:
            continue
        if k >= n_inter and inner.preds[0] < n_in:
            continue
        if (node.label, inner.label) in _UNDO_PAIRS:
            return True
    return False


def enumerate_frames(skeleton: ExpressionDag, ops: OperatorSet = DEFAULT_OPERATORS,
                     skip_redundant: bool = False) -> Iterator[ExpressionDag]:
    """All labelings of ``skeleton``; the last operator node varies fastest."""
    choices = [ops.for_arity(n.arity) for n in skeleton.operator_nodes]
    for labels in itertools.product(*choices):
        frame = skeleton.with_labels(labels)
        if skip_redundant and is_redundant(frame):
            continue
        yield frame


def model_complexity(frame: ExpressionDag) -> int:
    """Node count of the frame, counting only parameters the outputs use."""
    return frame.n_vars + len(frame.used_params()) + len(frame.operator_nodes)


def _prepare(X, Y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if Y.shape[0] != X.shape[0]:
        raise ValueError("X and Y row counts differ")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("dataset contains non-finite values")
    return X, Y


def total_sum_of_squares(Y: np.ndarray) -> float:
    return float(np.sum((Y - Y.mean(axis=0)) ** 2))


def make_model(frame: ExpressionDag, X, Y, grid: GridConfig) -> FittedModel:
    X, Y = _prepare(X, Y)
    theta, loss = fit_parameters(frame, X, Y, grid)
    tss = total_sum_of_squares(Y)
    if tss > 0:
        r2 = 1.0 - loss / tss
    else:
        r2 = 1.0 if loss == 0 else -np.inf
    rendered = render(expand_to_tree(frame).with_params(theta)) if len(frame.outputs) == 1 else \
        "; ".join(render(expand_to_tree(frame, j).with_params(theta)) for j in range(len(frame.outputs)))
    return FittedModel(frame, theta, float(loss), float(r2), model_complexity(frame), rendered)


def _stop_loss(Y: np.ndarray, tol: float) -> float:
    tss = total_sum_of_squares(Y)
    return tol * (tss if tss > 0 else float(np.sum(Y * Y)))


def _kernel_ok(cfg: SearchConfig) -> bool:
    s = cfg.sampler
    return (cfg.use_kernel and s.n_outputs == 1 and s.n_params <= 1
            and cfg.operators == DEFAULT_OPERATORS)


def _class_state(cfg: SearchConfig, width: int):
    """Per-complexity incumbents: loss, skeleton row, labels, parameter."""
    n_classes = cfg.sampler.n_inputs + (width - 1) // 3 + 1
    return (np.full(n_classes, np.inf), np.full(n_classes, -1, dtype=np.int64),
            np.full((n_classes, (width - 1) // 3), -1, dtype=np.int64), np.zeros(n_classes))


def _run_kernel(codes, X, y, cfg: SearchConfig, state) -> tuple[int, bool]:
    """Score ``codes`` against the incumbents in ``state``, updating it in place."""
    s = cfg.sampler
    screen = float(cfg.screen_factor) if cfg.screen_factor is not None else 0.0
    scored, stopped = _kernel.search_skeletons(
        codes, X, y, s.n_vars, s.n_params, cfg.grid.level_grid(), cfg.grid.levels,
        min(cfg.screen_rows, X.shape[0]), screen, _stop_loss(y, cfg.loss_stop_tolerance),
        s.n_vars, cfg.max_frames_per_skeleton, *state)
    return int(scored), bool(stopped)


def _run_kernel_shard(args):
    codes, X, y, cfg = args
    state = _class_state(cfg, codes.shape[1])
    scored, stopped = _run_kernel(codes, X, y, cfg, state)
    return state[0], state[1], state[2], scored, stopped


_UNARY_BY_CODE = {v: k for k, v in _kernel.UNARY_CODE.items()}
_BINARY_BY_CODE = {v: k for k, v in _kernel.BINARY_CODE.items()}


def _decode_frame(code: np.ndarray, labels: np.ndarray, cfg: SamplerConfig) -> ExpressionDag:
    skel = code_to_dag(code, cfg)
    names = [(_UNARY_BY_CODE if n.arity == 1 else _BINARY_BY_CODE)[int(lab)]
             for n, lab in zip(skel.operator_nodes, labels)]
    return skel.with_labels(names)


def resolve_workers(requested: int) -> int:
    env = os.environ.get("UDFS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"UDFS_THREADS must be an integer, got {env!r}") from None
    return requested


@dataclass
class SearchStats:
    n_skeletons: int = 0
    frames_scored: int = 0
    stopped_early: bool = False
    exhaustive: bool = False


def _search_kernel(codes, X, Y, cfg: SearchConfig, stats: SearchStats) -> list[ExpressionDag]:
    y = np.ascontiguousarray(Y[:, 0])
    X = np.ascontiguousarray(X)
    workers = resolve_workers(cfg.workers)
    if workers == 1 or codes.shape[0] < 2 * workers:
        shards = [codes]
        results = [_run_kernel_shard((codes, X, y, cfg))]
    else:
        bounds = np.linspace(0, codes.shape[0], workers + 1).astype(int)
        shards = [codes[bounds[w]:bounds[w + 1]] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_kernel_shard, [(sh, X, y, cfg) for sh in shards]))
    # merge: lowest loss per class, ties to the earlier shard
    best: dict[int, tuple[float, ExpressionDag]] = {}
    for shard, (cb, cs, cl, scored, stopped) in zip(shards, results):
        stats.frames_scored += scored
        stats.stopped_early |= stopped
        for c in np.flatnonzero(np.isfinite(cb)):
            if c not in best or cb[c] < best[c][0]:
                frame = _decode_frame(shard[cs[c]], cl[c][cl[c] >= 0], cfg.sampler)
                best[int(c)] = (float(cb[c]), frame)
    return [best[c][1] for c in sorted(best)]


def _search_numpy(codes, X, Y, cfg: SearchConfig, stats: SearchStats) -> list[ExpressionDag]:
    stop = _stop_loss(Y, cfg.loss_stop_tolerance)
    best: dict[int, tuple[float, ExpressionDag]] = {}
    for code in codes:
        skel = code_to_dag(code, cfg.sampler)
        for n, frame in enumerate(enumerate_frames(skel, cfg.operators, skip_redundant=True)):
            if cfg.max_frames_per_skeleton and n >= cfg.max_frames_per_skeleton:
                break
            stats.frames_scored += 1
            _, loss = fit_parameters(frame, X, Y, cfg.grid)
            c = model_complexity(frame)
            if loss < best.get(c, (np.inf,))[0]:
                best[c] = (loss, frame)
                if loss <= stop:
                    stats.stopped_early = True
                    return [best[k][1] for k in sorted(best)]
    return [best[c][1] for c in sorted(best)]


def search(X, Y, cfg: SearchConfig, stats: SearchStats | None = None) -> list[FittedModel]:
    """Search frames for the data and return the best model of each complexity.

    The result is sorted by complexity.  The search stops early once a model
    reaches a square loss of ``loss_stop_tolerance`` times the total sum of
    squares of the targets.
    """
    X, Y = _prepare(X, Y)
    s = cfg.sampler
    if X.shape[1] != s.n_vars:
        raise ValueError(f"X has {X.shape[1]} columns, the sampler expects {s.n_vars}")
    if Y.shape[1] != s.n_outputs:
        raise ValueError(f"Y has {Y.shape[1]} columns, the sampler expects {s.n_outputs}")
    stats = stats if stats is not None else SearchStats()
    codes, exhaustive = sample_unique_codes(s)
    stats.n_skeletons = int(codes.shape[0])
    stats.exhaustive = exhaustive
    if _kernel_ok(cfg):
        frames = _search_kernel(codes, X, Y, cfg, stats)
    else:
        frames = _search_numpy(codes, X, Y, cfg, stats)
    models = [make_model(f, X, Y, cfg.grid) for f in frames]
    return sorted(models, key=lambda m: (m.complexity, m.train_loss))


def search_budgets(X, Y, cfg: SearchConfig, budgets) -> dict[int, list[FittedModel]]:
    """``search`` at several skeleton budgets, sharing the work between them.

    The draws for a budget are a prefix of the draws for any larger one and a
    single worker scores skeletons in draw order, so the incumbents after a
    budget's skeletons are exactly what a separate run would return.  Where
    that argument does not apply (several workers, the numpy path, or a budget
    large enough for exhaustive enumeration) the budgets run separately.
    """
    budgets = sorted({int(b) for b in budgets})
    X, Y = _prepare(X, Y)
    s = cfg.sampler
    runs = [replace(cfg, sampler=replace(s, max_skeletons=b)) for b in budgets]
    space = construction_tuple_count(s.n_inputs, s.n_intermediaries, s.n_outputs)
    if resolve_workers(cfg.workers) > 1 or not _kernel_ok(cfg) or space <= budgets[-1]:
        return {b: search(X, Y, r) for b, r in zip(budgets, runs)}
    codes, _ = sample_unique_codes(runs[-1].sampler)
    ends = [sample_unique_codes(r.sampler)[0].shape[0] for r in runs[:-1]] + [codes.shape[0]]
    y = np.ascontiguousarray(Y[:, 0])
    Xc = np.ascontiguousarray(X)
    state = _class_state(cfg, codes.shape[1])
    frames: dict[int, ExpressionDag] = {}
    out = {}
    start, stopped = 0, False
    for b, end in zip(budgets, ends):
        if not stopped and end > start:
            seg = codes[start:end]
            before = state[0].copy()
            _, stopped = _run_kernel(seg, Xc, y, cfg, state)
            # incumbents replaced in this segment point at rows of ``seg``
            for c in np.flatnonzero(state[0] < before):
                frames[int(c)] = _decode_frame(seg[state[1][c]], state[2][c][state[2][c] >= 0], s)
            start = end
        models = [make_model(frames[c], X, Y, cfg.grid) for c in sorted(frames)]
        out[b] = sorted(models, key=lambda m: (m.complexity, m.train_loss))
    return out


def best_model(models: list[FittedModel]) -> FittedModel:
    """Minimum training loss, ties to the smaller model."""
    return min(models, key=lambda m: (m.train_loss, m.complexity))
