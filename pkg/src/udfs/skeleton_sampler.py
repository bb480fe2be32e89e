"""Random construction of DAG skeletons and the size of the construction space.

Every operator node (intermediaries in order, then outputs) first draws its
arity uniformly from {1, 2} and then its predecessors uniformly from all input
nodes and all intermediaries with a smaller number.  Binary nodes draw an
ordered pair, repeats allowed.  Intermediaries that end up without a
successor are removed afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernel
from .expr_core import ExpressionDag, OpNode

_CHUNK = 50_000


@dataclass(frozen=True)
class SamplerConfig:
    n_vars: int
    n_params: int = 1
    n_intermediaries: int = 5
    n_outputs: int = 1
    max_skeletons: int = 200_000
    seed: int | None = 0

    def __post_init__(self):
        if self.n_vars < 0 or self.n_params < 0 or self.n_vars + self.n_params < 1:
            raise ValueError("need at least one input node and nonnegative counts")
        if self.n_intermediaries < 0:
            raise ValueError("n_intermediaries must be >= 0")
        if self.n_outputs < 1:
            raise ValueError("n_outputs must be >= 1")
        if self.max_skeletons < 1:
            raise ValueError("max_skeletons must be >= 1")

    @property
    def n_inputs(self) -> int:
        return self.n_vars + self.n_params


def search_space_size(n: int, i: int) -> int:
    """Number of construction tuples for ``n`` inputs, ``i`` intermediaries, one output.

    Exact integer ``n (n+i+1) prod_{j=1..i} (n+j)^2``.
    """
    if n < 1 or i < 0:
        raise ValueError("need n >= 1 and i >= 0")
    size = n * (n + i + 1)
    for j in range(1, i + 1):
        size *= (n + j) ** 2
    return size


def construction_tuple_count(n: int, i: int, m: int = 1) -> int:
    """Construction tuples with ``m`` outputs (each node has a + a^2 choices)."""
    total = 1
    for k in range(i):
        a = n + k
        total *= a + a * a
    a = n + i
    return total * (a + a * a) ** m


def _choice_bounds(cfg: SamplerConfig) -> np.ndarray:
    """Number of available predecessors for each operator node."""
    n, i, m = cfg.n_inputs, cfg.n_intermediaries, cfg.n_outputs
    return np.array([n + k for k in range(i)] + [n + i] * m, dtype=np.int64)


def draw_tuples(cfg: SamplerConfig, rng: np.random.Generator, count: int):
    """Draw ``count`` raw construction tuples as (arity, p0, p1) arrays."""
    bounds = _choice_bounds(cfg)
    K = bounds.size
    arity = rng.integers(1, 3, size=(count, K))
    p0 = rng.integers(0, bounds, size=(count, K))
    p1 = rng.integers(0, bounds, size=(count, K))
    p1[arity == 1] = -1
    return arity.astype(np.int64), p0.astype(np.int64), p1.astype(np.int64)


def all_tuples(cfg: SamplerConfig):
    """Every construction tuple, in mixed-radix order (first node slowest)."""
    bounds = _choice_bounds(cfg)
    radix = bounds + bounds * bounds
    total = int(np.prod(radix.astype(object)))
    idx = np.arange(total, dtype=np.int64)
    K = bounds.size
    arity = np.empty((total, K), dtype=np.int64)
    p0 = np.empty((total, K), dtype=np.int64)
    p1 = np.empty((total, K), dtype=np.int64)
    for k in range(K - 1, -1, -1):
        a = bounds[k]
        o = idx % radix[k]
        idx //= radix[k]
        unary = o < a
        arity[:, k] = np.where(unary, 1, 2)
        b = o - a
        p0[:, k] = np.where(unary, o, b // a)
        p1[:, k] = np.where(unary, -1, b % a)
    return arity, p0, p1


def canonical_codes(cfg: SamplerConfig, arity, p0, p1) -> np.ndarray:
    """Pruned canonical integer codes for a batch of tuples (see ``_kernel``)."""
    K = cfg.n_intermediaries + cfg.n_outputs
    out = np.empty((arity.shape[0], 1 + 3 * K), dtype=np.int64)
    return _kernel.canonical_codes(arity, p0, p1, cfg.n_inputs, cfg.n_intermediaries,
                                   cfg.n_outputs, out)


def code_to_dag(code: np.ndarray, cfg: SamplerConfig) -> ExpressionDag:
    n_ops = int(code[0])
    nodes = []
    for k in range(n_ops):
        a, p, q = (int(v) for v in code[1 + 3 * k: 4 + 3 * k])
        nodes.append(OpNode(a, (p,) if a == 1 else (p, q)))
    m = cfg.n_outputs
    return ExpressionDag(cfg.n_vars, cfg.n_params, tuple(nodes[:n_ops - m]), tuple(nodes[n_ops - m:]))


def dag_to_code(dag: ExpressionDag, width: int | None = None) -> np.ndarray:
    ops = dag.operator_nodes
    width = width or 1 + 3 * len(ops)
    code = np.full(width, -2, dtype=np.int64)
    code[0] = len(ops)
    for k, node in enumerate(ops):
        code[1 + 3 * k] = node.arity
        code[2 + 3 * k] = node.preds[0]
        code[3 + 3 * k] = node.preds[1] if node.arity == 2 else -1
    return code


def sample_skeleton(cfg: SamplerConfig, rng: np.random.Generator) -> ExpressionDag:
    """Draw one skeleton and prune its dead intermediaries."""
    arity, p0, p1 = draw_tuples(cfg, rng, 1)
    return code_to_dag(canonical_codes(cfg, arity, p0, p1)[0], cfg)


def _unique_rows_in_order(codes: np.ndarray) -> np.ndarray:
    _, first = np.unique(codes, axis=0, return_index=True)
    return codes[np.sort(first)]


def sample_unique_codes(cfg: SamplerConfig) -> tuple[np.ndarray, bool]:
    """Distinct canonical skeleton codes, in order of first appearance.

    If the whole construction space has at most ``max_skeletons`` tuples it
    is enumerated instead of sampled.  The draws for a budget are a prefix of
    the draws for any larger budget with the same seed.  Returns
    ``(codes, exhaustive)``.
    """
    space = construction_tuple_count(cfg.n_inputs, cfg.n_intermediaries, cfg.n_outputs)
    if space <= cfg.max_skeletons:
        arity, p0, p1 = all_tuples(cfg)
        return _unique_rows_in_order(canonical_codes(cfg, arity, p0, p1)), True
    rng = np.random.default_rng(cfg.seed)
    parts = []
    remaining = cfg.max_skeletons
    while remaining > 0:
        # always draw whole chunks so a smaller budget sees a prefix of a larger one
        c = min(_CHUNK, remaining)
        arity, p0, p1 = draw_tuples(cfg, rng, _CHUNK)
        parts.append(canonical_codes(cfg, arity[:c], p0[:c], p1[:c]))
        remaining -= c
    return _unique_rows_in_order(np.concatenate(parts)), False


def sample_unique_skeletons(cfg: SamplerConfig) -> list[ExpressionDag]:
    """Up to ``max_skeletons`` skeletons that are distinct after pruning.

    ``max_skeletons`` bounds the number of draws; duplicates are dropped, so
    the result is usually shorter.  When the construction space is no larger
    than the budget the result is every distinct skeleton of the space.
    """
    codes, _ = sample_unique_codes(cfg)
    return [code_to_dag(c, cfg) for c in codes]
