import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from udfs.expr_core import ExpressionDag, OpNode
from udfs.skeleton_sampler import (SamplerConfig, all_tuples, code_to_dag, construction_tuple_count,
                                   dag_to_code, draw_tuples, sample_skeleton,
                                   sample_unique_codes, sample_unique_skeletons,
                                   search_space_size)


def brute_force_tuples(n, i):
    """Every construction choice, built with plain nested loops."""
    per_node = []
    for k in range(i + 1):
        avail = range(n + k)
        choices = [(1, a) for a in avail] + [(2, a, b) for a in avail for b in avail]
        per_node.append(choices)
    return itertools.product(*per_node)


def recursion(n, i):
    s = n * (n + 1)
    for j in range(1, i + 1):
        s = s * (n + j) * (n + j + 1)
    return s


def tuple_to_dag(t, n):
    nodes = [OpNode(c[0], c[1:]) for c in t]
    return ExpressionDag(n, 0, tuple(nodes[:-1]), (nodes[-1],))


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("i", [0, 1, 2])
def test_space_size_matches_brute_force(n, i):
    assert search_space_size(n, i) == sum(1 for _ in brute_force_tuples(n, i))


def test_space_size_examples():
    assert search_space_size(2, 3) == 43200
    assert search_space_size(1, 0) == 2
    assert search_space_size(2, 1) == 72


@given(st.integers(1, 12), st.integers(0, 40))
def test_space_size_closed_form_equals_recursion(n, i):
    s = search_space_size(n, i)
    assert isinstance(s, int)
    assert s == recursion(n, i)
    assert s == construction_tuple_count(n, i, 1)
    assert search_space_size(n, i + 1) > s


def test_space_size_is_exact_big_integer():
    s = search_space_size(3, 60)
    assert s > 2 ** 64 and s == recursion(3, 60)


def test_space_size_errors():
    with pytest.raises(ValueError):
        search_space_size(0, 1)
    with pytest.raises(ValueError):
        search_space_size(1, -1)


@pytest.mark.parametrize("kwargs", [dict(n_vars=0, n_params=0), dict(n_vars=1, n_intermediaries=-1),
                                    dict(n_vars=1, n_outputs=0), dict(n_vars=1, max_skeletons=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SamplerConfig(**kwargs)


@pytest.mark.parametrize("i,expected", [(0, 6), (1, 42), (2, 366)])
def test_distinct_pruned_skeletons_match_brute_force(i, expected):
    cfg = SamplerConfig(2, 0, i, max_skeletons=10 ** 6)
    codes, exhaustive = sample_unique_codes(cfg)
    assert exhaustive
    oracle = {tuple_to_dag(t, 2).canonical().key() for t in brute_force_tuples(2, i)}
    assert len(oracle) == expected
    got = {code_to_dag(c, cfg).key() for c in codes}
    assert got == oracle


def test_s2_3_tuples_versus_distinct_skeletons():
    cfg = SamplerConfig(2, 0, 3, max_skeletons=200_000)
    arity, _, _ = all_tuples(cfg)
    assert arity.shape[0] == 43200
    codes, exhaustive = sample_unique_codes(cfg)
    assert exhaustive
    # many construction tuples collapse once dead nodes are pruned
    assert codes.shape[0] == 4254


def test_all_tuples_match_brute_force_order_free():
    cfg = SamplerConfig(1, 1, 1)
    a, p, q = all_tuples(cfg)
    got = set()
    for r in range(a.shape[0]):
        got.add(tuple((int(a[r, k]), int(p[r, k])) + ((int(q[r, k]),) if a[r, k] == 2 else ())
                      for k in range(a.shape[1])))
    assert got == set(brute_force_tuples(2, 1))


def test_fixed_seed_reproducible():
    cfg = SamplerConfig(2, 1, 4)
    r1, r2 = np.random.default_rng(7), np.random.default_rng(7)
    a = [sample_skeleton(cfg, r1) for _ in range(50)]
    b = [sample_skeleton(cfg, r2) for _ in range(50)]
    assert a == b
    c1, _ = sample_unique_codes(SamplerConfig(2, 1, 5, max_skeletons=3000, seed=3))
    c2, _ = sample_unique_codes(SamplerConfig(2, 1, 5, max_skeletons=3000, seed=3))
    assert np.array_equal(c1, c2)


@given(st.integers(1, 3), st.integers(0, 2), st.integers(0, 6), st.integers(0, 2 ** 31))
def test_sampled_skeletons_are_valid_and_pruned(nv, npar, i, seed):
    cfg = SamplerConfig(nv, npar, i)
    s = sample_skeleton(cfg, np.random.default_rng(seed))
    assert s.is_skeleton
    assert s == s.pruned() == s.canonical()
    succ = s.successors()
    assert all(succ[s.n_inputs + k] for k in range(len(s.intermediaries)))
    assert code_to_dag(dag_to_code(s), cfg) == s


def test_single_output_no_intermediaries_has_two_shapes():
    cfg = SamplerConfig(1, 0, 0, max_skeletons=100)
    shapes = {sample_skeleton(cfg, np.random.default_rng(s)).key() for s in range(200)}
    assert len(shapes) == 2
    assert len(sample_unique_skeletons(cfg)) == 2


def test_pruning_of_unreferenced_intermediary():
    # node 1 (first intermediary) is never read; the output reads node 2 only
    d = ExpressionDag(1, 0, (OpNode(1, (0,)), OpNode(1, (0,))), (OpNode(1, (2,)),)).pruned()
    assert len(d.intermediaries) == 1


def test_max_skeletons_one_gives_singleton():
    out = sample_unique_skeletons(SamplerConfig(2, 1, 5, max_skeletons=1))
    assert len(out) == 1


def test_unique_skeletons_are_distinct():
    out = sample_unique_skeletons(SamplerConfig(1, 1, 4, max_skeletons=5000, seed=1))
    keys = [s.key() for s in out]
    assert len(keys) == len(set(keys))


def test_arity_and_predecessor_draws_are_uniform():
    cfg = SamplerConfig(1, 1, 3)
    arity, p0, p1 = draw_tuples(cfg, np.random.default_rng(0), 200_000)
    frac_unary = (arity == 1).mean(axis=0)
    assert np.all(np.abs(frac_unary - 0.5) < 0.005)
    # output node chooses among n + i = 5 predecessors
    counts = np.bincount(p0[:, -1], minlength=5) / p0.shape[0]
    assert np.all(np.abs(counts - 0.2) < 0.005)
    binary = arity[:, -1] == 2
    pairs = np.bincount(p0[binary, -1] * 5 + p1[binary, -1], minlength=25) / binary.sum()
    assert np.all(np.abs(pairs - 0.04) < 0.004)
    assert np.all(p1[arity == 1] == -1)
