import json

import numpy as np
import pytest
from conftest import frames, trees
from hypothesis import given
from hypothesis import strategies as st

from udfs.expr_core import (DEFAULT_OPERATORS, ExpressionDag, OperatorSet, OpNode, ParseError,
                            dag_complexity, dag_from_dict, dag_to_dict, evaluate_batch,
                            evaluate_grid, evaluate_tree, expand_to_tree, op, param, parse,
                            render, tree_complexity, tree_to_dag, var)

X0 = var(0)


def fig2_dag():
    # x^2 (x^2 + x): square, add, mul over one input
    return ExpressionDag(1, 0, (OpNode(1, (0,), "square"), OpNode(2, (1, 0), "add")),
                         (OpNode(2, (1, 2), "mul"),))


def nguyen2_dag():
    # x^2 (x^2 + x) + (x^2 + x)
    return ExpressionDag(1, 0, (OpNode(1, (0,), "square"), OpNode(2, (1, 0), "add"),
                                OpNode(2, (1, 2), "mul")),
                         (OpNode(2, (3, 2), "add"),))


# --- operator set and validation -------------------------------------------------

def test_default_operator_order():
    assert DEFAULT_OPERATORS.binary == ("add", "sub", "mul", "div")
    assert DEFAULT_OPERATORS.unary == ("neg", "inv", "sin", "cos", "log", "exp", "square", "sqrt")


@pytest.mark.parametrize("kwargs", [{"binary": ("pow",)}, {"unary": ("tan",)},
                                    {"binary": ("add", "add")}, {"unary": ()}])
def test_operator_set_rejects_bad_lists(kwargs):
    with pytest.raises(ValueError):
        OperatorSet(**kwargs)


def test_node_validation():
    with pytest.raises(ValueError):
        OpNode(3, (0, 0, 0))
    with pytest.raises(ValueError):
        OpNode(2, (0,))
    with pytest.raises(ValueError):
        OpNode(1, (0,), "add")


def test_dag_rejects_forward_references():
    with pytest.raises(ValueError):
        ExpressionDag(1, 0, (OpNode(1, (1,)),), (OpNode(1, (1,)),))
    with pytest.raises(ValueError):
        ExpressionDag(1, 0, (), (OpNode(1, (1,)),))
    with pytest.raises(ValueError):
        ExpressionDag(1, 0, (), ())


def test_frame_and_skeleton_flags():
    d = fig2_dag()
    assert d.is_frame and not d.is_skeleton
    s = d.skeleton()
    assert s.is_skeleton and not s.is_frame
    assert s.arity_counts() == (1, 2)


# --- evaluation -----------------------------------------------------------------

def test_fig2_value_at_two():
    r = evaluate_batch(fig2_dag(), np.array([[2.0]]))
    assert r.values[0, 0] == 24.0 and r.valid_mask[0]


def test_shifted_square_zero():
    d = ExpressionDag(1, 1, (OpNode(2, (0, 1), "sub"),), (OpNode(1, (2,), "square"),))
    r = evaluate_batch(d, np.array([[1.0]]), [1.0])
    assert r.values[0, 0] == 0.0 and r.valid_mask[0]


def test_division_singularity_masks_row():
    d = ExpressionDag(1, 0, (), (OpNode(2, (0, 0), "div"),))
    r = evaluate_batch(d, np.array([[0.0], [2.0]]))
    assert list(r.valid_mask) == [False, True]
    assert r.values[1, 0] == 1.0


@pytest.mark.parametrize("label,x", [("log", -1.0), ("sqrt", -1.0), ("inv", 0.0), ("exp", 1000.0)])
def test_domain_violations_mask(label, x):
    d = ExpressionDag(1, 0, (), (OpNode(1, (0,), label),))
    r = evaluate_batch(d, np.array([[x], [0.5]]))
    assert not r.valid_mask[0] and r.valid_mask[1]


def test_dimension_errors():
    d = fig2_dag()
    with pytest.raises(ValueError):
        evaluate_batch(d, np.ones((3, 2)))
    d1 = ExpressionDag(1, 1, (), (OpNode(2, (0, 1), "mul"),))
    with pytest.raises(ValueError):
        evaluate_batch(d1, np.ones((3, 1)), [1.0, 2.0])
    with pytest.raises(ValueError):
        evaluate_batch(d1.skeleton(), np.ones((3, 1)), [1.0])


def test_each_operator_node_computed_once():
    trace = []
    d = nguyen2_dag()
    evaluate_batch(d, np.linspace(-1, 1, 7).reshape(-1, 1), trace=trace)
    assert trace == [1, 2, 3, 4]


def test_multi_output():
    d = ExpressionDag(2, 0, (OpNode(2, (0, 1), "add"),),
                      (OpNode(1, (2,), "square"), OpNode(2, (2, 0), "mul")))
    X = np.array([[1.0, 2.0], [0.5, -1.0]])
    r = evaluate_batch(d, X)
    s = X.sum(axis=1)
    assert np.allclose(r.values, np.column_stack([s ** 2, s * X[:, 0]]))


@given(frames())
def test_frame_matches_expanded_tree(frame):
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, size=(40, frame.n_vars))
    theta = rng.uniform(-1, 1, size=frame.n_params)
    r = evaluate_batch(frame, X, theta)
    t, ok = evaluate_tree(expand_to_tree(frame), X, theta)
    assert np.array_equal(r.valid_mask, ok)
    v = r.values[:, 0][ok]
    assert np.allclose(v, t[ok], rtol=1e-12, atol=0)


@given(frames())
def test_grid_equals_pointwise_bitwise(frame):
    rng = np.random.default_rng(1)
    X = rng.uniform(-2, 2, size=(15, frame.n_vars))
    thetas = rng.uniform(-1, 1, size=(6, frame.n_params))
    vals, valid = evaluate_grid(frame, X, thetas)
    for t in range(thetas.shape[0]):
        r = evaluate_batch(frame, X, thetas[t])
        assert np.array_equal(r.valid_mask, valid[t])
        assert np.array_equal(r.values[valid[t]], vals[t][valid[t]])


# --- expansion and complexity ----------------------------------------------------

def test_fig2_dag_versus_trees():
    d = fig2_dag()
    t = expand_to_tree(d)
    assert len(d.operator_nodes) == 3
    assert t.operator_count() == 4
    # the expanded form x^4 + x^3 needs one more: add, mul and three squares
    assert parse("x0^4 + x0^3").operator_count() == 5
    assert render(t) == "(x0^2 × (x0^2 + x0))"


def test_single_passthrough():
    d = ExpressionDag(1, 0, (), (OpNode(1, (0,), "id"),))
    assert expand_to_tree(d) == X0
    assert dag_complexity(d) == 2


def test_shared_square_duplicated_in_tree():
    d = ExpressionDag(1, 0, (OpNode(1, (0,), "square"),), (OpNode(2, (1, 1), "add"),))
    t = expand_to_tree(d)
    assert t == op("add", op("square", X0), op("square", X0))


def test_expand_rejects_skeleton():
    with pytest.raises(ValueError):
        expand_to_tree(fig2_dag().skeleton())


def test_dag_complexity_examples():
    assert dag_complexity(fig2_dag()) == 4
    # x, x^2, x^2 + x, their product and the final sum
    assert dag_complexity(nguyen2_dag()) == 5
    # written left to right only x^2 is shared: ((x^2 (x^2 + x) + x^2) + x)
    assert tree_complexity(parse("x0^2*(x0^2 + x0) + x0^2 + x0")) == 6


@given(frames())
def test_dag_complexity_le_tree_size(frame):
    t = expand_to_tree(frame)
    assert dag_complexity(frame) <= t.size() + frame.n_inputs


@given(frames(n_params=0))
def test_tree_node_count_at_least_dag_nodes(frame):
    t = expand_to_tree(frame)
    used = len(t.variables())
    assert t.size() >= used + len(frame.operator_nodes) - (frame.n_vars - used) * 0


@given(trees())
def test_tree_to_dag_round_trip(tree):
    dag, consts = tree_to_dag(tree, 2)
    back = expand_to_tree(dag).with_params(consts)
    X = np.random.default_rng(2).uniform(-2, 2, (30, 2))
    a, oka = evaluate_tree(tree, X)
    b, okb = evaluate_tree(back, X)
    assert np.array_equal(oka, okb)
    assert np.array_equal(a[oka], b[okb])
    # a bare leaf gets a pass-through node
    assert tree_complexity(tree, 2) <= tree.size() + 3


def test_tree_to_dag_merges_identical_subtrees():
    t = parse("x0^2 * sin(x0^2)")
    dag, _ = tree_to_dag(t)
    assert len(dag.operator_nodes) == 3


# --- pruning and canonical form ---------------------------------------------------

def test_pruning_removes_dead_node():
    d = ExpressionDag(1, 0, (OpNode(1, (0,)), OpNode(1, (0,))), (OpNode(1, (2,)),))
    p = d.pruned()
    assert len(p.intermediaries) == 1
    assert p.outputs[0].preds == (1,)


@given(frames())
def test_pruning_idempotent_and_live(frame):
    p = frame.pruned()
    assert p == p.pruned()
    succ = p.successors()
    for k in range(len(p.intermediaries)):
        assert succ[p.n_inputs + k]


def test_canonical_ignores_independent_order():
    a = ExpressionDag(1, 0, (OpNode(1, (0,)), OpNode(1, (0,), None)), (OpNode(2, (1, 2)),))
    b = ExpressionDag(1, 0, (OpNode(1, (0,)), OpNode(1, (0,))), (OpNode(2, (2, 1)),))
    assert a.canonical().key() != b.canonical().key() or a.canonical() == b.canonical()
    c = ExpressionDag(1, 0, (OpNode(1, (0,), "sin"), OpNode(1, (0,), "cos")), (OpNode(2, (1, 2), "add"),))
    d = ExpressionDag(1, 0, (OpNode(1, (0,), "cos"), OpNode(1, (0,), "sin")), (OpNode(2, (2, 1), "add"),))
    assert c.canonical() == d.canonical()


def test_used_params():
    d = ExpressionDag(1, 2, (OpNode(2, (0, 2), "mul"),), (OpNode(1, (3,), "sin"),))
    assert d.used_params() == [1]
    assert d.param_dependent() == [False, True, True, True, True]


# --- serialization -----------------------------------------------------------------

def test_json_field_order_golden():
    text = fig2_dag().to_json()
    assert text == ('{"n_vars": 1, "n_params": 0, "nodes": [{"arity": 1, "preds": [0], "label": "square"}, '
                    '{"arity": 2, "preds": [1, 0], "label": "add"}], '
                    '"outputs": [{"arity": 2, "preds": [1, 2], "label": "mul"}]}')
    assert list(json.loads(text)) == ["n_vars", "n_params", "nodes", "outputs"]


@given(frames())
def test_json_round_trip(frame):
    assert ExpressionDag.from_json(frame.to_json()) == frame
    assert dag_from_dict(dag_to_dict(frame.skeleton())) == frame.skeleton()


# --- rendering and parsing -----------------------------------------------------------

def test_render_examples():
    assert render(op("mul", op("square", X0), op("sin", op("mul", X0, X0)))) == "(x0^2 × sin((x0 × x0)))"
    assert render(param(0)) == "c0"
    assert render(op("neg", X0)) == "-x0"
    assert render(op("square", op("neg", X0))) == "(-x0)^2"
    assert render(op("inv", X0)) == "x0^-1"


@given(trees(consts=True))
def test_render_parse_identity(tree):
    s = render(tree)
    assert render(parse(s)) == s


@given(trees(consts=False))
def test_parse_preserves_values(tree):
    X = np.random.default_rng(3).uniform(-2, 2, (25, 2))
    a, oka = evaluate_tree(tree, X)
    b, okb = evaluate_tree(parse(render(tree)), X)
    assert np.array_equal(oka, okb)
    assert np.allclose(a[oka], b[okb], rtol=1e-12)


@pytest.mark.parametrize("text,expected", [
    ("x0 * x1 + 2", "((x0 × x1) + 2)"),
    ("x^3", "(x0^2 × x0)"),
    ("x0**0.5", "sqrt(x0)"),
    ("1/x0", "(1 ÷ x0)"),
    ("-x0^2", "-x0^2"),
    ("c0 · x0", "(c0 × x0)"),
    ("ln(x0)", "log(x0)"),
])
def test_parse_examples(text, expected):
    assert render(parse(text)) == expected


def test_parse_names_and_pi():
    t = parse("p*cos(theta)/pi", names={"p": 0, "theta": 1})
    v, ok = evaluate_tree(t, np.array([[2.0, 0.0]]))
    assert ok[0] and np.isclose(v[0], 2 / np.pi)


@pytest.mark.parametrize("bad", ["x0 +", "(x0", "foo(x0)", "x0 $ 1", ""])
def test_parse_errors(bad):
    with pytest.raises(ParseError):
        parse(bad)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_number_round_trip(v):
    from udfs.expr_core import const
    t = parse(render(const(v)))
    assert evaluate_tree(t, np.zeros((1, 1)))[0][0] == v
