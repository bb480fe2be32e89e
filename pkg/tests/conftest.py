import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from udfs.expr_core import BINARY_OPS, UNARY_OPS, ExpressionDag, OpNode, const, op, var

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@st.composite
def frames(draw, n_vars=None, n_params=None, max_inter=4):
    """Random labeled DAGs that satisfy the construction rules."""
    nv = draw(st.integers(1, 3)) if n_vars is None else n_vars
    npar = draw(st.integers(0, 2)) if n_params is None else n_params
    n_in = nv + npar
    k = draw(st.integers(0, max_inter))
    nodes = []
    for j in range(k + 1):
        hi = n_in + j - 1
        arity = draw(st.integers(1, 2))
        preds = tuple(draw(st.integers(0, hi)) for _ in range(arity))
        label = draw(st.sampled_from(UNARY_OPS if arity == 1 else BINARY_OPS))
        nodes.append(OpNode(arity, preds, label))
    return ExpressionDag(nv, npar, tuple(nodes[:-1]), (nodes[-1],)).pruned()


@st.composite
def trees(draw, n_vars=2, max_depth=4, consts=True):
    """Random expression trees over the default operators."""
    def build(depth):
        leaf_only = depth >= max_depth
        kind = draw(st.sampled_from(["leaf"] if leaf_only else ["leaf", "un", "bin", "bin"]))
        if kind == "leaf":
            if consts and draw(st.booleans()) and draw(st.booleans()):
                return const(draw(st.sampled_from([1.0, 2.0, 0.5, 3.0])))
            return var(draw(st.integers(0, n_vars - 1)))
        if kind == "un":
            return op(draw(st.sampled_from(UNARY_OPS)), build(depth + 1))
        return op(draw(st.sampled_from(BINARY_OPS)), build(depth + 1), build(depth + 1))
    return build(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
