"""Expression DAGs and expression trees.

An expression DAG has four kinds of nodes.  Variable and parameter nodes are
inputs; intermediary and output nodes carry operators.  Nodes are numbered
so that the variables come first (``0 .. n_vars-1``), then the parameters,
then the intermediaries in topological order.  Output nodes are kept in a
separate list because nothing may read from them.

A DAG whose operator nodes all carry a label is a *frame*; one without labels
is a *skeleton*.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

BINARY_OPS = ("add", "sub", "mul", "div")
# "id" (pass-through) is accepted in DAGs but is not part of the default search set
UNARY_OPS = ("neg", "inv", "sin", "cos", "log", "exp", "square", "sqrt")

_UNARY_FUNCS: dict[str, Callable] = {
    "id": np.positive,
    "neg": np.negative,
    "inv": np.reciprocal,
    "sin": np.sin,
    "cos": np.cos,
    "log": np.log,
    "exp": np.exp,
    "square": np.square,
    "sqrt": np.sqrt,
}
_BINARY_FUNCS: dict[str, Callable] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def apply_unary(label: str, a):
    with np.errstate(all="ignore"):
        return _UNARY_FUNCS[label](np.asarray(a, dtype=np.float64))


def apply_binary(label: str, a, b):
    with np.errstate(all="ignore"):
        return _BINARY_FUNCS[label](np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


@dataclass(frozen=True)
class OperatorSet:
    """Ordered operator tags.

    The order defines the labeling enumeration order of frame search, so two
    searches with the same seed only agree if they use the same order.
    """

    binary: tuple[str, ...] = BINARY_OPS
    unary: tuple[str, ...] = UNARY_OPS

    def __post_init__(self):
        object.__setattr__(self, "binary", tuple(self.binary))
        object.__setattr__(self, "unary", tuple(self.unary))
        for tag in self.binary:
            if tag not in _BINARY_FUNCS:
                raise ValueError(f"unknown binary operator {tag!r}")
        for tag in self.unary:
            if tag not in _UNARY_FUNCS:
                raise ValueError(f"unknown unary operator {tag!r}")
        if len(set(self.binary)) != len(self.binary) or len(set(self.unary)) != len(self.unary):
            raise ValueError("operator lists must not contain duplicates")
        if not self.binary or not self.unary:
            raise ValueError("operator lists must be non-empty")

    def for_arity(self, arity: int) -> tuple[str, ...]:
        return self.unary if arity == 1 else self.binary


DEFAULT_OPERATORS = OperatorSet()


@dataclass(frozen=True)
class OpNode:
    arity: int
    preds: tuple[int, ...]
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "preds", tuple(int(p) for p in self.preds))
        if self.arity not in (1, 2):
            raise ValueError(f"arity must be 1 or 2, got {self.arity}")
        if len(self.preds) != self.arity:
            raise ValueError(f"node of arity {self.arity} needs {self.arity} predecessors, got {self.preds}")
        if self.label is not None:
            valid = _UNARY_FUNCS if self.arity == 1 else _BINARY_FUNCS
            if self.label not in valid:
                raise ValueError(f"label {self.label!r} does not fit arity {self.arity}")


@dataclass(frozen=True)
class ExpressionDag:
    n_vars: int
    n_params: int
    intermediaries: tuple[OpNode, ...]
    outputs: tuple[OpNode, ...]

    def __post_init__(self):
        object.__setattr__(self, "intermediaries", tuple(self.intermediaries))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.n_vars < 0 or self.n_params < 0:
            raise ValueError("input counts must be nonnegative")
        if not self.outputs:
            raise ValueError("a DAG needs at least one output node")
        n_in = self.n_inputs
        for k, node in enumerate(self.intermediaries):
            for p in node.preds:
                if not 0 <= p < n_in + k:
                    raise ValueError(f"intermediary {k} reads node {p}, allowed range is [0, {n_in + k})")
        for node in self.outputs:
            for p in node.preds:
                if not 0 <= p < n_in + len(self.intermediaries):
                    raise ValueError(f"output reads nonexistent node {p}")

    @property
    def n_inputs(self) -> int:
        return self.n_vars + self.n_params

    @property
    def n_nodes(self) -> int:
        return self.n_inputs + len(self.intermediaries) + len(self.outputs)

    @property
    def operator_nodes(self) -> tuple[OpNode, ...]:
        return self.intermediaries + self.outputs

    @property
    def labels(self) -> tuple[str | None, ...]:
        return tuple(n.label for n in self.operator_nodes)

    @property
    def is_frame(self) -> bool:
        return all(lab is not None for lab in self.labels)

    @property
    def is_skeleton(self) -> bool:
        return all(lab is None for lab in self.labels)

    def arity_counts(self) -> tuple[int, int]:
        """Return ``(unary, binary)`` operator node counts."""
        u = sum(1 for n in self.operator_nodes if n.arity == 1)
        return u, len(self.operator_nodes) - u

    def with_labels(self, labels: Sequence[str | None]) -> "ExpressionDag":
        ops = self.operator_nodes
        if len(labels) != len(ops):
            raise ValueError(f"expected {len(ops)} labels, got {len(labels)}")
        new = [OpNode(n.arity, n.preds, lab) for n, lab in zip(ops, labels)]
        k = len(self.intermediaries)
        return ExpressionDag(self.n_vars, self.n_params, tuple(new[:k]), tuple(new[k:]))

    def skeleton(self) -> "ExpressionDag":
        return self.with_labels([None] * len(self.operator_nodes))

    def successors(self) -> list[set[int]]:
        """Successor sets of the non-output nodes, indexed by node number.

        Output successors are recorded as ``-1 - j`` for output ``j``.
        """
        succ: list[set[int]] = [set() for _ in range(self.n_inputs + len(self.intermediaries))]
        for k, node in enumerate(self.intermediaries):
            for p in node.preds:
                succ[p].add(self.n_inputs + k)
        for j, node in enumerate(self.outputs):
            for p in node.preds:
                succ[p].add(-1 - j)
        return succ

    def pruned(self) -> "ExpressionDag":
        """Recursively drop intermediaries that have no successor."""
        n_in = self.n_inputs
        live = [False] * len(self.intermediaries)
        for node in self.outputs:
            for p in node.preds:
                if p >= n_in:
                    live[p - n_in] = True
        for k in range(len(self.intermediaries) - 1, -1, -1):
            if live[k]:
                for p in self.intermediaries[k].preds:
                    if p >= n_in:
                        live[p - n_in] = True
        remap = {i: i for i in range(n_in)}
        kept = []
        for k, node in enumerate(self.intermediaries):
            if live[k]:
                remap[n_in + k] = n_in + len(kept)
                kept.append(OpNode(node.arity, tuple(remap[p] for p in node.preds), node.label))
        outs = tuple(OpNode(n.arity, tuple(remap[p] for p in n.preds), n.label) for n in self.outputs)
        return ExpressionDag(self.n_vars, self.n_params, tuple(kept), outs)

    def canonical(self) -> "ExpressionDag":
        """Prune and renumber intermediaries in depth-first post-order from the outputs.

        Two DAGs that differ only in the numbering of independent intermediaries
        map to the same canonical DAG.
        """
        n_in = self.n_inputs
        order: list[int] = []
        remap: dict[int, int] = {i: i for i in range(n_in)}

        def visit(idx: int) -> None:
            if idx in remap:
                return
            node = self.intermediaries[idx - n_in]
            for p in node.preds:
                visit(p)
            remap[idx] = n_in + len(order)
            order.append(idx)

        for node in self.outputs:
            for p in node.preds:
                visit(p)
        inter = tuple(
            OpNode(self.intermediaries[i - n_in].arity,
                   tuple(remap[p] for p in self.intermediaries[i - n_in].preds),
                   self.intermediaries[i - n_in].label)
            for i in order
        )
        outs = tuple(OpNode(n.arity, tuple(remap[p] for p in n.preds), n.label) for n in self.outputs)
        return ExpressionDag(self.n_vars, self.n_params, inter, outs)

    def key(self) -> tuple:
        """Hashable structural key (labels included)."""
        return (self.n_vars, self.n_params,
                tuple((n.arity, n.preds, n.label) for n in self.intermediaries),
                tuple((n.arity, n.preds, n.label) for n in self.outputs))

    def param_dependent(self) -> list[bool]:
        """Per-node flag: does the node's value depend on a parameter node?"""
        dep = [False] * self.n_vars + [True] * self.n_params
        for node in self.operator_nodes:
            dep.append(any(dep[p] for p in node.preds))
        return dep

    def used_params(self) -> list[int]:
        """Indices (0-based, among parameters) of parameters some output depends on."""
        n_in = self.n_inputs
        reach = [False] * (n_in + len(self.intermediaries))
        for node in self.outputs:
            for p in node.preds:
                reach[p] = True
        for k in range(len(self.intermediaries) - 1, -1, -1):
            if reach[n_in + k]:
                for p in self.intermediaries[k].preds:
                    reach[p] = True
        return [j for j in range(self.n_params) if reach[self.n_vars + j]]

    def to_json(self) -> str:
        return json.dumps(dag_to_dict(self))

    @classmethod
    def from_json(cls, text: str) -> "ExpressionDag":
        return dag_from_dict(json.loads(text))


def dag_to_dict(dag: ExpressionDag) -> dict:
    def node(n: OpNode) -> dict:
        d = {"arity": n.arity, "preds": list(n.preds)}
        if n.label is not None:
            d["label"] = n.label
        return d

    return {
        "n_vars": dag.n_vars,
        "n_params": dag.n_params,
        "nodes": [node(n) for n in dag.intermediaries],
        "outputs": [node(n) for n in dag.outputs],
    }


def dag_from_dict(d: dict) -> ExpressionDag:
    def node(e: dict) -> OpNode:
        return OpNode(int(e["arity"]), tuple(e["preds"]), e.get("label"))

    return ExpressionDag(int(d["n_vars"]), int(d["n_params"]),
                         tuple(node(e) for e in d["nodes"]),
                         tuple(node(e) for e in d["outputs"]))


@dataclass(frozen=True)
class EvalResult:
    values: np.ndarray       # (n_samples, n_outputs)
    valid_mask: np.ndarray   # (n_samples,)


def _check_inputs(dag: ExpressionDag, X, theta):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != dag.n_vars:
        raise ValueError(f"X must have shape (n_samples, {dag.n_vars}), got {X.shape}")
    theta = np.asarray([] if theta is None else theta, dtype=np.float64)
    return X, theta


def forward(dag: ExpressionDag, X: np.ndarray, thetas: np.ndarray, trace: list | None = None):
    """Evaluate a frame for a batch of parameter vectors at once.

    ``X`` is (n_samples, n_vars) and ``thetas`` is (n_theta, n_params).  Nodes
    that do not depend on a parameter are evaluated once as (n_samples,)
    vectors; the others as (n_theta, n_samples) arrays.

    Returns ``(outputs, valid)`` where ``outputs`` is a list with one
    (n_theta, n_samples) array per output node and ``valid`` is an
    (n_theta, n_samples) boolean array.
    """
    if not dag.is_frame:
        raise ValueError("only fully labeled DAGs (frames) can be evaluated")
    n_theta = thetas.shape[0]
    n = X.shape[0]
    vals: list[np.ndarray] = [X[:, j] for j in range(dag.n_vars)]
    vals += [thetas[:, j][:, None] for j in range(dag.n_params)]
    valid = np.ones((n_theta, n), dtype=bool)
    with np.errstate(all="ignore"):
        for idx, node in enumerate(dag.operator_nodes):
            if node.arity == 1:
                v = _UNARY_FUNCS[node.label](vals[node.preds[0]])
            else:
                v = _BINARY_FUNCS[node.label](vals[node.preds[0]], vals[node.preds[1]])
            if trace is not None:
                trace.append(dag.n_inputs + idx)
            valid &= np.isfinite(v)
            vals.append(v)
    outs = [np.broadcast_to(vals[dag.n_inputs + len(dag.intermediaries) + j], (n_theta, n))
            for j in range(len(dag.outputs))]
    valid &= np.all(np.isfinite(X), axis=1)
    return outs, valid


def evaluate_batch(dag: ExpressionDag, X, theta=None, trace: list | None = None) -> EvalResult:
    """Evaluate a frame row-wise on ``X`` with parameter vector ``theta``.

    Every operator node is computed exactly once (vectorized over rows), so
    shared subexpressions are never recomputed.  Domain violations do not
    raise; they clear ``valid_mask`` for the affected rows.  Pass a list as
    ``trace`` to record the node numbers in evaluation order.
    """
    X, theta = _check_inputs(dag, X, theta)
    if theta.shape != (dag.n_params,):
        raise ValueError(f"theta must have {dag.n_params} entries, got shape {theta.shape}")
    outs, valid = forward(dag, X, theta.reshape(1, -1), trace)
    values = np.stack([o[0] for o in outs], axis=1)
    return EvalResult(values=values, valid_mask=valid[0].copy())


def evaluate_grid(dag: ExpressionDag, X, thetas) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate on many parameter vectors in one pass.

    Returns values of shape (n_theta, n_samples, n_outputs) and a validity
    mask of shape (n_theta, n_samples).
    """
    X, _ = _check_inputs(dag, X, None)
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim == 1:
        thetas = thetas.reshape(-1, dag.n_params) if dag.n_params else thetas.reshape(-1, 0)
    if thetas.shape[1] != dag.n_params:
        raise ValueError(f"thetas must have {dag.n_params} columns")
    outs, valid = forward(dag, X, thetas)
    return np.stack(outs, axis=2), valid


def dag_complexity(dag: ExpressionDag) -> int:
    """Total number of input, intermediary and output nodes."""
    return dag.n_nodes


# ---------------------------------------------------------------------------
# expression trees


@dataclass(frozen=True)
class ExpressionTree:
    """Immutable expression tree.

    ``op`` is ``"var"``, ``"param"``, ``"const"`` or an operator tag.  For
    ``var``/``param`` leaves ``index`` holds the input number; for ``const``
    leaves ``value`` holds the number.
    """

    op: str
    children: tuple["ExpressionTree", ...] = ()
    index: int = -1
    value: float = 0.0
    _hash: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.op, self.children, self.index, self.value)))

    def __hash__(self):
        return self._hash

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def operator_count(self) -> int:
        return 0 if self.is_leaf else 1 + sum(c.operator_count() for c in self.children)

    def walk(self) -> Iterable["ExpressionTree"]:
        yield self
        for c in self.children:
            yield from c.walk()

    def variables(self) -> set[int]:
        return {t.index for t in self.walk() if t.op == "var"}

    def params(self) -> set[int]:
        return {t.index for t in self.walk() if t.op == "param"}

    def n_vars_required(self) -> int:
        v = self.variables()
        return max(v) + 1 if v else 0

    def substitute(self, fn: Callable[["ExpressionTree"], "ExpressionTree | None"]) -> "ExpressionTree":
        """Rebuild the tree bottom-up, replacing leaves for which ``fn`` returns a tree."""
        if self.is_leaf:
            rep = fn(self)
            return self if rep is None else rep
        kids = tuple(c.substitute(fn) for c in self.children)
        return ExpressionTree(self.op, kids)

    def with_params(self, theta: Sequence[float]) -> "ExpressionTree":
        """Replace parameter leaves by numeric constants."""
        theta = [float(t) for t in theta]
        return self.substitute(lambda t: const(theta[t.index]) if t.op == "param" else None)

    def with_vars(self, mapping: dict[int, "ExpressionTree"]) -> "ExpressionTree":
        """Replace variable leaves ``x_i`` by ``mapping[i]`` where present."""
        return self.substitute(lambda t: mapping.get(t.index) if t.op == "var" else None)

    def __str__(self) -> str:
        return render(self)

    # operator sugar, handy in tests and problem tables
    def __add__(self, o):
        return ExpressionTree("add", (self, _as_tree(o)))

    def __radd__(self, o):
        return ExpressionTree("add", (_as_tree(o), self))

    def __sub__(self, o):
        return ExpressionTree("sub", (self, _as_tree(o)))

    def __rsub__(self, o):
        return ExpressionTree("sub", (_as_tree(o), self))

    def __mul__(self, o):
        return ExpressionTree("mul", (self, _as_tree(o)))

    def __rmul__(self, o):
        return ExpressionTree("mul", (_as_tree(o), self))

    def __truediv__(self, o):
        return ExpressionTree("div", (self, _as_tree(o)))

    def __rtruediv__(self, o):
        return ExpressionTree("div", (_as_tree(o), self))

    def __neg__(self):
        return ExpressionTree("neg", (self,))


def _as_tree(o) -> ExpressionTree:
    return o if isinstance(o, ExpressionTree) else const(float(o))


def var(i: int) -> ExpressionTree:
    return ExpressionTree("var", index=int(i))


def param(j: int) -> ExpressionTree:
    return ExpressionTree("param", index=int(j))


def const(v: float) -> ExpressionTree:
    return ExpressionTree("const", value=float(v))


def op(tag: str, *children: ExpressionTree) -> ExpressionTree:
    return ExpressionTree(tag, tuple(_as_tree(c) for c in children))


def expand_to_tree(dag: ExpressionDag, output: int = 0) -> ExpressionTree:
    """Expand one output of a frame into a tree, duplicating shared nodes."""
    if not dag.is_frame:
        raise ValueError("cannot expand a DAG with unlabeled operator nodes")
    memo: dict[int, ExpressionTree] = {}
    for i in range(dag.n_vars):
        memo[i] = var(i)
    for j in range(dag.n_params):
        memo[dag.n_vars + j] = param(j)
    def make(node: OpNode) -> ExpressionTree:
        if node.label == "id":
            return memo[node.preds[0]]
        return ExpressionTree(node.label, tuple(memo[p] for p in node.preds))

    for k, node in enumerate(dag.intermediaries):
        memo[dag.n_inputs + k] = make(node)
    return make(dag.outputs[output])


def tree_to_dag(tree: ExpressionTree, n_vars: int | None = None) -> tuple[ExpressionDag, np.ndarray]:
    """Build a DAG from a tree by merging identical subtrees.

    Parameter leaves and numeric constants both become parameter nodes; the
    returned vector holds their values (parameter leaves get ``nan``
    placeholders).  A bare leaf becomes a single pass-through (``id``) output.
    """
    if n_vars is None:
        n_vars = tree.n_vars_required()
    const_index: dict[tuple, int] = {}
    consts: list[float] = []
    for t in tree.walk():
        if t.op in ("param", "const"):
            k = (t.op, t.index if t.op == "param" else t.value)
            if k not in const_index:
                const_index[k] = len(consts)
                consts.append(t.value if t.op == "const" else float("nan"))
    n_in = n_vars + len(consts)
    nodes: list[OpNode] = []
    memo: dict[ExpressionTree, int] = {}

    def build(t: ExpressionTree) -> int:
        if t.op == "var":
            return t.index
        if t.op in ("param", "const"):
            return n_vars + const_index[(t.op, t.index if t.op == "param" else t.value)]
        if t in memo:
            return memo[t]
        preds = tuple(build(c) for c in t.children)
        memo[t] = n_in + len(nodes)
        nodes.append(OpNode(len(preds), preds, t.op))
        return memo[t]

    if tree.is_leaf:
        dag = ExpressionDag(n_vars, len(consts), (), (OpNode(1, (build(tree),), "id"),))
        return dag, np.asarray(consts, dtype=np.float64)
    root = build(tree)
    out = nodes.pop()
    assert root == n_in + len(nodes)
    dag = ExpressionDag(n_vars, len(consts), tuple(nodes), (out,))
    return dag, np.asarray(consts, dtype=np.float64)


def tree_complexity(tree: ExpressionTree, n_vars: int | None = None) -> int:
    """DAG node count of a tree after merging identical subtrees."""
    if n_vars is None:
        n_vars = tree.n_vars_required()
    dag, _ = tree_to_dag(tree, n_vars)
    return dag_complexity(dag)


def evaluate_tree(tree: ExpressionTree, X, theta=None) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a tree on rows of ``X``; returns ``(values, valid_mask)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    theta = [] if theta is None else [float(t) for t in theta]
    n = X.shape[0]
    valid = np.ones(n, dtype=bool)
    cache: dict[ExpressionTree, np.ndarray] = {}

    def ev(t: ExpressionTree) -> np.ndarray:
        if t.op == "var":
            return X[:, t.index]
        if t.op == "param":
            return np.full(n, theta[t.index])
        if t.op == "const":
            return np.full(n, t.value)
        # no memoization on purpose: a tree is evaluated as a tree
        if len(t.children) == 1:
            v = apply_unary(t.op, ev(t.children[0]))
        else:
            v = apply_binary(t.op, ev(t.children[0]), ev(t.children[1]))
        valid[~np.isfinite(v)] = False
        return v

    out = np.broadcast_to(ev(tree), (n,)).astype(np.float64)
    valid &= np.isfinite(out)
    return out, valid


# ---------------------------------------------------------------------------
# rendering and parsing

_BIN_SYMBOL = {"add": "+", "sub": "-", "mul": "×", "div": "÷"}
_FUNC_NAMES = {"sin", "cos", "log", "exp", "sqrt"}


def format_number(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def render(tree: ExpressionTree) -> str:
    """Fully parenthesized string in the expression grammar.

    Variables render as ``x0, x1, ...``, parameters as ``c0, c1, ...``.
    """
    t = tree
    if t.op == "var":
        return f"x{t.index}"
    if t.op == "param":
        return f"c{t.index}"
    if t.op == "const":
        return format_number(t.value)
    if t.op in _BIN_SYMBOL:
        a, b = t.children
        return f"({render(a)} {_BIN_SYMBOL[t.op]} {render(b)})"
    (a,) = t.children
    inner = render(a)
    if t.op == "id":
        return inner
    if t.op == "neg":
        return "-" + inner
    if t.op in ("square", "inv"):
        # a postfix power would otherwise bind into a leading minus
        if inner.startswith("-"):
            inner = f"({inner})"
        return inner + ("^2" if t.op == "square" else "^-1")
    return f"{t.op}({inner})"


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/×÷^(),·]))")


class ParseError(ValueError):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos = 0
    out = []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        num, name, sym = m.groups()
        if num is not None:
            out.append(("num", num))
        elif name is not None:
            out.append(("name", name))
        else:
            out.append(("sym", sym))
        pos = m.end()
    return out


def power(base: ExpressionTree, exponent: float) -> ExpressionTree:
    """``base ** exponent`` built from the grammar's operators."""
    e = float(exponent)
    if e == 1:
        return base
    if e == 0:
        return const(1.0)
    if e == 2:
        return op("square", base)
    if e == -1:
        return op("inv", base)
    if e == 0.5:
        return op("sqrt", base)
    if e < 0:
        return op("inv", power(base, -e))
    if e == int(e):
        n = int(e)
        half = power(base, n // 2)
        sq = op("square", half)
        return sq if n % 2 == 0 else op("mul", sq, base)
    if (2 * e) == int(2 * e):
        return power(op("sqrt", base), 2 * e)
    return op("exp", op("mul", const(e), op("log", base)))


class _Parser:
    def __init__(self, tokens, names):
        self.toks = tokens
        self.i = 0
        self.names = names

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, sym):
        kind, val = self.take()
        if kind != "sym" or val != sym:
            raise ParseError(f"expected {sym!r}, got {val!r}")

    def parse(self):
        t = self.expr()
        if self.i != len(self.toks):
            raise ParseError(f"trailing input at token {self.peek()[1]!r}")
        return t

    def expr(self):
        t = self.term()
        while True:
            kind, val = self.peek()
            if kind == "sym" and val in ("+", "-"):
                self.take()
                t = op("add" if val == "+" else "sub", t, self.term())
            else:
                return t

    def term(self):
        t = self.unary()
        while True:
            kind, val = self.peek()
            if kind == "sym" and val in ("*", "×", "·", "/", "÷"):
                self.take()
                t = op("mul" if val in ("*", "×", "·") else "div", t, self.unary())
            else:
                return t

    def unary(self):
        kind, val = self.peek()
        if kind == "sym" and val == "-":
            self.take()
            nk, _ = self.peek()
            inner = self.unary()
            if nk == "num" and inner.op == "const":
                return const(-inner.value)
            return op("neg", inner)
        if kind == "sym" and val == "+":
            self.take()
            return self.unary()
        return self.postfix()

    def exponent(self):
        kind, val = self.peek()
        sign = 1.0
        if kind == "sym" and val == "-":
            self.take()
            sign = -1.0
            kind, val = self.peek()
        if kind == "num":
            self.take()
            return sign * float(val)
        if kind == "sym" and val == "(":
            t = self.atom()
            if t.op == "const":
                return sign * t.value
            return op("neg", t) if sign < 0 else t
        raise ParseError(f"bad exponent {val!r}")

    def postfix(self):
        t = self.atom()
        while True:
            kind, val = self.peek()
            if kind == "sym" and val in ("^", "**"):
                self.take()
                e = self.exponent()
                if isinstance(e, ExpressionTree):
                    t = op("exp", op("mul", e, op("log", t)))
                else:
                    t = power(t, e)
            else:
                return t

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "sym" and val == "(":
            t = self.expr()
            self.expect(")")
            return t
        if kind == "name":
            nk, nv = self.peek()
            if nk == "sym" and nv == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                return _apply_function(val, arg)
            if val in self.names:
                return var(self.names[val])
            if val == "x":
                return var(0)
            m = re.fullmatch(r"x_?(\d+)", val)
            if m:
                return var(int(m.group(1)))
            m = re.fullmatch(r"c_?(\d+)", val)
            if m:
                return param(int(m.group(1)))
            if val == "pi":
                return const(math.pi)
            if val == "e":
                return const(math.e)
            raise ParseError(f"unknown name {val!r}")
        raise ParseError(f"unexpected token {val!r}")


def _apply_function(name: str, arg: ExpressionTree) -> ExpressionTree:
    if name in _FUNC_NAMES:
        return op(name, arg)
    if name == "ln":
        return op("log", arg)
    if name == "tanh":
        e2 = op("exp", op("mul", const(2.0), arg))
        return op("div", op("sub", e2, const(1.0)), op("add", e2, const(1.0)))
    raise ParseError(f"unsupported function {name!r}")


def parse(text: str, names: dict[str, int] | None = None) -> ExpressionTree:
    """Parse an infix expression into a tree.

    Accepts the rendered grammar (``×``, ``÷``, postfix ``^2``/``^-1``) as
    well as ASCII ``*``, ``/`` and ``**``.  Numeric powers are rewritten with
    the available operators, e.g. ``x0^3`` becomes ``(x0^2 × x0)``.
    ``names`` maps extra identifiers to variable indices.
    """
    return _Parser(_tokenize(text), names or {}).parse()
