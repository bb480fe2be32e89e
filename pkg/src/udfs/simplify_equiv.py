"""Normal forms, recovery checks and subexpression-set similarity.

Normalization is done with sympy (``expand`` over real symbols, with
integer-valued floats folded to integers and half-integer float exponents
turned into rationals).  Normal forms are printed with a small custom printer
so that the strings are deterministic and parse back with ``expr_core.parse``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from .expr_core import (ExpressionTree, const, evaluate_tree, format_number, op, param, parse,
                        power, var)

_SYMS: dict[str, sp.Symbol] = {}


def symbol(name: str) -> sp.Symbol:
    if name not in _SYMS:
        _SYMS[name] = sp.Symbol(name, real=True)
    return _SYMS[name]


def _number(v: float) -> sp.Expr:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return sp.Integer(int(v))
    return sp.Float(v)


_SP_UNARY = {
    "neg": lambda a: -a,
    "inv": lambda a: 1 / a,
    "sin": sp.sin,
    "cos": sp.cos,
    "log": sp.log,
    "exp": sp.exp,
    "square": lambda a: a ** 2,
    "sqrt": sp.sqrt,
    "id": lambda a: a,
}
_SP_BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}


def to_sympy(tree: ExpressionTree) -> sp.Expr:
    memo: dict[ExpressionTree, sp.Expr] = {}

    def conv(t: ExpressionTree) -> sp.Expr:
        if t in memo:
            return memo[t]
        if t.op == "var":
            e = symbol(f"x{t.index}")
        elif t.op == "param":
            e = symbol(f"c{t.index}")
        elif t.op == "const":
            e = _number(t.value)
        elif len(t.children) == 1:
            e = _SP_UNARY[t.op](conv(t.children[0]))
        else:
            e = _SP_BINARY[t.op](conv(t.children[0]), conv(t.children[1]))
        memo[t] = e
        return e

    return conv(tree)


def from_sympy(expr: sp.Expr) -> ExpressionTree:
    """Convert a sympy expression built from the supported functions back to a tree."""
    if expr.is_Symbol:
        name = expr.name
        if name.startswith("x"):
            return var(int(name[1:]))
        if name.startswith("c"):
            return param(int(name[1:]))
        raise ValueError(f"unknown symbol {name}")
    if expr is sp.E:
        return op("exp", const(1.0))
    if expr is sp.pi:
        return const(math.pi)
    if expr is sp.nan:
        return const(math.nan)
    if expr.is_Number:
        return const(float(expr))
    if expr.is_Add:
        terms = _ordered_terms(expr)
        t = from_sympy(terms[0])
        for term in terms[1:]:
            t = op("add", t, from_sympy(term))
        return t
    if expr.is_Mul:
        factors = _ordered_factors(expr)
        t = from_sympy(factors[0])
        for f in factors[1:]:
            t = op("mul", t, from_sympy(f))
        return t
    if expr.is_Pow:
        base, ex = expr.args
        b = from_sympy(base)
        if ex.is_Number and float(2 * ex) == int(2 * ex):
            return power(b, float(ex))
        return op("exp", op("mul", from_sympy(ex), op("log", b)))
    if isinstance(expr, sp.Abs):
        return op("sqrt", op("square", from_sympy(expr.args[0])))
    for name, fn in (("sin", sp.sin), ("cos", sp.cos), ("log", sp.log), ("exp", sp.exp)):
        if isinstance(expr, fn):
            return op(name, from_sympy(expr.args[0]))
    raise ValueError(f"cannot convert {expr!r} to an expression tree")


def _degree(term: sp.Expr) -> float:
    """Degree proxy of a product term: summed numeric exponents of symbolic factors."""
    deg = 0.0
    for base, ex in term.as_powers_dict().items():
        if base.free_symbols:
            deg += float(ex) if ex.is_Number else 1.0
    return deg


def _term_key(term: sp.Expr):
    # numbers sort alike whether sympy holds them as Rational or Float
    kind = "" if term.is_Number else type(term).__name__
    return (-_degree(term), kind, to_text(term))


def _ordered_terms(expr: sp.Add) -> list[sp.Expr]:
    return sorted(expr.args, key=_term_key)


def _ordered_factors(expr: sp.Mul) -> list[sp.Expr]:
    nums = [a for a in expr.args if a.is_Number]
    rest = sorted((a for a in expr.args if not a.is_Number), key=_term_key)
    return nums + rest


def _atomic(text: str) -> bool:
    if text.startswith("(") and text.endswith(")"):
        depth = 0
        for i, ch in enumerate(text):
            depth += ch == "("
            depth -= ch == ")"
            if depth == 0 and i < len(text) - 1:
                return False
        return True
    return all(ch.isalnum() or ch in "._" for ch in text) and not text.startswith("-")


def to_text(expr: sp.Expr) -> str:
    """Deterministic printer in the expression grammar (n-ary sums and products)."""
    if expr.is_Symbol:
        return expr.name
    if expr is sp.E:
        return "exp(1)"
    if expr is sp.pi:
        return "pi"
    if expr is sp.nan:
        return "nan"
    if expr.is_Integer:
        return str(int(expr))
    if expr.is_Rational:
        return format_number(float(expr))
    if expr.is_Float:
        return format_number(float(expr))
    if expr.is_Add:
        parts = []
        for k, term in enumerate(_ordered_terms(expr)):
            coeff, _ = term.as_coeff_Mul()
            if k > 0 and coeff.is_Number and coeff < 0:
                parts.append(" - " + to_text(-term))
            elif k > 0:
                parts.append(" + " + to_text(term))
            else:
                parts.append(to_text(term))
        return "(" + "".join(parts) + ")"
    if expr.is_Mul:
        factors = _ordered_factors(expr)
        if factors[0] == -1:
            rest = sp.Mul(*factors[1:])
            inner = to_text(rest)
            return "-" + (inner if _atomic(inner) else f"({inner})")
        return "(" + " × ".join(to_text(f) for f in factors) + ")"
    if expr.is_Pow:
        base, ex = expr.args
        b = to_text(base)
        if not _atomic(b):
            b = f"({b})"
        if ex == sp.Rational(1, 2):
            return f"sqrt({to_text(base)})"
        if ex.is_Number:
            return f"{b}^{format_number(float(ex))}"
        return f"exp(({to_text(ex)} × log({to_text(base)})))"
    if isinstance(expr, sp.Abs):
        return f"sqrt({to_text(expr.args[0])}^2)"
    if isinstance(expr, (sp.sin, sp.cos, sp.log, sp.exp)):
        return f"{type(expr).__name__}({to_text(expr.args[0])})"
    raise ValueError(f"cannot print {expr!r}")


def _fold_numbers(expr: sp.Expr) -> sp.Expr:
    rep = {}
    for sub in sp.preorder_traversal(expr):
        if not sub.free_symbols and not sub.is_Number:
            try:
                v = complex(sub.evalf())
            except TypeError:  # zoo and friends
                v = complex(math.nan, 1.0)
            rep[sub] = _number(v.real) if v.imag == 0 and math.isfinite(v.real) else sp.nan
    if rep:
        # outer constant subtrees are replaced before the ones inside them
        expr = expr.xreplace(rep)
        rep = {}
    for f in expr.atoms(sp.Float):
        v = float(f)
        if math.isfinite(v) and v == int(v):
            rep[f] = sp.Integer(int(v))
    for p in expr.atoms(sp.Pow):
        ex = p.exp
        if ex.is_Float and float(2 * ex) == int(2 * ex):
            rep[p] = sp.Pow(p.base, sp.Rational(int(2 * ex), 2))
    return expr.xreplace(rep) if rep else expr


_NON_REAL = (sp.I, sp.zoo, sp.oo, -sp.oo, sp.nan)


def _canonical(expr: sp.Expr) -> sp.Expr:
    if expr.has(*_NON_REAL):
        # e.g. log(-1) or 1/0: the expression is undefined on every real input
        return sp.nan
    for _ in range(4):
        new = sp.expand(_fold_numbers(expr))
        if new == expr:
            break
        expr = new
    return sp.nan if expr.has(*_NON_REAL) else expr


@dataclass(frozen=True)
class NormalForm:
    expr: sp.Expr
    text: str

    @property
    def tree(self) -> ExpressionTree:
        return from_sympy(self.expr)

    def __str__(self) -> str:
        return self.text


def normalize(tree: ExpressionTree | NormalForm | str) -> NormalForm:
    """Expanded canonical form: folded constants, flattened and ordered sums and products."""
    if isinstance(tree, NormalForm):
        tree = tree.tree
    elif isinstance(tree, str):
        tree = parse(tree)
    expr = _canonical(to_sympy(tree))
    return NormalForm(expr, to_text(expr))


@dataclass(frozen=True)
class RecoveryVerdict:
    recovered: bool
    mode: str                 # "difference-constant", "ratio-constant" or "none"
    witness_constant: float | None
    path: str                 # "symbolic", "numeric" or "none"


_NOT_RECOVERED = RecoveryVerdict(False, "none", None, "none")


def _as_tree(e) -> ExpressionTree:
    return parse(e) if isinstance(e, str) else e


def _symbolic_constant(expr: sp.Expr) -> sp.Expr | None:
    expr = _canonical(expr)
    if not expr.free_symbols:
        return expr
    if sp.count_ops(expr) <= 40:
        try:
            s = sp.simplify(expr)
        except Exception:  # sympy can fail on unusual forms; numeric path covers it
            return None
        if not s.free_symbols:
            return s
    return None


def _finite_number(e: sp.Expr) -> float | None:
    try:
        v = complex(e)
    except (TypeError, ValueError):
        return None
    if v.imag != 0 or not math.isfinite(v.real):
        return None
    return v.real


def _sample_points(n_vars: int, domain, rng, count):
    if domain is None:
        return rng.uniform(-2.0, 2.0, size=(count, n_vars))
    lo = np.array([d[0] for d in domain], dtype=float)
    hi = np.array([d[1] for d in domain], dtype=float)
    return rng.uniform(lo, hi, size=(count, n_vars))


def numeric_check(truth: ExpressionTree, candidate: ExpressionTree, domain=None,
                  n_points: int = 200, seed: int = 0, rtol: float = 1e-7) -> RecoveryVerdict:
    """Decide recovery by sampling: the difference or ratio must be constant."""
    n_vars = max(truth.n_vars_required(), candidate.n_vars_required(), 1)
    if domain is not None:
        n_vars = max(n_vars, len(domain))
        domain = list(domain) + [(-2.0, 2.0)] * (n_vars - len(domain))
    rng = np.random.default_rng(seed)
    attempts = [domain] if domain is not None else [None, [(0.1, 2.0)] * n_vars]
    for dom in attempts:
        X = _sample_points(n_vars, dom, rng, 10 * n_points)
        ft, vt = evaluate_tree(truth, X)
        fc, vc = evaluate_tree(candidate, X)
        ok = vt & vc
        if ok.sum() < n_points:
            continue
        ft, fc = ft[ok][: 5 * n_points], fc[ok][: 5 * n_points]
        diff = ft - fc
        m = float(np.median(diff))
        # pointwise slack scales with the magnitudes, since subtracting two
        # large values loses the absolute digits a small constant lives in
        if np.all(np.abs(diff - m) <= rtol * (1 + abs(m) + np.maximum(np.abs(ft), np.abs(fc)))):
            return RecoveryVerdict(True, "difference-constant", m, "numeric")
        # points near a common zero only carry rounding noise; the median
        # magnitude sets the scale so that a pole elsewhere cannot mask them
        size = np.maximum(np.abs(ft), np.abs(fc))
        use = (size > 1e-9 * float(np.median(size))) & (size > 1e-250)
        if use.sum() >= n_points:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = fc[use] / ft[use]
            mr = float(np.median(ratio))
            # an identically zero candidate gives mr == 0 and is not a recovery
            if mr != 0 and np.isfinite(mr) and np.all(np.abs(ratio - mr) <= rtol * (1 + abs(mr))):
                return RecoveryVerdict(True, "ratio-constant", mr, "numeric")
        return _NOT_RECOVERED
    return _NOT_RECOVERED


def symbolic_check(truth: ExpressionTree, candidate: ExpressionTree) -> RecoveryVerdict:
    t, c = to_sympy(truth), to_sympy(candidate)
    d = _symbolic_constant(t - c)
    if d is not None:
        v = _finite_number(d)
        if v is not None:
            return RecoveryVerdict(True, "difference-constant", v, "symbolic")
    if _canonical(c) != 0 and _canonical(t) != 0:
        r = _symbolic_constant(sp.cancel(sp.together(c / t)))
        if r is not None:
            v = _finite_number(r)
            if v is not None and v != 0:
                return RecoveryVerdict(True, "ratio-constant", v, "symbolic")
    return _NOT_RECOVERED


def check_recovery(truth, candidate, strict_symbolic: bool = False, domain=None,
                   n_points: int = 200, seed: int = 0) -> RecoveryVerdict:
    """Is ``candidate`` the ground truth up to an additive or multiplicative constant?

    The symbolic path is tried first; unless ``strict_symbolic`` is set, a
    numeric check on random points (inside ``domain`` when given) is the
    fallback.  The verdict records which path decided.
    """
    truth, candidate = _as_tree(truth), _as_tree(candidate)
    verdict = symbolic_check(truth, candidate)
    if verdict.recovered or strict_symbolic:
        return verdict
    return numeric_check(truth, candidate, domain=domain, n_points=n_points, seed=seed)


@lru_cache(maxsize=4096)
def _subexpressions(tree: ExpressionTree) -> frozenset[str]:
    expr = normalize(tree).expr
    return frozenset(to_text(s) for s in sp.preorder_traversal(expr))


def subexpression_set(tree) -> set[str]:
    """Printed normal-form subexpressions, leaves and the full expression included."""
    return set(_subexpressions(_as_tree(tree)))


def jaccard_index(e1, e2) -> float:
    a, b = _subexpressions(_as_tree(e1)), _subexpressions(_as_tree(e2))
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def simplified_complexity(tree) -> int:
    """Node count, leaves included, of the normal form's expression tree."""
    expr = normalize(_as_tree(tree)).expr
    return sum(1 for _ in sp.preorder_traversal(expr))
