"""Typed expression trees over named features.

Numeric nodes (``Feature``, ``Const``, ``NumBinary``) produce numbers;
boolean nodes (``Compare``, ``BoolBinary``, ``Not``) produce truth values.
A classifier is any boolean-rooted tree.

Textual grammar::

    bool := bool "||" bool | bool "&&" bool | "!" bool | "(" bool ")" | cmp
    cmp  := num rel num            rel := ">" | ">=" | "<" | "<=" | "=="
    num  := num ("+"|"-"|"*"|"/") num | "max(" num "," num ")"
          | "min(" num "," num ")" | "(" num ")" | feature | const

Binding, tightest first: ``!``, ``* /``, ``+ -``, comparisons, ``&&``, ``||``.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .errors import ExprError, ExprSyntaxError, ExprTypeError, UnknownFeatureError

NUM_OPS = ("+", "-", "*", "/", "max", "min")
RELATIONS = (">", ">=", "<", "<=", "==")
BOOL_OPS = ("&&", "||")
CONST_POOL = (0.0, 1.0, 2.0, 3.0, 5.0, 0.5)
EQ_TOL = 1e-9


@dataclass(frozen=True, slots=True)
class Feature:
    name: str


@dataclass(frozen=True, slots=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ExprError(f"constant {self.value!r} is not finite")


@dataclass(frozen=True, slots=True)
class NumBinary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Compare:
    rel: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class BoolBinary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Not:
    child: "Expr"


Expr = Union[Feature, Const, NumBinary, Compare, BoolBinary, Not]
BOOL_NODES = (Compare, BoolBinary, Not)
LEAF_NODES = (Feature, Const)


def is_bool(node) -> bool:
    return isinstance(node, BOOL_NODES)


def children(node) -> tuple:
    if isinstance(node, Not):
        return (node.child,)
    if isinstance(node, LEAF_NODES):
        return ()
    return (node.left, node.right)


def with_children(node, kids):
    if isinstance(node, Not):
        return Not(kids[0])
    if isinstance(node, NumBinary):
        return NumBinary(node.op, kids[0], kids[1])
    if isinstance(node, Compare):
        return Compare(node.rel, kids[0], kids[1])
    if isinstance(node, BoolBinary):
        return BoolBinary(node.op, kids[0], kids[1])
    return node


# ---------------------------------------------------------------- structure


def complexity(expr) -> int:
    """Total node count, leaves included."""
    return 1 + sum(complexity(c) for c in children(expr))


def depth(expr) -> int:
    """Longest root-to-leaf path counted in edges; a bare leaf has depth 0."""
    kids = children(expr)
    return 0 if not kids else 1 + max(depth(c) for c in kids)


def walk(expr, path=()) -> Iterator[tuple[tuple[int, ...], object]]:
    """Pre-order (path, node) pairs; a path is the tuple of child indices."""
    yield path, expr
    for i, c in enumerate(children(expr)):
        yield from walk(c, path + (i,))


def node_at(expr, path):
    for i in path:
        expr = children(expr)[i]
    return expr


def replace_at(expr, path, new):
    if not path:
        return new
    kids = list(children(expr))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(expr, kids)


def features_used(expr) -> set[str]:
    return {n.name for _, n in walk(expr) if isinstance(n, Feature)}


# ----------------------------------------------------------------- typing


def check(expr, schema=None, path: str = "$") -> str:
    """Type-check ``expr``; return ``"num"`` or ``"bool"``.

    Raises ExprTypeError with the node path on a mismatch, and
    UnknownFeatureError when ``schema`` is given and a name is not in it.
    """
    if isinstance(expr, Feature):
        if schema is not None and expr.name not in schema.index:
            raise UnknownFeatureError(expr.name)
        return "num"
    if isinstance(expr, Const):
        if not math.isfinite(expr.value):
            raise ExprTypeError("non-finite constant", path)
        return "num"
    if isinstance(expr, NumBinary):
        if expr.op not in NUM_OPS:
            raise ExprTypeError(f"unknown numeric operator {expr.op!r}", path)
        for side in ("left", "right"):
            if check(getattr(expr, side), schema, f"{path}.{side}") != "num":
                raise ExprTypeError(f"operator {expr.op!r} needs a numeric {side} operand", f"{path}.{side}")
        return "num"
    if isinstance(expr, Compare):
        if expr.rel not in RELATIONS:
            raise ExprTypeError(f"unknown relation {expr.rel!r}", path)
        for side in ("left", "right"):
            if check(getattr(expr, side), schema, f"{path}.{side}") != "num":
                raise ExprTypeError(f"comparison {expr.rel!r} needs a numeric {side} operand", f"{path}.{side}")
        return "bool"
    if isinstance(expr, BoolBinary):
        if expr.op not in BOOL_OPS:
            raise ExprTypeError(f"unknown logical operator {expr.op!r}", path)
        for side in ("left", "right"):
            if check(getattr(expr, side), schema, f"{path}.{side}") != "bool":
                raise ExprTypeError(f"operator {expr.op!r} needs a boolean {side} operand", f"{path}.{side}")
        return "bool"
    if isinstance(expr, Not):
        if check(expr.child, schema, f"{path}.child") != "bool":
            raise ExprTypeError("'!' needs a boolean operand", f"{path}.child")
        return "bool"
    raise ExprTypeError(f"not an expression node: {expr!r}", path)


def check_classifier(expr, schema=None):
    if check(expr, schema) != "bool":
        raise ExprTypeError("classifier root must be boolean", "$")
    return expr


def is_well_typed(expr, schema=None) -> bool:
    try:
        check_classifier(expr, schema)
    except ExprError:
        return False
    return True


# --------------------------------------------------------------- printing


def format_const(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def to_text(expr) -> str:
    """Canonical, fully parenthesised form. No rewriting is applied."""
    if isinstance(expr, Feature):
        return expr.name
    if isinstance(expr, Const):
        return format_const(expr.value)
    if isinstance(expr, NumBinary):
        if expr.op in ("max", "min"):
            return f"{expr.op}({to_text(expr.left)}, {to_text(expr.right)})"
        return f"({to_text(expr.left)} {expr.op} {to_text(expr.right)})"
    if isinstance(expr, Compare):
        return f"({to_text(expr.left)} {expr.rel} {to_text(expr.right)})"
    if isinstance(expr, BoolBinary):
        return f"({to_text(expr.left)} {expr.op} {to_text(expr.right)})"
    if isinstance(expr, Not):
        return f"(!{to_text(expr.child)})"
    raise ExprError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z0-9_]+)*)
  | (?P<op>\|\||&&|>=|<=|==|[-+*/()<>!,])
    """,
    re.VERBOSE,
)


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.or_expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", pos)
        return node

    def or_expr(self):
        node = self.and_expr()
        while self.peek()[1] == "||":
            self.take()
            node = BoolBinary("||", node, self.and_expr())
        return node

    def and_expr(self):
        node = self.cmp_expr()
        while self.peek()[1] == "&&":
            self.take()
            node = BoolBinary("&&", node, self.cmp_expr())
        return node

    def cmp_expr(self):
        node = self.add_expr()
        if self.peek()[1] in RELATIONS and self.peek()[0] == "op":
            rel = self.take()[1]
            node = Compare(rel, node, self.add_expr())
        return node

    def add_expr(self):
        node = self.mul_expr()
        while self.peek()[0] == "op" and self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = NumBinary(op, node, self.mul_expr())
        return node

    def mul_expr(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = NumBinary(op, node, self.unary())
        return node

    def unary(self):
        kind, val, pos = self.peek()
        if val == "!" and kind == "op":
            self.take()
            return Not(self.unary())
        if val == "-" and kind == "op":
            self.take()
            nkind, nval, npos = self.take()
            if nkind != "number":
                raise ExprSyntaxError("'-' is only allowed before a numeric literal", npos)
            return Const(-float(nval))
        return self.primary()

    def primary(self):
        kind, val, pos = self.take()
        if kind == "number":
            value = float(val)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"constant {val} is not finite", pos)
            return Const(value)
        if kind == "ident":
            if val in ("max", "min"):
                self.expect("(")
                left = self.or_expr()
                self.expect(",")
                right = self.or_expr()
                self.expect(")")
                return NumBinary(val, left, right)
            if "." not in val:
                raise ExprSyntaxError(f"unknown identifier {val!r}", pos)
            return Feature(val)
        if val == "(" and kind == "op":
            node = self.or_expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse_any(text: str, schema=None):
    """Parse and type-check without requiring a boolean root."""
    node = _Parser(text).parse()
    check(node, schema)
    return node


def parse(text: str, schema=None):
    """Parse a classifier expression (boolean root) and resolve its features."""
    node = parse_any(text, schema)
    return check_classifier(node, schema)


# ------------------------------------------------------------- evaluation


def _scalar(expr, values, index):
    if isinstance(expr, Feature):
        try:
            return float(values[index[expr.name]])
        except KeyError:
            raise UnknownFeatureError(expr.name) from None
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, NumBinary):
        a = _scalar(expr.left, values, index)
        b = _scalar(expr.right, values, index)
        op = expr.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return a / b if b != 0 else 0.0
        if math.isnan(a) or math.isnan(b):
            return math.nan
        return max(a, b) if op == "max" else min(a, b)
    if isinstance(expr, Compare):
        a = _scalar(expr.left, values, index)
        b = _scalar(expr.right, values, index)
        rel = expr.rel
        if rel == ">":
            return a > b
        if rel == ">=":
            return a >= b
        if rel == "<":
            return a < b
        if rel == "<=":
            return a <= b
        return a == b or abs(a - b) <= EQ_TOL
    if isinstance(expr, BoolBinary):
        left = _scalar(expr.left, values, index)
        if expr.op == "&&":
            return left and _scalar(expr.right, values, index)
        return left or _scalar(expr.right, values, index)
    if isinstance(expr, Not):
        return not _scalar(expr.child, values, index)
    raise ExprError(f"not an expression node: {expr!r}")


def evaluate(expr, features, schema) -> bool:
    """Truth value of a classifier on one feature vector."""
    return bool(_scalar(expr, features, schema.index))


def evaluate_value(expr, features, schema):
    """Value of any well-typed node (number or bool) on one feature vector."""
    return _scalar(expr, features, schema.index)


def _batch(expr, X, index):
    if isinstance(expr, Feature):
        try:
            return X[:, index[expr.name]]
        except KeyError:
            raise UnknownFeatureError(expr.name) from None
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, NumBinary):
        a = _batch(expr.left, X, index)
        b = _batch(expr.right, X, index)
        op = expr.op
        if op == "+":
            return np.add(a, b)
        if op == "-":
            return np.subtract(a, b)
        if op == "*":
            return np.multiply(a, b)
        if op == "/":
            nz = np.not_equal(b, 0)
            return np.where(nz, np.divide(a, np.where(nz, b, 1.0)), 0.0)
        return np.maximum(a, b) if op == "max" else np.minimum(a, b)
    if isinstance(expr, Compare):
        a = _batch(expr.left, X, index)
        b = _batch(expr.right, X, index)
        rel = expr.rel
        if rel == ">":
            return np.greater(a, b)
        if rel == ">=":
            return np.greater_equal(a, b)
        if rel == "<":
            return np.less(a, b)
        if rel == "<=":
            return np.less_equal(a, b)
        return np.equal(a, b) | (np.abs(np.subtract(a, b)) <= EQ_TOL)
    if isinstance(expr, BoolBinary):
        a = _batch(expr.left, X, index)
        b = _batch(expr.right, X, index)
        return np.logical_and(a, b) if expr.op == "&&" else np.logical_or(a, b)
    if isinstance(expr, Not):
        return np.logical_not(_batch(expr.child, X, index))
    raise ExprError(f"not an expression node: {expr!r}")


def evaluate_batch(expr, X: np.ndarray, schema) -> np.ndarray:
    """Vectorised ``evaluate`` over the rows of a feature matrix."""
    with np.errstate(all="ignore"):
        out = _batch(expr, X, schema.index)
    return np.broadcast_to(np.asarray(out, dtype=bool), (X.shape[0],)).copy()


# ------------------------------------------------------- random generation


def _rng(seed_or_rng) -> random.Random:
    if isinstance(seed_or_rng, random.Random):
        return seed_or_rng
    if seed_or_rng < 0:
        raise ExprError("rng_seed must be unsigned")
    return random.Random(seed_or_rng)


def random_leaf(rng: random.Random, names) -> Feature | Const:
    if rng.random() < 0.75:
        return Feature(rng.choice(names))
    return Const(rng.choice(CONST_POOL))


def random_num(rng: random.Random, names, max_depth: int):
    if max_depth <= 0 or rng.random() < 0.6:
        return random_leaf(rng, names)
    op = rng.choice(NUM_OPS)
    return NumBinary(op, random_num(rng, names, max_depth - 1), random_num(rng, names, max_depth - 1))


def random_compare(rng: random.Random, names, max_depth: int = 1) -> Compare:
    rel = rng.choice(RELATIONS)
    # keep one side a feature-bearing subtree more often than not
    left = Feature(rng.choice(names)) if max_depth <= 1 else random_num(rng, names, max_depth - 1)
    return Compare(rel, left, random_num(rng, names, max_depth - 1))


def random_bool(rng: random.Random, names, max_depth: int):
    if max_depth <= 1 or rng.random() < 0.5:
        return random_compare(rng, names, max_depth)
    r = rng.random()
    if r < 0.8:
        op = "&&" if r < 0.4 else "||"
        return BoolBinary(op, random_bool(rng, names, max_depth - 1), random_bool(rng, names, max_depth - 1))
    return Not(random_bool(rng, names, max_depth - 1))


def random_expr(schema, max_depth: int, rng_seed) -> Expr:
    """Random boolean-rooted expression of depth <= ``max_depth``.

    ``rng_seed`` is an unsigned integer, or a ``random.Random`` whose state is
    advanced in place.
    """
    if max_depth < 1:
        raise ExprError("max_depth must be a positive integer")
    names = list(schema.feature_names)
    if not names:
        raise ExprError("cannot generate expressions over an empty feature schema")
    return random_bool(_rng(rng_seed), names, max_depth)


def fit_depth(expr, budget: int, rng: random.Random, names):
    """Return ``expr`` with every subtree that breaks the depth budget replaced.

    Offending numeric subtrees become a random leaf; boolean ones that cannot
    fit become a random leaf-vs-leaf comparison.
    """
    if depth(expr) <= budget:
        return expr
    if not is_bool(expr):
        if budget <= 0:
            return random_leaf(rng, names)
        return with_children(expr, [fit_depth(c, budget - 1, rng, names) for c in children(expr)])
    if budget <= 1 and not isinstance(expr, Compare):
        return random_compare(rng, names, 1)
    return with_children(expr, [fit_depth(c, budget - 1, rng, names) for c in children(expr)])
