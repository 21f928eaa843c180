"""GP expression trees: primitives, random generation, evaluation and s-expression text."""

from __future__ import annotations

import enum
import math
import random
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

#: Value returned by protected division on a zero divisor; also the clamp
#: magnitude for any non-finite intermediate result.
SENTINEL = 1.0e6


class Primitive(enum.Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    PDIV = "div"
    SIN = "sin"
    COS = "cos"

    def __init__(self, name: str):
        self.arity = 1 if name in ("sin", "cos") else 2


PRIMITIVES = tuple(Primitive)
_BY_NAME = {p.value: p for p in Primitive}


class TreeStructureError(ValueError):
    """A tree violates arity, depth or feature-scope rules."""


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int, token: str):
        super().__init__(f"line {line}, column {column}: {message} (token {token!r})")
        self.line = line
        self.column = column
        self.token = token


@dataclass(frozen=True, slots=True)
class Const:
    value: float


@dataclass(frozen=True, slots=True)
class Feature:
    index: int


@dataclass(frozen=True, slots=True)
class Func:
    prim: Primitive
    children: tuple


Node = Union[Const, Feature, Func]


def clamp(value: float) -> float:
    if math.isfinite(value):
        return value
    # NaN has no sign; map it to the positive sentinel
    return -SENTINEL if value < 0 else SENTINEL


def apply(prim: Primitive, a: float, b: float = 0.0) -> float:
    """Apply one primitive to scalars with protected division and clamping."""
    if prim is Primitive.ADD:
        r = a + b
    elif prim is Primitive.SUB:
        r = a - b
    elif prim is Primitive.MUL:
        r = a * b
    elif prim is Primitive.PDIV:
        if b == 0.0:
            return SENTINEL
        r = a / b
    elif not math.isfinite(a):
        return SENTINEL  # sin/cos of an infinity is NaN
    elif prim is Primitive.SIN:
        r = math.sin(a)
    else:
        r = math.cos(a)
    return clamp(r)


#: Postfix opcodes shared with the batch VM; 0 and 1 push a constant or a feature.
OP_CONST, OP_FEATURE = 0, 1
OPCODE = {
    Primitive.ADD: 2,
    Primitive.SUB: 3,
    Primitive.MUL: 4,
    Primitive.PDIV: 5,
    Primitive.SIN: 6,
    Primitive.COS: 7,
}
for _p in Primitive:
    _p.opcode = OPCODE[_p]


def _walk(node: Node, visible: tuple, ops: list, args: list, consts: list) -> int:
    """Validate ``node``, append its postfix code and return its depth."""
    if type(node) is Func:
        prim = node.prim
        if len(node.children) != prim.arity:
            raise TreeStructureError(
                f"{prim.value} takes {prim.arity} children, got {len(node.children)}"
            )
        depth = 0
        for child in node.children:
            d = _walk(child, visible, ops, args, consts)
            if d > depth:
                depth = d
        ops.append(prim.opcode)
        args.append(0)
        consts.append(0.0)
        return depth + 1
    if type(node) is Feature:
        if not 0 <= node.index < len(visible):
            raise TreeStructureError(
                f"feature x{node.index} outside visible range of {len(visible)}"
            )
        ops.append(OP_FEATURE)
        args.append(visible[node.index])
        consts.append(0.0)
        return 0
    if type(node) is Const:
        ops.append(OP_CONST)
        args.append(0)
        consts.append(node.value)
        return 0
    raise TreeStructureError(f"unknown node {node!r}")


@dataclass(frozen=True)
class ExprTree:
    """An immutable expression tree reading a fixed list of global features.

    ``Feature(i)`` leaves index into ``visible_features``; the tree never sees
    any other feature. Depth counts edges, so a lone terminal has depth 0.
    ``program`` is the postfix form ``(opcodes, global feature indices,
    constants)`` consumed by the batch VM.
    """

    root: Node
    visible_features: tuple[int, ...]
    max_depth: int = 4

    def __post_init__(self):
        if not isinstance(self.visible_features, tuple):
            object.__setattr__(self, "visible_features", tuple(self.visible_features))
        ops: list[int] = []
        args: list[int] = []
        consts: list[float] = []
        depth = _walk(self.root, self.visible_features, ops, args, consts)
        if depth > self.max_depth:
            raise TreeStructureError(f"depth {depth} exceeds max_depth {self.max_depth}")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "program", (
            np.array(ops, dtype=np.int8),
            np.array(args, dtype=np.int64),
            np.array(consts, dtype=np.float64),
        ))

    @property
    def size(self) -> int:
        return len(self.program[0])

    def rescoped(self, visible_features: Sequence[int]) -> ExprTree:
        """Same expression reading a different (equal-length) feature list."""
        return ExprTree(self.root, tuple(visible_features), self.max_depth)

    def __str__(self) -> str:
        return serialize_tree(self)


def tree_depth(tree: ExprTree) -> int:
    return tree.depth


def _eval(node: Node, x: Sequence[float]) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Feature):
        return float(x[node.index])
    if len(node.children) != node.prim.arity:
        raise TreeStructureError(f"{node.prim.value} arity mismatch")
    if node.prim.arity == 1:
        return apply(node.prim, _eval(node.children[0], x))
    return apply(node.prim, _eval(node.children[0], x), _eval(node.children[1], x))


def eval_tree(tree: ExprTree, inputs: Sequence[float]) -> float:
    """Evaluate ``tree`` on values of its visible features (one scalar per feature).

    This is the reference tree-walking evaluator; bulk evaluation goes through
    :mod:`gpae.vm`.
    """
    if len(inputs) != len(tree.visible_features):
        raise ValueError(
            f"expected {len(tree.visible_features)} inputs, got {len(inputs)}"
        )
    return _eval(tree.root, inputs)


# -- random generation -------------------------------------------------------


def _terminal(n_visible: int, rnd) -> Node:
    if rnd() < 0.5:
        return Feature(int(rnd() * n_visible))
    return Const(rnd())


def _build(depth: int, limit: int, full: bool, n_visible: int, rnd) -> Node:
    if depth >= limit or (not full and rnd() < 0.5):
        return _terminal(n_visible, rnd)
    prim = PRIMITIVES[int(rnd() * 6)]
    left = _build(depth + 1, limit, full, n_visible, rnd)
    if prim.arity == 1:
        return Func(prim, (left,))
    return Func(prim, (left, _build(depth + 1, limit, full, n_visible, rnd)))


def random_tree(visible_features: Sequence[int], max_depth: int, rng: random.Random) -> ExprTree:
    """Ramped half-and-half: target depth uniform in 1..max_depth, grow or full with equal odds."""
    visible = tuple(visible_features)
    if not visible:
        raise ValueError("a tree needs at least one visible feature")
    if max_depth < 0:
        raise ValueError("max_depth must be non-negative")
    if max_depth == 0:
        return ExprTree(_terminal(len(visible), rng.random), visible, max_depth)
    limit = 1 + int(rng.random() * max_depth)
    full = rng.random() < 0.5
    return ExprTree(_build(0, limit, full, len(visible), rng.random), visible, max_depth)


# -- text form ---------------------------------------------------------------


def _emit(node: Node, out: list[str]) -> None:
    if isinstance(node, Const):
        out.append(repr(float(node.value)))
    elif isinstance(node, Feature):
        out.append(f"x{node.index}")
    else:
        out.append(f"({node.prim.value}")
        for child in node.children:
            out.append(" ")
            _emit(child, out)
        out.append(")")


def serialize_tree(tree: ExprTree) -> str:
    out: list[str] = []
    _emit(tree.root, out)
    return "".join(out)


_TOKEN = re.compile(r"\(|\)|[^\s()]+")
_FEATURE = re.compile(r"x(\d+)\Z")
_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")


def parse_tree(text: str, visible_features: Sequence[int], max_depth: int = 4, line: int = 1) -> ExprTree:
    """Parse one prefix s-expression. ``line`` is reported in error positions."""
    tokens = [(m.group(), m.start() + 1) for m in _TOKEN.finditer(text)]
    pos = 0

    def fail(msg: str, i: int) -> ParseError:
        if i < len(tokens):
            return ParseError(msg, line, tokens[i][1], tokens[i][0])
        return ParseError(msg, line, len(text) + 1, "<end>")

    def expr() -> Node:
        nonlocal pos
        if pos >= len(tokens):
            raise fail("unexpected end of expression", pos)
        tok, _ = tokens[pos]
        if tok == "(":
            start = pos
            pos += 1
            if pos >= len(tokens) or tokens[pos][0] not in _BY_NAME:
                raise fail("expected primitive name", pos)
            prim = _BY_NAME[tokens[pos][0]]
            pos += 1
            children = []
            while pos < len(tokens) and tokens[pos][0] != ")":
                children.append(expr())
            if pos >= len(tokens):
                raise fail("unclosed parenthesis", start)
            if len(children) != prim.arity:
                raise fail(f"{prim.value} takes {prim.arity} arguments, got {len(children)}", start)
            pos += 1
            return Func(prim, tuple(children))
        if tok == ")":
            raise fail("unexpected ')'", pos)
        pos += 1
        m = _FEATURE.match(tok)
        if m:
            return Feature(int(m.group(1)))
        if _NUMBER.match(tok):
            return Const(float(tok))
        raise fail("unrecognized token", pos - 1)

    root = expr()
    if pos != len(tokens):
        raise fail("trailing input after expression", pos)
    try:
        return ExprTree(root, tuple(visible_features), max_depth)
    except TreeStructureError as exc:
        raise ParseError(str(exc), line, 1, text.strip()[:20]) from None
