"""DSL expression trees: variables, curried application and typed holes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Iterator, List, Optional, Tuple, Union

from .types import Ty, TypeSyntaxError, parse_type, show_type


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class App:
    fn: "Expr"
    arg: "Expr"


@dataclass(frozen=True)
class Hole:
    id: int
    ann: Ty


Expr = Union[Var, App, Hole]


class DSLSyntaxError(SyntaxError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at offset {offset}")
        self.offset = offset


class UnknownOperator(LookupError):
    def __init__(self, name: str):
        super().__init__(f"unknown operator {name!r}")
        self.name = name


class UnknownHole(LookupError):
    pass


def spine(e: Expr) -> Tuple[Expr, List[Expr]]:
    """Split ``((f a) b)`` into ``(f, [a, b])``."""
    args = []
    while isinstance(e, App):
        args.append(e.arg)
        e = e.fn
    args.reverse()
    return e, args


def apply_all(head: Expr, args) -> Expr:
    for a in args:
        head = App(head, a)
    return head


def holes(e: Expr) -> List[Hole]:
    """Holes in canonical left-to-right order."""
    out: List[Hole] = []

    def go(x):
        if isinstance(x, Hole):
            out.append(x)
        elif isinstance(x, App):
            go(x.fn)
            go(x.arg)

    go(e)
    return out


def node_count(e: Expr) -> int:
    """Number of operator nodes (variable occurrences)."""
    if isinstance(e, Var):
        return 1
    if isinstance(e, App):
        return node_count(e.fn) + node_count(e.arg)
    return 0


def variables(e: Expr) -> Iterator[str]:
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, App):
        yield from variables(e.fn)
        yield from variables(e.arg)


def is_complete(e: Expr) -> bool:
    return not holes(e)


# -- printing ---------------------------------------------------------------

def print_expr(e: Expr) -> str:
    """Canonical text: ``(op (arg1) (arg2))``, holes as ``undefined :: T``."""
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Hole):
        return f"undefined :: {show_type(e.ann)}"
    head, args = spine(e)
    parts = [print_expr(head)] + [_print_arg(a) for a in args]
    return "(" + " ".join(parts) + ")"


def _print_arg(e: Expr) -> str:
    if isinstance(e, App):
        return print_expr(e)
    return f"({print_expr(e)})"


# -- parsing ----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str, names: Optional[Collection[str]]):
        self.text = text
        self.pos = 0
        self.names = names
        self.next_hole = 0

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def at_end(self) -> bool:
        self.skip()
        return self.pos >= len(self.text)

    def ident(self) -> str:
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] in "_'"):
            self.pos += 1
        if start == self.pos:
            raise DSLSyntaxError(f"unexpected {self.text[start]!r}", start)
        return self.text[start:self.pos]

    def hole_type(self, closing: bool) -> Ty:
        self.skip()
        if not self.text.startswith("::", self.pos):
            raise DSLSyntaxError("expected '::' after undefined", self.pos)
        self.pos += 2
        start = self.pos
        depth = 0
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch in "([":
                depth += 1
            elif ch in ")]":
                if depth == 0:
                    break
                depth -= 1
            self.pos += 1
        if not closing and self.pos != len(self.text):
            raise DSLSyntaxError("unbalanced ')'", self.pos)
        try:
            return parse_type(self.text[start:self.pos].strip())
        except TypeSyntaxError as err:
            raise DSLSyntaxError(f"bad hole type ({err})", start + err.offset) from None

    def expr(self, nested: bool) -> Expr:
        self.skip()
        if self.pos >= len(self.text):
            raise DSLSyntaxError("unexpected end of input", self.pos)
        ch = self.text[self.pos]
        if ch == "(":
            self.pos += 1
            items = []
            while True:
                self.skip()
                if self.pos >= len(self.text):
                    raise DSLSyntaxError("missing ')'", self.pos)
                if self.text[self.pos] == ")":
                    self.pos += 1
                    break
                items.append(self.expr(nested=True))
            if not items:
                raise DSLSyntaxError("empty application", self.pos - 1)
            return apply_all(items[0], items[1:])
        if ch == ")":
            raise DSLSyntaxError("unexpected ')'", self.pos)
        start = self.pos
        name = self.ident()
        if name == "undefined":
            ann = self.hole_type(closing=nested)
            h = Hole(self.next_hole, ann)
            self.next_hole += 1
            return h
        if self.names is not None and name not in self.names:
            raise UnknownOperator(name)
        return Var(name)


def parse_expr(text: str, names: Optional[Collection[str]] = None) -> Expr:
    """Parse canonical (or any fully parenthesised) DSL text.

    Holes are numbered 0, 1, ... left to right.  When ``names`` is given,
    variables outside it raise ``UnknownOperator``.
    """
    if names is None:
        from .operators import OPERATORS

        names = OPERATORS
    p = _Parser(text, names)
    e = p.expr(nested=False)
    if not p.at_end():
        raise DSLSyntaxError("trailing input", p.pos)
    return e


def find_hole(e: Expr, hole_id: int) -> Hole:
    for h in holes(e):
        if h.id == hole_id:
            return h
    raise UnknownHole(hole_id)


def replace_hole(e: Expr, hole_id: int, new: Expr) -> Expr:
    if isinstance(e, Hole):
        return new if e.id == hole_id else e
    if isinstance(e, App):
        fn = replace_hole(e.fn, hole_id, new)
        arg = replace_hole(e.arg, hole_id, new)
        if fn is e.fn and arg is e.arg:
            return e
        return App(fn, arg)
    return e


def renumber_holes(e: Expr, start: int = 0) -> Expr:
    """Relabel holes ``start, start+1, ...`` in left-to-right order."""
    counter = [start]

    def go(x):
        if isinstance(x, Hole):
            h = Hole(counter[0], x.ann)
            counter[0] += 1
            return h
        if isinstance(x, App):
            return App(go(x.fn), go(x.arg))
        return x

    return go(e)
