"""Types, type schemes, unification and the typeclass membership table.

Types are kept in a small algebra: saturated or partially applied
constructors (``TCon``), type variables (``TVar``) and application of a
variable head to an argument (``TApp``), the latter being what lets
``Foldable t => t a`` unify with ``[Int]`` or ``(Char, Int)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

CONSTRUCTOR_ARITY = {
    "Int": 0,
    "Char": 0,
    "Bool": 0,
    "Unit": 0,
    "Maybe": 1,
    "List": 1,
    "Pair": 2,
    "Either": 2,
    "Fun": 2,
}

TYPECLASSES = ("Enum", "Foldable", "Traversable", "Functor", "Monoid", "Semigroup")


@dataclass(frozen=True)
class TVar:
    name: str

    def __str__(self) -> str:
        return show_type(self)


@dataclass(frozen=True)
class TCon:
    name: str
    args: Tuple["Ty", ...] = ()

    def __post_init__(self):
        if self.name not in CONSTRUCTOR_ARITY:
            raise ValueError(f"unknown type constructor {self.name!r}")
        if len(self.args) > CONSTRUCTOR_ARITY[self.name]:
            raise ValueError(f"{self.name} takes {CONSTRUCTOR_ARITY[self.name]} arguments")

    def __str__(self) -> str:
        return show_type(self)


@dataclass(frozen=True)
class TApp:
    fn: "Ty"
    arg: "Ty"

    def __str__(self) -> str:
        return show_type(self)


Ty = Union[TVar, TCon, TApp]

INT = TCon("Int")
CHAR = TCon("Char")
BOOL = TCon("Bool")
UNIT = TCon("Unit")


def fun(*tys: Ty) -> Ty:
    """Right-nested arrow type ``t0 -> t1 -> ... -> tn``."""
    out = tys[-1]
    for t in reversed(tys[:-1]):
        out = TCon("Fun", (t, out))
    return out


def list_of(t: Ty) -> Ty:
    return TCon("List", (t,))


def maybe(t: Ty) -> Ty:
    return TCon("Maybe", (t,))


def pair(a: Ty, b: Ty) -> Ty:
    return TCon("Pair", (a, b))


def either(a: Ty, b: Ty) -> Ty:
    return TCon("Either", (a, b))


def app(fn: Ty, arg: Ty) -> Ty:
    """Type application, normalising constructor heads into ``TCon``."""
    if isinstance(fn, TCon):
        return TCon(fn.name, fn.args + (arg,))
    return TApp(fn, arg)


def is_fun(t: Ty) -> bool:
    return isinstance(t, TCon) and t.name == "Fun" and len(t.args) == 2


def split_fun(t: Ty) -> Tuple[List[Ty], Ty]:
    """Peel all outer arrows: ``a -> b -> c`` gives ``([a, b], c)``."""
    params = []
    while is_fun(t):
        params.append(t.args[0])
        t = t.args[1]
    return params, t


def arity(t: Ty) -> int:
    return len(split_fun(t)[0])


def free_vars(t: Ty) -> List[str]:
    """Type variable names in order of first occurrence."""
    out: List[str] = []

    def go(u):
        if isinstance(u, TVar):
            if u.name not in out:
                out.append(u.name)
        elif isinstance(u, TCon):
            for a in u.args:
                go(a)
        else:
            go(u.fn)
            go(u.arg)

    go(t)
    return out


def is_mono(t: Ty) -> bool:
    return not free_vars(t)


def subtypes(t: Ty) -> Iterator[Ty]:
    yield t
    if isinstance(t, TCon):
        for a in t.args:
            yield from subtypes(a)
    elif isinstance(t, TApp):
        yield from subtypes(t.fn)
        yield from subtypes(t.arg)


def nesting(t: Ty) -> int:
    """Constructor nesting depth; base types and variables have depth 0."""
    if isinstance(t, TCon):
        return 1 + max((nesting(a) for a in t.args), default=-1)
    if isinstance(t, TApp):
        return 1 + max(nesting(t.fn), nesting(t.arg))
    return 0


# -- printing ---------------------------------------------------------------

def show_type(t: Ty, prec: int = 0) -> str:
    """Haskell-style rendering: ``[Int]``, ``(Int, Char)``, ``Maybe a -> Int``.

    ``prec`` is 0 at top level, 1 in the left of an arrow, 2 in an
    application argument.
    """
    if isinstance(t, TVar):
        return t.name
    if isinstance(t, TApp):
        s = f"{show_type(t.fn, 1)} {show_type(t.arg, 2)}"
        return f"({s})" if prec >= 2 else s
    name, args = t.name, t.args
    if name == "Unit":
        return "()"
    if name in ("Int", "Char", "Bool"):
        return name
    if name == "List":
        return f"[{show_type(args[0])}]" if args else "[]"
    if name == "Pair":
        if len(args) == 2:
            return f"({show_type(args[0])}, {show_type(args[1])})"
        s = "(,)" + "".join(" " + show_type(a, 2) for a in args)
        return f"({s})" if args and prec >= 2 else s
    if name == "Fun" and len(args) == 2:
        s = f"{show_type(args[0], 1)} -> {show_type(args[1], 0)}"
        return f"({s})" if prec >= 1 else s
    if name == "Fun":
        s = "(->)" + "".join(" " + show_type(a, 2) for a in args)
        return f"({s})" if args and prec >= 2 else s
    s = name + "".join(" " + show_type(a, 2) for a in args)
    return f"({s})" if args and prec >= 2 else s


# -- parsing ----------------------------------------------------------------

class TypeSyntaxError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at offset {offset}")
        self.offset = offset


_TYPE_NAMES = {"Int": INT, "Char": CHAR, "Bool": BOOL}


class _TypeParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos] == " ":
            self.pos += 1

    def peek(self, s: str) -> bool:
        self.skip()
        return self.text.startswith(s, self.pos)

    def expect(self, s: str):
        if not self.peek(s):
            raise TypeSyntaxError(f"expected {s!r}", self.pos)
        self.pos += len(s)

    def ident(self) -> Optional[str]:
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] in "_'"):
            self.pos += 1
        return self.text[start:self.pos] or None

    def arrow(self) -> Ty:
        lhs = self.application()
        if self.peek("->"):
            self.expect("->")
            return fun(lhs, self.arrow())
        return lhs

    def application(self) -> Ty:
        head = self.atom()
        while True:
            self.skip()
            if self.pos >= len(self.text) or self.text[self.pos] in ",)]" or self.peek("->"):
                return head
            head = app(head, self.atom())

    def atom(self) -> Ty:
        self.skip()
        start = self.pos
        if self.pos >= len(self.text):
            raise TypeSyntaxError("unexpected end of type", self.pos)
        ch = self.text[self.pos]
        if ch == "[":
            self.pos += 1
            if self.peek("]"):
                self.expect("]")
                return TCon("List")
            inner = self.arrow()
            self.expect("]")
            return list_of(inner)
        if ch == "(":
            self.pos += 1
            if self.peek(")"):
                self.expect(")")
                return UNIT
            if self.peek(",)"):
                self.expect(",)")
                return TCon("Pair")
            if self.peek("->)"):
                self.expect("->)")
                return TCon("Fun")
            first = self.arrow()
            if self.peek(","):
                self.expect(",")
                second = self.arrow()
                self.expect(")")
                return pair(first, second)
            self.expect(")")
            return first
        name = self.ident()
        if name is None:
            raise TypeSyntaxError(f"unexpected {ch!r}", start)
        if name in _TYPE_NAMES:
            return _TYPE_NAMES[name]
        if name in ("Maybe", "Either"):
            return TCon(name)
        if name[0].islower():
            return TVar(name)
        raise TypeSyntaxError(f"unknown type {name!r}", start)


def parse_type(text: str) -> Ty:
    p = _TypeParser(text)
    t = p.arrow()
    p.skip()
    if p.pos != len(text):
        raise TypeSyntaxError("trailing input", p.pos)
    return t


# -- schemes ----------------------------------------------------------------

@dataclass(frozen=True)
class Scheme:
    """``forall quantified. constraints => body``.

    Constraints pair a class name with a type; in a well-formed operator
    scheme the type is always a variable.
    """

    quantified: Tuple[str, ...]
    constraints: Tuple[Tuple[str, Ty], ...]
    body: Ty

    def __str__(self) -> str:
        body = show_type(self.body)
        if not self.constraints:
            return body
        cs = ", ".join(f"{c} {show_type(t, 2)}" for c, t in self.constraints)
        if len(self.constraints) > 1:
            cs = f"({cs})"
        return f"{cs} => {body}"


def mono(t: Ty) -> Scheme:
    return Scheme((), (), t)


def parse_scheme(text: str) -> Scheme:
    """Parse ``"Foldable t => t a -> Int"`` or ``"(Foldable t, Monoid m) => ..."``."""
    constraints: List[Tuple[str, Ty]] = []
    if "=>" in text:
        ctx, body_text = text.split("=>", 1)
        ctx = ctx.strip()
        if ctx.startswith("(") and ctx.endswith(")"):
            ctx = ctx[1:-1]
        for part in ctx.split(","):
            cls, _, arg = part.strip().partition(" ")
            if cls not in TYPECLASSES:
                raise ValueError(f"unknown typeclass {cls!r}")
            constraints.append((cls, parse_type(arg.strip())))
    else:
        body_text = text
    body = parse_type(body_text.strip())
    names = free_vars(body)
    for _, t in constraints:
        for v in free_vars(t):
            if v not in names:
                names.append(v)
    return Scheme(tuple(names), tuple(constraints), body)


# -- substitution and unification -------------------------------------------

Subst = Dict[str, Ty]


class UnifyError(Exception):
    pass


class Mismatch(UnifyError):
    def __init__(self, a: Ty, b: Ty):
        super().__init__(f"cannot unify {show_type(a)} with {show_type(b)}")
        self.a, self.b = a, b


class OccursCheck(UnifyError):
    def __init__(self, var: str, t: Ty):
        super().__init__(f"occurs check: {var} in {show_type(t)}")
        self.var, self.t = var, t


def apply(s: Subst, t: Ty) -> Ty:
    if not s:
        return t
    if isinstance(t, TVar):
        r = s.get(t.name)
        if r is None:
            return t
        return apply(s, r) if r != t else r
    if isinstance(t, TCon):
        if not t.args:
            return t
        return TCon(t.name, tuple(apply(s, a) for a in t.args))
    return app(apply(s, t.fn), apply(s, t.arg))


def _resolve(s: Subst, t: Ty) -> Ty:
    while isinstance(t, TVar) and t.name in s:
        t = s[t.name]
    return t


def _occurs(s: Subst, name: str, t: Ty) -> bool:
    t = _resolve(s, t)
    if isinstance(t, TVar):
        return t.name == name
    if isinstance(t, TCon):
        return any(_occurs(s, name, a) for a in t.args)
    return _occurs(s, name, t.fn) or _occurs(s, name, t.arg)


def unify_into(s: Subst, a: Ty, b: Ty) -> None:
    """Extend the triangular substitution ``s`` in place so that a ~ b."""
    a = _resolve(s, a)
    b = _resolve(s, b)
    if a == b:
        return
    if isinstance(a, TVar):
        if _occurs(s, a.name, b):
            raise OccursCheck(a.name, apply(s, b))
        s[a.name] = b
        return
    if isinstance(b, TVar):
        unify_into(s, b, a)
        return
    if isinstance(a, TCon) and isinstance(b, TCon):
        if a.name != b.name or len(a.args) != len(b.args):
            raise Mismatch(apply(s, a), apply(s, b))
        for x, y in zip(a.args, b.args):
            unify_into(s, x, y)
        return
    if isinstance(a, TCon):
        a, b = b, a
    # a is TApp here; b is TApp or TCon
    if isinstance(b, TApp):
        unify_into(s, a.fn, b.fn)
        unify_into(s, a.arg, b.arg)
        return
    # functions are not treated as containers: ``f x`` never matches ``r -> x``
    if not b.args or b.name == "Fun":
        raise Mismatch(apply(s, a), apply(s, b))
    unify_into(s, a.fn, TCon(b.name, b.args[:-1]))
    unify_into(s, a.arg, b.args[-1])


def unify(a: Ty, b: Ty) -> Subst:
    """Most general unifier of ``a`` and ``b`` as an idempotent substitution.

    Raises ``Mismatch`` or ``OccursCheck``.
    """
    s: Subst = {}
    unify_into(s, a, b)
    return {k: apply(s, v) for k, v in s.items()}


def rename(t: Ty, mapping: Dict[str, str]) -> Ty:
    return apply({k: TVar(v) for k, v in mapping.items()}, t)


# -- typeclass table --------------------------------------------------------

_MEMBERSHIP = {
    "Enum": {"Char", "Int"},
    "Foldable": {"Maybe", "List", "Pair", "Either"},
    "Traversable": {"Maybe", "List", "Pair", "Either"},
    "Functor": {"Maybe", "List", "Pair", "Either"},
    "Monoid": {"Maybe", "List"},
    "Semigroup": {"Maybe", "List", "Pair", "Either"},
}


@dataclass(frozen=True)
class TypeclassTable:
    """Closed class membership by head constructor; lookup only."""

    membership: Dict[str, frozenset] = field(
        default_factory=lambda: {k: frozenset(v) for k, v in _MEMBERSHIP.items()}
    )

    def member(self, cls: str, constructor: str) -> bool:
        return constructor in self.membership.get(cls, ())

    def entails(self, cls: str, t: Ty) -> Optional[bool]:
        """True/False for a constructor-headed type, None if undecided."""
        head = type_head(t)
        if head is None:
            return None
        return self.member(cls, head)


TABLE = TypeclassTable()


def type_head(t: Ty) -> Optional[str]:
    while isinstance(t, TApp):
        t = t.fn
    return t.name if isinstance(t, TCon) else None


def type_kinds(t: Ty, out: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    """Number of arguments each variable is applied to (0 for plain types)."""
    out = {} if out is None else out

    def go(u, applied):
        if isinstance(u, TVar):
            out[u.name] = max(out.get(u.name, 0), applied)
        elif isinstance(u, TCon):
            for a in u.args:
                go(a, 0)
        else:
            go(u.fn, applied + 1)
            go(u.arg, 0)

    go(t, 0)
    return out


def all_types(t: Iterable[Ty]) -> Iterator[Ty]:
    for u in t:
        yield from subtypes(u)
