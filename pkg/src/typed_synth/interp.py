"""Strict, type-directed evaluator for closed DSL programs.

Runtime failures are ordinary results: ``eval_program`` never raises for a
well-typed program, it returns an ``Outcome`` whose error kind takes part
in behavioural comparison.  Out-of-range ``toEnum`` results are carried as
``Bottom`` values so that structure-only operations (``length``, ``fmap``,
``cons`` ...) do not fail on them, as in a lazy host.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .expr import App, Expr, Hole, Var, parse_expr, print_expr
from .infer import elaborate
from .operators import OPERATORS
from .types import TApp, TCon, Ty, parse_type, show_type, split_fun

DEFAULT_FUEL = 10_000
ERROR_KINDS = ("OutOfRange", "PartialFunction", "Timeout", "Other")


# -- values -----------------------------------------------------------------

@dataclass(frozen=True)
class Just:
    value: Any


@dataclass(frozen=True)
class _Nothing:
    def __repr__(self):
        return "Nothing"


NOTHING = _Nothing()


@dataclass(frozen=True)
class Left:
    value: Any


@dataclass(frozen=True)
class Right:
    value: Any


@dataclass(frozen=True)
class Pair:
    fst: Any
    snd: Any


@dataclass(frozen=True)
class _Unit:
    def __repr__(self):
        return "()"


UNIT_V = _Unit()


@dataclass(frozen=True)
class Bottom:
    kind: str


@dataclass(frozen=True)
class FunV:
    """Partially applied builtin; ``ty`` is the operator's concrete type."""

    op: str
    ty: Ty
    args: Tuple[Any, ...] = ()
    source: Optional[str] = None


class EvalError(Exception):
    def __init__(self, kind: str, msg: str = ""):
        super().__init__(msg or kind)
        self.kind = kind


@dataclass(frozen=True, eq=False)
class Outcome:
    """``Right value`` or ``Left kind``; equality is on the canonical text."""

    text: str
    value: Any = None
    kind: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.kind is None

    def __eq__(self, other):
        return isinstance(other, Outcome) and self.text == other.text

    def __hash__(self):
        return hash(self.text)

    @classmethod
    def err(cls, kind: str) -> "Outcome":
        return cls(f"Left {kind}", None, kind)


# -- evaluator --------------------------------------------------------------

def _head(t: Ty) -> str:
    while isinstance(t, TApp):
        t = t.fn
    return t.name


def force(v):
    if isinstance(v, Bottom):
        raise EvalError(v.kind)
    return v


def deep_force(v):
    if isinstance(v, Bottom):
        raise EvalError(v.kind)
    if isinstance(v, tuple):
        for x in v:
            deep_force(x)
    elif isinstance(v, (Just, Left, Right)):
        deep_force(v.value)
    elif isinstance(v, Pair):
        deep_force(v.fst)
        deep_force(v.snd)
    return v


class Machine:
    def __init__(self, fuel: int):
        self.fuel = fuel

    def tick(self, n: int = 1):
        self.fuel -= n
        if self.fuel < 0:
            raise EvalError("Timeout")

    def apply(self, f, x):
        f = force(f)
        if not isinstance(f, FunV):
            raise EvalError("Other", "application of a non-function")
        self.tick()
        args = f.args + (x,)
        if len(args) == OPERATORS[f.op].max_arity:
            return BUILTINS[f.op](self, f.ty, *args)
        return FunV(f.op, f.ty, args)

    def reference(self, name: str, ty: Ty):
        self.tick()
        if OPERATORS[name].max_arity == 0:
            return BUILTINS[name](self, ty)
        return FunV(name, ty)

    def run(self, e: Expr, occurrences: Sequence[Ty]):
        it = iter(occurrences)

        def go(x):
            if isinstance(x, Var):
                return self.reference(x.name, next(it))
            if isinstance(x, App):
                f = go(x.fn)
                a = go(x.arg)
                return self.apply(f, a)
            raise EvalError("Other", "cannot evaluate a hole")

        return go(e)

    # type-directed instances -------------------------------------------

    def mempty(self, t: Ty):
        h = _head(t)
        if h == "List":
            return ()
        if h == "Maybe":
            return NOTHING
        if h == "Unit":
            return UNIT_V
        raise EvalError("Other", f"no Monoid for {show_type(t)}")

    def mappend(self, t: Ty, a, b):
        self.tick()
        a, b = force(a), force(b)
        h = _head(t)
        if h == "List":
            self.tick(len(a))
            return a + b
        if h == "Maybe":
            if a is NOTHING:
                return b
            if b is NOTHING:
                return a
            return Just(self.mappend(t.args[0], a.value, b.value))
        if h == "Pair":
            return Pair(self.mappend(t.args[0], a.fst, b.fst), self.mappend(t.args[1], a.snd, b.snd))
        if h == "Either":
            return b if isinstance(a, Left) else a
        if h == "Unit":
            return UNIT_V
        raise EvalError("Other", f"no Semigroup for {show_type(t)}")

    def pure(self, f: Ty, x):
        h = _head(f)
        if h == "Maybe":
            return Just(x)
        if h == "List":
            return (x,)
        if h == "Either":
            return Right(x)
        if h == "Pair":
            return Pair(self.mempty(f.args[0]), x)
        raise EvalError("Other", f"no Applicative for {show_type(f)}")

    def fmap_value(self, g: Callable, fa):
        fa = force(fa)
        if isinstance(fa, tuple):
            self.tick(len(fa))
            return tuple(g(x) for x in fa)
        if fa is NOTHING or isinstance(fa, Left):
            return fa
        if isinstance(fa, Just):
            return Just(g(fa.value))
        if isinstance(fa, Right):
            return Right(g(fa.value))
        if isinstance(fa, Pair):
            return Pair(fa.fst, g(fa.snd))
        raise EvalError("Other", "fmap over a non-functor")

    def lift_a2(self, f: Ty, g: Callable, fa, fb):
        self.tick()
        fa, fb = force(fa), force(fb)
        h = _head(f)
        if h == "Maybe":
            if fa is NOTHING or fb is NOTHING:
                return NOTHING
            return Just(g(fa.value, fb.value))
        if h == "List":
            self.tick(len(fa) * len(fb))
            return tuple(g(a, b) for a in fa for b in fb)
        if h == "Either":
            if isinstance(fa, Left):
                return fa
            if isinstance(fb, Left):
                return fb
            return Right(g(fa.value, fb.value))
        if h == "Pair":
            return Pair(self.mappend(f.args[0], fa.fst, fb.fst), g(fa.snd, fb.snd))
        raise EvalError("Other", f"no Applicative for {show_type(f)}")


def elements(t) -> Tuple:
    """Foldable contents of a list, Maybe, pair or Either value."""
    t = force(t)
    if isinstance(t, tuple):
        return t
    if isinstance(t, Just) or isinstance(t, Right):
        return (t.value,)
    if t is NOTHING or isinstance(t, Left):
        return ()
    if isinstance(t, Pair):
        return (t.snd,)
    raise EvalError("Other", "not foldable")


def _result(ty: Ty, n: int) -> Ty:
    for _ in range(n):
        ty = ty.args[1]
    return ty


def _b_zero(m, ty):
    return 0


def _b_nil(m, ty):
    return ()


def _b_false(m, ty):
    return False


def _b_and(m, ty, a, b):
    return force(b) if force(a) else False


def _b_just(m, ty, x):
    return Just(x)


def _b_maybe(m, ty, d, f, mb):
    mb = force(mb)
    if mb is NOTHING:
        return d
    return m.apply(f, mb.value)


def _b_cons(m, ty, x, xs):
    return (x,) + force(xs)


def _b_length(m, ty, t):
    return len(elements(t))


def _b_pair(m, ty, a, b):
    return Pair(a, b)


def _b_zip(m, ty, xs, ys):
    xs, ys = force(xs), force(ys)
    m.tick(min(len(xs), len(ys)))
    return tuple(Pair(a, b) for a, b in zip(xs, ys))


def _b_unzip(m, ty, ps):
    ps = tuple(force(p) for p in force(ps))
    m.tick(len(ps))
    return Pair(tuple(p.fst for p in ps), tuple(p.snd for p in ps))


def _b_to_enum(m, ty, n):
    n = force(n)
    target = _head(_result(ty, 1))
    if target == "Int":
        return n
    if target == "Char":
        if 0 <= n <= 0x10FFFF:
            return chr(n)
        return Bottom("OutOfRange")
    raise EvalError("Other", f"no Enum for {target}")


def _b_from_enum(m, ty, x):
    x = force(x)
    if isinstance(x, str):
        return ord(x)
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, int):
        return x
    raise EvalError("Other", "no Enum instance")


def _b_fold_map(m, ty, f, t):
    mon = _result(ty, 2)
    acc = None
    for x in elements(t):
        y = m.apply(f, x)
        acc = y if acc is None else m.mappend(mon, acc, y)
    return m.mempty(mon) if acc is None else acc


def _b_elem(m, ty, x, t):
    x = deep_force(x)
    for y in elements(t):
        m.tick()
        if deep_force(y) == x and type(y) is type(x):
            return True
    return False


def _b_sequence_a(m, ty, t):
    out = _result(ty, 1)  # f (t a)
    f = out.fn if isinstance(out, TApp) else TCon(out.name, out.args[:-1])
    t = force(t)
    if isinstance(t, tuple):
        acc = m.pure(f, ())
        for fx in reversed(t):
            acc = m.lift_a2(f, lambda a, rest: (a,) + rest, fx, acc)
        return acc
    if t is NOTHING or isinstance(t, Left):
        return m.pure(f, t)
    if isinstance(t, Just):
        return m.fmap_value(Just, t.value)
    if isinstance(t, Right):
        return m.fmap_value(Right, t.value)
    if isinstance(t, Pair):
        w = t.fst
        return m.fmap_value(lambda v: Pair(w, v), t.snd)
    raise EvalError("Other", "not traversable")


def _b_sequence_(m, ty, t):
    out = _result(ty, 1)  # m ()
    f = out.fn if isinstance(out, TApp) else TCon(out.name, out.args[:-1])
    acc = m.pure(f, UNIT_V)
    for fx in reversed(elements(t)):
        acc = m.lift_a2(f, lambda a, rest: rest, fx, acc)
    return acc


def _b_fmap(m, ty, g, fa):
    return m.fmap_value(lambda x: m.apply(g, x), fa)


def _b_mempty(m, ty):
    return m.mempty(ty)


def _b_mappend(m, ty, a, b):
    return m.mappend(_result(ty, 2), a, b)


def _b_compose(m, ty, f, g, x):
    return m.apply(f, m.apply(g, x))


BUILTINS: Dict[str, Callable] = {
    "zero": _b_zero,
    "nil": _b_nil,
    "false": _b_false,
    "and": _b_and,
    "just": _b_just,
    "maybe_": _b_maybe,
    "cons": _b_cons,
    "length": _b_length,
    "pair": _b_pair,
    "zip": _b_zip,
    "unzip": _b_unzip,
    "toEnum": _b_to_enum,
    "fromEnum": _b_from_enum,
    "foldMap": _b_fold_map,
    "elem": _b_elem,
    "sequenceA": _b_sequence_a,
    "sequence_": _b_sequence_,
    "fmap": _b_fmap,
    "mempty": _b_mempty,
    "mappend": _b_mappend,
    "compose": _b_compose,
}


@lru_cache(maxsize=65536)
def _elaborated(program: Expr, ty: Ty) -> Tuple[Ty, ...]:
    return tuple(elaborate(program, ty))


def program_value(program: Expr, ty: Ty, fuel: int = DEFAULT_FUEL):
    """Evaluate a closed program to a value (a ``FunV`` for function types)."""
    m = Machine(fuel)
    v = m.run(program, _elaborated(program, ty))
    if isinstance(v, FunV):
        v = FunV(v.op, v.ty, v.args, print_expr(program))
    return v


def eval_program(program: Expr, args: Sequence[Any], ty: Ty, fuel: int = DEFAULT_FUEL) -> Outcome:
    """Run ``program`` at monomorphic instance ``ty`` on ``args``.

    Deterministic; every runtime failure becomes ``Outcome.err(kind)``.
    """
    params, _ = split_fun(ty)
    out_ty = ty
    for _ in args:
        out_ty = out_ty.args[1]
    m = Machine(fuel)
    try:
        v = m.run(program, _elaborated(program, ty))
        for a in args:
            v = m.apply(v, a)
        v = deep_force(v)
        return Outcome("Right " + render_value(v, out_ty, 11), v)
    except EvalError as err:
        return Outcome.err(err.kind)
    except RecursionError:
        return Outcome.err("Other")


# -- rendering --------------------------------------------------------------

_CONTROL_NAMES = [
    "NUL", "SOH", "STX", "ETX", "EOT", "ENQ", "ACK", "a", "b", "t", "n", "v",
    "f", "r", "SO", "SI", "DLE", "DC1", "DC2", "DC3", "DC4", "NAK", "SYN",
    "ETB", "CAN", "EM", "SUB", "ESC", "FS", "GS", "RS", "US",
]


def _escape(c: str, quote: str) -> str:
    o = ord(c)
    if c == "\\":
        return "\\\\"
    if c == quote:
        return "\\" + c
    if o < 32:
        return "\\" + _CONTROL_NAMES[o]
    if o == 127:
        return "\\DEL"
    if o > 127:
        return f"\\{o}"
    return c


def show_char(c: str) -> str:
    return "'" + _escape(c, "'") + "'"


def show_string(s: str) -> str:
    parts = []
    for i, c in enumerate(s):
        e = _escape(c, '"')
        nxt = s[i + 1] if i + 1 < len(s) else ""
        if e[1:].isdigit() and e.startswith("\\") and nxt.isdigit():
            e += "\\&"
        elif e == "\\SO" and nxt == "H":
            e += "\\&"
        parts.append(e)
    return '"' + "".join(parts) + '"'


def render_value(v, ty: Ty, prec: int = 0) -> str:
    """Haskell-``show``-like text with ``", "`` separators."""
    if isinstance(v, Bottom):
        raise EvalError(v.kind)
    h = _head(ty)
    if h == "Fun":
        return v.source if isinstance(v, FunV) and v.source else "<function>"
    if h == "Int":
        s = str(v)
        return f"({s})" if v < 0 and prec > 6 else s
    if h == "Char":
        return show_char(v)
    if h == "Bool":
        return "True" if v else "False"
    if h == "Unit":
        return "()"
    if h == "List":
        et = ty.args[0]
        if _head(et) == "Char":
            for c in v:
                force(c)
            return show_string("".join(v))
        return "[" + ", ".join(render_value(x, et) for x in v) + "]"
    if h == "Pair":
        return f"({render_value(v.fst, ty.args[0])}, {render_value(v.snd, ty.args[1])})"
    if h == "Maybe":
        if v is NOTHING:
            return "Nothing"
        s = "Just " + render_value(v.value, ty.args[0], 11)
    elif h == "Either":
        if isinstance(v, Left):
            s = "Left " + render_value(v.value, ty.args[0], 11)
        else:
            s = "Right " + render_value(v.value, ty.args[1], 11)
    else:
        raise ValueError(f"cannot render type {show_type(ty)}")
    return f"({s})" if prec > 10 else s


def render_inputs(args: Sequence[Any], tys: Sequence[Ty]) -> str:
    return "(" + ", ".join(render_value(a, t) for a, t in zip(args, tys)) + ")"


# -- parsing rendered values ------------------------------------------------

class _ValueParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos] == " ":
            self.pos += 1

    def eat(self, s: str) -> bool:
        self.skip()
        if self.text.startswith(s, self.pos):
            self.pos += len(s)
            return True
        return False

    def expect(self, s: str):
        if not self.eat(s):
            raise ValueError(f"expected {s!r} at {self.pos} in {self.text!r}")

    def escape(self) -> str:
        # positioned after a backslash
        for i in sorted(range(len(_CONTROL_NAMES)), key=lambda k: -len(_CONTROL_NAMES[k])):
            name = _CONTROL_NAMES[i]
            if self.text.startswith(name, self.pos):
                self.pos += len(name)
                return chr(i)
        if self.text.startswith("DEL", self.pos):
            self.pos += 3
            return chr(127)
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos > start:
            return chr(int(self.text[start:self.pos]))
        c = self.text[self.pos]
        self.pos += 1
        return c

    def char_lit(self, quote: str) -> Optional[str]:
        c = self.text[self.pos]
        self.pos += 1
        if c != "\\":
            return c
        if self.text.startswith("&", self.pos):
            self.pos += 1
            return None
        return self.escape()

    def value(self, ty: Ty):
        self.skip()
        h = _head(ty)
        if h != "Fun" and self.text.startswith("(", self.pos) and h not in ("Pair", "Unit"):
            self.pos += 1
            v = self.value(ty)
            self.expect(")")
            return v
        if h == "Int":
            start = self.pos
            if self.text.startswith("-", self.pos):
                self.pos += 1
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            return int(self.text[start:self.pos])
        if h == "Char":
            self.expect("'")
            c = self.char_lit("'")
            self.expect("'")
            return c
        if h == "Bool":
            if self.eat("True"):
                return True
            self.expect("False")
            return False
        if h == "Unit":
            self.expect("()")
            return UNIT_V
        if h == "List":
            et = ty.args[0]
            if _head(et) == "Char" and self.eat('"'):
                out = []
                while not self.text.startswith('"', self.pos):
                    c = self.char_lit('"')
                    if c is not None:
                        out.append(c)
                self.pos += 1
                return tuple(out)
            self.expect("[")
            items = []
            if not self.eat("]"):
                items.append(self.value(et))
                while self.eat(","):
                    items.append(self.value(et))
                self.expect("]")
            return tuple(items)
        if h == "Pair":
            self.expect("(")
            a = self.value(ty.args[0])
            self.expect(",")
            b = self.value(ty.args[1])
            self.expect(")")
            return Pair(a, b)
        if h == "Maybe":
            if self.eat("Nothing"):
                return NOTHING
            self.expect("Just")
            return Just(self.value(ty.args[0]))
        if h == "Either":
            if self.eat("Left"):
                return Left(self.value(ty.args[0]))
            self.expect("Right")
            return Right(self.value(ty.args[1]))
        raise ValueError(f"cannot parse values of type {show_type(ty)}")


def parse_value(text: str, ty: Ty, fuel: int = DEFAULT_FUEL):
    """Inverse of ``render_value``; function values are program texts."""
    if _head(ty) == "Fun":
        return program_value(parse_expr(text), ty, fuel)
    p = _ValueParser(text)
    v = p.value(ty)
    p.skip()
    if p.pos != len(text):
        raise ValueError(f"trailing input in value {text!r}")
    return v


# -- behaviour --------------------------------------------------------------

def behavior_fingerprint(io: Sequence[Tuple[str, Any]]) -> str:
    """Sorted canonical ``input -> outcome`` lines; error messages ignored."""
    lines = []
    for inputs, outcome in io:
        out = outcome.text if isinstance(outcome, Outcome) else str(outcome)
        lines.append(f"{inputs}\t{out}")
    return "\n".join(sorted(lines))


def behaviors_equal(a, b) -> bool:
    """Same instantiated parameter types and identical fingerprints."""
    if [show_type(t) for t in a.param_tys] != [show_type(t) for t in b.param_tys]:
        return False
    return behavior_fingerprint(a.io_texts()) == behavior_fingerprint(b.io_texts())
