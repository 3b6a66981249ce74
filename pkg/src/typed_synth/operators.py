"""Operator set and the arity-unrolled expansion grammar."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .expr import (
    App, Expr, Hole, UnknownHole, Var, apply_all, find_hole, holes, replace_hole, spine,
)
from .types import Scheme, Ty, TVar, arity, parse_scheme, show_type, split_fun


@dataclass(frozen=True)
class Operator:
    name: str
    scheme: Scheme
    # key into the interpreter's builtin table
    semantics: str

    @property
    def max_arity(self) -> int:
        return arity(self.scheme.body)


def _op(name: str, scheme: str, semantics: Optional[str] = None) -> Operator:
    return Operator(name, parse_scheme(scheme), semantics or name)


# Identifier-safe aliases: just = Just, maybe_ = maybe, cons = (:), pair = (,),
# mappend = (<>), compose = (.), nil = [], zero = 0.
_ALL = [
    _op("zero", "Int"),
    _op("nil", "[a]"),
    _op("just", "a -> Maybe a"),
    _op("maybe_", "b -> (a -> b) -> Maybe a -> b"),
    _op("cons", "a -> [a] -> [a]"),
    _op("length", "Foldable t => t a -> Int"),
    _op("pair", "a -> b -> (a, b)"),
    _op("zip", "[a] -> [b] -> [(a, b)]"),
    _op("unzip", "[(a, b)] -> ([a], [b])"),
    _op("toEnum", "Enum a => Int -> a"),
    _op("fromEnum", "Enum a => a -> Int"),
    _op("foldMap", "(Foldable t, Monoid m) => (a -> m) -> t a -> m"),
    _op("elem", "Foldable t => a -> t a -> Bool"),
    _op("sequenceA", "Traversable t => t (f a) -> f (t a)"),
    _op("sequence_", "Foldable t => t (m a) -> m ()"),
    _op("fmap", "Functor f => (a -> b) -> f a -> f b"),
    _op("mempty", "Monoid a => a"),
    _op("mappend", "Semigroup a => a -> a -> a"),
    _op("compose", "(b -> c) -> (a -> b) -> a -> c"),
    # expository operators, not part of the experiment set
    _op("and", "Bool -> Bool -> Bool"),
    _op("false", "Bool"),
]

OPERATORS: Dict[str, Operator] = {op.name: op for op in _ALL}

EXPERIMENT_OPERATORS = (
    "just", "maybe_", "cons", "length", "pair", "zip", "unzip", "toEnum",
    "fromEnum", "foldMap", "elem", "sequenceA", "sequence_", "fmap", "mempty",
    "mappend", "compose", "zero", "nil",
)


def operator_set(names: Iterable[str]) -> List[Operator]:
    return [OPERATORS[n] for n in names]


def schemes(ops: Iterable[Operator]) -> Dict[str, Scheme]:
    return {op.name: op.scheme for op in ops}


@dataclass(frozen=True)
class ExpansionRule:
    """Operator ``op`` applied to ``applied`` holes."""

    op: Operator
    applied: int
    result_ty: Ty
    hole_tys: Tuple[Ty, ...]

    @property
    def name(self) -> str:
        return self.op.name

    def template(self, first_id: int) -> Expr:
        return apply_all(Var(self.op.name), [Hole(first_id + i, t) for i, t in enumerate(self.hole_tys)])

    def __repr__(self) -> str:
        return f"ExpansionRule({self})"

    def __str__(self) -> str:
        if not self.applied:
            return self.op.name
        return "(" + " ".join([self.op.name] + ["?"] * self.applied) + ")"


def unroll_grammar(ops: Sequence[Operator]) -> List[ExpansionRule]:
    """One rule per (operator, number of applied arguments), largest first."""
    names = [op.name for op in ops]
    if len(set(names)) != len(names):
        raise ValueError("operator names must be unique")
    rules = []
    for op in ops:
        params, _ = split_fun(op.scheme.body)
        for q in range(len(params), -1, -1):
            rest = op.scheme.body
            for _ in range(q):
                rest = rest.args[1]
            rules.append(ExpansionRule(op, q, rest, tuple(params[:q])))
    return rules


def rule_index(rules: Sequence[ExpansionRule]) -> Dict[Tuple[str, int], int]:
    return {(r.op.name, r.applied): i for i, r in enumerate(rules)}


def root_ppt(ann: Optional[Ty] = None) -> Hole:
    return Hole(0, TVar("a") if ann is None else ann)


def max_hole_id(e: Expr) -> int:
    return max((h.id for h in holes(e)), default=-1)


def fill_hole(ppt: Expr, hole_id: int, rule: ExpansionRule) -> Expr:
    """Replace the hole by ``rule``'s template with fresh, higher hole ids."""
    find_hole(ppt, hole_id)
    base = max(max_hole_id(ppt), hole_id) + 1
    return replace_hole(ppt, hole_id, rule.template(base))


def _parent_position(e: Expr, hole_id: int) -> Optional[Tuple[str, int, int]]:
    """(operator, applied count, argument index) of the hole's parent branch."""
    if isinstance(e, Hole):
        return None
    head, args = spine(e)
    for i, a in enumerate(args):
        if isinstance(a, Hole) and a.id == hole_id:
            if not isinstance(head, Var):
                raise ValueError("application head must be an operator")
            return head.name, len(args), i
        if isinstance(a, App):
            found = _parent_position(a, hole_id)
            if found is not None:
                return found
    return None


def hole_local_type(ppt: Expr, hole_id: int, ops: Optional[Dict[str, Operator]] = None) -> Ty:
    """Parameter type of the hole read off its parent rule, variables untouched."""
    h = find_hole(ppt, hole_id)
    pos = _parent_position(ppt, hole_id)
    if pos is None:
        return h.ann
    ops = OPERATORS if ops is None else ops
    name, _, i = pos
    params, _ = split_fun(ops[name].scheme.body)
    return params[i]


def rule_of_node(e: Expr, index: Dict[Tuple[str, int], int]) -> int:
    head, args = spine(e)
    if not isinstance(head, Var):
        raise ValueError("application head must be an operator")
    key = (head.name, len(args))
    if key not in index:
        raise KeyError(f"no rule for {head.name} applied to {len(args)} arguments")
    return index[key]


def rule_type_text(rule: ExpansionRule) -> str:
    return show_type(rule.result_ty)
