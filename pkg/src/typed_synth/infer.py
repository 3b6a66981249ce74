"""Unification-based type inference over DSL expressions."""
from __future__ import annotations

from typing import Dict, List, Optional, Tuple

from .expr import App, Expr, Hole, UnknownOperator, Var, holes
from .operators import OPERATORS
from .types import (
    TABLE, Scheme, Subst, TApp, TCon, TVar, Ty, TypeclassTable, UNIT, UnifyError, apply,
    free_vars, fun, rename, show_type, type_kinds, unify_into,
)


class DSLTypeError(TypeError):
    pass


class UnsatisfiedConstraint(DSLTypeError):
    def __init__(self, cls: str, ty: Ty):
        super().__init__(f"no instance {cls} {show_type(ty, 2)}")
        self.cls = cls
        self.ty = ty


def default_env() -> Dict[str, Scheme]:
    return {name: op.scheme for name, op in OPERATORS.items()}


_DEFAULT_ENV = default_env()


class _State:
    def __init__(self):
        self.subst: Subst = {}
        self.counter = 0
        self.constraints: List[Tuple[str, Ty]] = []
        self.occurrences: List[Ty] = []

    def fresh(self) -> TVar:
        self.counter += 1
        return TVar(f"_t{self.counter}")

    def freshen(self, t: Ty) -> Ty:
        return apply({v: self.fresh() for v in free_vars(t)}, t)


def _infer(e: Expr, env: Dict[str, Scheme], st: _State) -> Ty:
    if isinstance(e, Var):
        sc = env.get(e.name)
        if sc is None:
            raise UnknownOperator(e.name)
        mapping = {v: st.fresh() for v in sc.quantified}
        t = apply(mapping, sc.body)
        for cls, ct in sc.constraints:
            st.constraints.append((cls, apply(mapping, ct)))
        st.occurrences.append(t)
        return t
    if isinstance(e, Hole):
        return st.freshen(e.ann)
    tf = _infer(e.fn, env, st)
    tx = _infer(e.arg, env, st)
    r = st.fresh()
    try:
        unify_into(st.subst, tf, fun(tx, r))
    except UnifyError as err:
        raise DSLTypeError(str(err)) from None
    return r


def _check_constraints(st: _State, table: TypeclassTable) -> List[Tuple[str, Ty]]:
    kept: List[Tuple[str, Ty]] = []
    for cls, t in st.constraints:
        t = apply(st.subst, t)
        ok = table.entails(cls, t)
        if ok is False:
            raise UnsatisfiedConstraint(cls, t)
        if ok is None and (cls, t) not in kept:
            kept.append((cls, t))
    # all classes constraining one head variable must share a member
    allowed: Dict[str, frozenset] = {}
    for cls, t in kept:
        head = _head_var(t)
        members = table.membership.get(cls, frozenset())
        allowed[head] = allowed.get(head, members) & members
        if not allowed[head]:
            raise UnsatisfiedConstraint(cls, t)
    return kept


def _head_var(t: Ty) -> str:
    while isinstance(t, TApp):
        t = t.fn
    return t.name


def _run(e: Expr, env, expected: Optional[Ty], table) -> Tuple[_State, Ty, List[Tuple[str, Ty]]]:
    st = _State()
    t = _infer(e, env, st)
    if expected is not None:
        try:
            unify_into(st.subst, t, st.freshen(expected))
        except UnifyError as err:
            raise DSLTypeError(str(err)) from None
    body = apply(st.subst, t)
    kept = _check_constraints(st, table)
    return st, body, kept


def infer_type(
    e: Expr,
    env: Optional[Dict[str, Scheme]] = None,
    expected: Optional[Ty] = None,
    table: TypeclassTable = TABLE,
) -> Scheme:
    """Principal scheme of ``e``, variables renamed ``a, b, c, ...``.

    Holes stand for their annotation with fresh variables.  For complete
    expressions, a residual constraint is rejected when it is ambiguous:
    its variables do not all occur in the type, or the whole type is the
    constrained variable itself (e.g. a bare ``mempty``).
    """
    env = _DEFAULT_ENV if env is None else env
    st, body, kept = _run(e, env, expected, table)
    if not holes(e):
        body_vars = set(free_vars(body))
        for cls, t in kept:
            if not set(free_vars(t)) <= body_vars or t == body:
                raise UnsatisfiedConstraint(cls, t)
    names = free_vars(body)
    for _, t in kept:
        for v in free_vars(t):
            if v not in names:
                names.append(v)
    mapping = {v: _letter(i) for i, v in enumerate(names)}
    return Scheme(
        tuple(mapping.values()),
        tuple((c, rename(t, mapping)) for c, t in kept),
        rename(body, mapping),
    )


def _letter(i: int) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    return letters[i] if i < 26 else f"a{i}"


def type_checks(
    ppt: Expr,
    env: Optional[Dict[str, Scheme]] = None,
    expected: Optional[Ty] = None,
    table: TypeclassTable = TABLE,
) -> bool:
    """Whether some typing of the partial program exists.

    ``expected`` optionally pins the type of the whole tree (its variables
    are treated as flexible).
    """
    try:
        infer_type(ppt, env, expected, table)
    except (DSLTypeError, UnknownOperator):
        return False
    return True


def sane_type(s: Scheme) -> bool:
    """Reject functions nested in data and constraints on non-variables."""

    def ok(t: Ty, inside_data: bool) -> bool:
        if isinstance(t, TVar):
            return True
        if isinstance(t, TCon):
            if t.name == "Fun":
                if inside_data:
                    return False
                return all(ok(a, False) for a in t.args)
            return all(ok(a, True) for a in t.args)
        return ok(t.fn, True) and ok(t.arg, True)

    if not ok(s.body, False):
        return False
    return all(isinstance(t, TVar) for _, t in s.constraints)


def elaborate(
    program: Expr,
    ty: Ty,
    env: Optional[Dict[str, Scheme]] = None,
    table: TypeclassTable = TABLE,
) -> List[Ty]:
    """Concrete type of every operator occurrence (pre-order) at instance ``ty``.

    Variables left undetermined default to ``()`` or, for higher-kinded
    ones, to the list constructor.
    """
    env = _DEFAULT_ENV if env is None else env
    st = _State()
    t = _infer(program, env, st)
    try:
        unify_into(st.subst, t, ty)
    except UnifyError as err:
        raise DSLTypeError(str(err)) from None
    _check_constraints(st, table)
    occ = [apply(st.subst, o) for o in st.occurrences]
    kinds: Dict[str, int] = {}
    for o in occ:
        type_kinds(o, kinds)
    if kinds:
        defaults = {v: (TCon("List") if k else UNIT) for v, k in kinds.items()}
        occ = [apply(defaults, o) for o in occ]
    return occ
