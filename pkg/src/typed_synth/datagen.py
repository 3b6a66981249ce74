"""Task dataset generation: enumerate, instantiate, sample, evaluate, dedup, split.

Every random choice draws from a labelled substream of one seeded
generator, so growing one stage (say, more inputs per type) leaves the
choices of every other stage untouched.
"""
from __future__ import annotations

import hashlib
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .encoding import fix_sample_count
from .expr import Expr, node_count, parse_expr, print_expr
from .infer import infer_type, sane_type, type_checks
from .interp import (
    DEFAULT_FUEL, NOTHING, EvalError, UNIT_V, Just, Left, Outcome, Pair, Right, behavior_fingerprint,
    eval_program, program_value, render_inputs, render_value,
)
from .operators import (
    EXPERIMENT_OPERATORS, ExpansionRule, fill_hole, operator_set, root_ppt, rule_type_text,
    unroll_grammar,
)
from .expr import holes
from .types import (
    BOOL, CHAR, INT, TABLE, Scheme, TCon, Ty, TypeclassTable, TVar, apply, free_vars, parse_scheme,
    UnifyError, parse_type, show_type, split_fun, type_head, type_kinds, unify,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
_BASE = {"Int": INT, "Char": CHAR, "Bool": BOOL}


class NoValidInstance(ValueError):
    pass


class NoSamples(ValueError):
    pass


class EmptyDataset(RuntimeError):
    pass


@dataclass
class GenConfig:
    max_nodes: int = 3
    max_type_instances: int = 5
    max_inputs_per_instance: int = 10
    int_range: Tuple[int, int] = (-20, 20)
    char_range: Tuple[str, str] = ("0", "9")
    container_len_range: Tuple[int, int] = (0, 5)
    type_nesting_limit: int = 1
    max_monotypes: Optional[int] = None
    ratios: Tuple[float, float, float] = (0.35, 0.35, 0.30)
    train_sample_cap: int = 1000
    io_pairs_fixed: int = 8
    seed: int = 0
    operators: Tuple[str, ...] = EXPERIMENT_OPERATORS
    base_types: Tuple[str, ...] = ("Int", "Char", "Bool")
    # io pairs (and instance types) rendering longer than this are dropped
    max_io_len: int = 64
    fuel: int = DEFAULT_FUEL

    def __post_init__(self):
        self.int_range = tuple(self.int_range)
        self.char_range = tuple(self.char_range)
        self.container_len_range = tuple(self.container_len_range)
        self.ratios = tuple(float(r) for r in self.ratios)
        self.operators = tuple(self.operators)
        self.base_types = tuple(self.base_types)

    def validate(self) -> "GenConfig":
        problems = []
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or abs(sum(self.ratios) - 1) > 1e-9:
            problems.append(f"ratios must be three nonnegative numbers summing to 1, got {self.ratios}")
        lo, hi = self.int_range
        if lo > hi:
            problems.append(f"empty int_range {self.int_range}")
        a, b = self.char_range
        if len(a) != 1 or len(b) != 1 or a > b:
            problems.append(f"empty char_range {self.char_range}")
        lo, hi = self.container_len_range
        if lo < 0 or lo > hi:
            problems.append(f"empty container_len_range {self.container_len_range}")
        for name in ("max_type_instances", "max_inputs_per_instance", "train_sample_cap", "io_pairs_fixed", "max_io_len", "fuel"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.max_nodes < 0 or self.type_nesting_limit < 0:
            problems.append("max_nodes and type_nesting_limit must be nonnegative")
        if self.max_monotypes is not None and self.max_monotypes < 1:
            problems.append("max_monotypes must be positive or null")
        unknown = [t for t in self.base_types if t not in _BASE]
        if unknown or not self.base_types:
            problems.append(f"base_types must be a nonempty subset of {sorted(_BASE)}")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "GenConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


def substream(seed: int, *labels: str) -> np.random.Generator:
    """Independent generator for a named stage (labels hashed with crc32)."""
    key = tuple(zlib.crc32(str(label).encode()) for label in labels)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# -- enumeration ------------------------------------------------------------

def enumerate_programs(rules: Sequence[ExpansionRule], max_nodes: int) -> List[Expr]:
    """All hole-free type-correct programs with at most ``max_nodes`` operators.

    Depth-first leftmost-hole derivation in rule order; partial trees that
    fail to type-check are pruned (a typing failure never recovers).
    """
    env = {r.op.name: r.op.scheme for r in rules}
    out: List[Expr] = []

    def go(ppt: Expr):
        hs = holes(ppt)
        if not hs:
            if type_checks(ppt, env):
                out.append(ppt)
            return
        used = node_count(ppt)
        for rule in rules:
            # every remaining hole needs at least one operator
            if used + 1 + len(hs) - 1 + rule.applied > max_nodes:
                continue
            nxt = fill_hole(ppt, hs[0].id, rule)
            if holes(nxt) and not type_checks(nxt, env):
                continue
            go(nxt)

    if max_nodes >= 1:
        go(root_ppt())
    return out


# -- types ------------------------------------------------------------------

def _types_up_to(bases: Sequence[Ty], depth: int) -> List[Ty]:
    level = list(bases)
    if depth == 0:
        return level
    inner = _types_up_to(bases, depth - 1)
    out = list(level)
    for c in ("Maybe", "List"):
        out += [TCon(c, (t,)) for t in inner]
    for c in ("Pair", "Either"):
        out += [TCon(c, (a, b)) for a in inner for b in inner]
    seen, uniq = set(), []
    for t in out:
        if t not in seen:
            seen.add(t)
            uniq.append(t)
    return uniq


def sample_monotypes(cfg: GenConfig, rng: np.random.Generator) -> List[Ty]:
    """Monomorphic kind-* types up to the nesting limit, sampled uniformly."""
    universe = _types_up_to([_BASE[b] for b in cfg.base_types], cfg.type_nesting_limit)
    if cfg.max_monotypes is None or cfg.max_monotypes >= len(universe):
        return universe
    idx = np.sort(rng.choice(len(universe), size=cfg.max_monotypes, replace=False))
    return [universe[i] for i in idx]


def monotypes_by_arity(monotypes: Sequence[Ty]) -> Dict[int, List[Ty]]:
    """Kind-* types and the partially applied constructors they contain."""
    unary: List[Ty] = []
    for t in monotypes:
        if isinstance(t, TCon) and t.args:
            head = TCon(t.name, t.args[:-1])
            if head not in unary:
                unary.append(head)
    return {0: list(monotypes), 1: unary}


def _top_level_vars(body: Ty) -> set:
    params, result = split_fun(body)
    parts = params + [result]
    whole = {p.name for p in parts if isinstance(p, TVar)}
    nested = set()
    for p in parts:
        if not isinstance(p, TVar):
            nested.update(free_vars(p))
    return whole - nested


def instance_candidates(scheme: Scheme, by_arity: Dict[int, List[Ty]], table: TypeclassTable = TABLE) -> Dict[str, List[Ty]]:
    kinds: Dict[str, int] = {}
    type_kinds(scheme.body, kinds)
    top = _top_level_vars(scheme.body)
    out: Dict[str, List[Ty]] = {}
    for v in free_vars(scheme.body):
        k = kinds.get(v, 0)
        if k > 1:
            raise NoValidInstance(f"type variable {v} has kind of arity {k}")
        if k == 1:
            pool = by_arity.get(1, [])
        elif v in top:
            pool = by_arity[0]
        else:
            pool = [t for t in by_arity[0] if not (isinstance(t, TCon) and t.args)]
        classes = [c for c, t in scheme.constraints if t == TVar(v)]
        pool = [t for t in pool if all(table.member(c, type_head(t)) for c in classes)]
        if not pool:
            raise NoValidInstance(f"no monotype satisfies the constraints on {v} in {scheme}")
        out[v] = pool
    return out


def _mixed_radix(index: int, radices: Sequence[int]) -> List[int]:
    digits = []
    for r in reversed(radices):
        digits.append(index % r)
        index //= r
    return digits[::-1]


def instantiate_task(
    program: Expr,
    scheme: Scheme,
    monotypes: Dict[int, List[Ty]],
    table: TypeclassTable,
    cfg: GenConfig,
    rng: np.random.Generator,
) -> List[Ty]:
    """Up to ``max_type_instances`` distinct monomorphic instances of ``scheme``."""
    if not free_vars(scheme.body):
        return [scheme.body]
    cands = instance_candidates(scheme, monotypes, table)
    names = list(cands)
    radices = [len(cands[v]) for v in names]
    total = int(np.prod(radices))
    k = min(cfg.max_type_instances, total)
    picks = np.sort(rng.choice(total, size=k, replace=False))
    out = []
    for p in picks:
        digits = _mixed_radix(int(p), radices)
        s = {v: cands[v][d] for v, d in zip(names, digits)}
        out.append(apply(s, scheme.body))
    return out


# -- inputs -----------------------------------------------------------------

class FunctionPool:
    """Generated programs usable as function-typed inputs, indexed by type."""

    def __init__(self, programs: Sequence[Expr], table: TypeclassTable = TABLE):
        self.table = table
        self.entries: List[Tuple[Expr, Scheme]] = []
        for p in programs:
            sc = infer_type(p, table=table)
            if split_fun(sc.body)[0]:
                self.entries.append((p, sc))
        self._cache: Dict[Ty, List[Expr]] = {}

    def matching(self, ty: Ty) -> List[Expr]:
        if ty not in self._cache:
            self._cache[ty] = [p for p, sc in self.entries if self._admits(sc, ty)]
        return self._cache[ty]

    def _admits(self, sc: Scheme, ty: Ty) -> bool:
        try:
            s = unify(sc.body, ty)
        except UnifyError:
            return False
        return all(self.table.entails(c, apply(s, t)) for c, t in sc.constraints)


def random_value(ty: Ty, cfg: GenConfig, rng: np.random.Generator):
    head = type_head(ty)
    if head == "Int":
        return int(rng.integers(cfg.int_range[0], cfg.int_range[1] + 1))
    if head == "Char":
        return chr(int(rng.integers(ord(cfg.char_range[0]), ord(cfg.char_range[1]) + 1)))
    if head == "Bool":
        return bool(rng.integers(2))
    if head == "Unit":
        return UNIT_V
    if head == "List":
        n = int(rng.integers(cfg.container_len_range[0], cfg.container_len_range[1] + 1))
        return tuple(random_value(ty.args[0], cfg, rng) for _ in range(n))
    if head == "Maybe":
        return Just(random_value(ty.args[0], cfg, rng)) if rng.integers(2) else NOTHING
    if head == "Pair":
        return Pair(random_value(ty.args[0], cfg, rng), random_value(ty.args[1], cfg, rng))
    if head == "Either":
        if rng.integers(2):
            return Right(random_value(ty.args[1], cfg, rng))
        return Left(random_value(ty.args[0], cfg, rng))
    raise ValueError(f"cannot sample values of type {show_type(ty)}")


def gen_inputs(ty: Ty, cfg: GenConfig, rng: np.random.Generator, pool: Optional[FunctionPool] = None) -> List[Any]:
    """Up to ``max_inputs_per_instance`` distinct values of monomorphic ``ty``."""
    n = cfg.max_inputs_per_instance
    if type_head(ty) == "Fun":
        progs = pool.matching(ty) if pool is not None else []
        if not progs:
            raise NoSamples(f"no generated program of type {show_type(ty)}")
        idx = np.sort(rng.choice(len(progs), size=min(n, len(progs)), replace=False))
        out = []
        for i in idx:
            try:
                out.append(program_value(progs[i], ty, cfg.fuel))
            except EvalError:
                continue
        return out
    seen, out = set(), []
    for _ in range(n):
        v = random_value(ty, cfg, rng)
        key = render_value(v, ty)
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out


# -- tasks ------------------------------------------------------------------

@dataclass
class IOPair:
    inputs: Tuple[str, ...]  # rendered per argument
    input_text: str
    output: Outcome


@dataclass
class TaskInstance:
    program: Expr
    scheme: Scheme
    param_tys: List[Ty]
    out_ty: Ty
    ios: List[IOPair]
    split: str = ""
    io_fixed: Tuple[int, ...] = ()

    @property
    def text(self) -> str:
        return print_expr(self.program)

    @property
    def ty(self) -> Ty:
        from .types import fun

        return fun(*self.param_tys, self.out_ty)

    @property
    def type_text(self) -> str:
        return show_type(self.ty)

    @property
    def input_type_text(self) -> str:
        return "(" + ", ".join(show_type(t) for t in self.param_tys) + ")"

    @property
    def output_type_text(self) -> str:
        return show_type(self.out_ty)

    @property
    def nodes(self) -> int:
        return node_count(self.program)

    def io_texts(self) -> List[Tuple[str, str]]:
        return [(io.input_text, io.output.text) for io in self.ios]

    def fixed_ios(self) -> List[IOPair]:
        return [self.ios[i] for i in self.io_fixed]

    def fingerprint(self) -> str:
        """Digest of parameter types plus the sorted io behaviour."""
        key = self.input_type_text + "\n" + behavior_fingerprint(self.io_texts())
        return hashlib.sha256(key.encode()).hexdigest()

    def to_json(self) -> Dict[str, Any]:
        return {
            "program": self.text,
            "scheme": str(self.scheme),
            "type": self.type_text,
            "param_types": [show_type(t) for t in self.param_tys],
            "output_type": self.output_type_text,
            "nodes": self.nodes,
            "ios": [{"inputs": list(io.inputs), "input": io.input_text, "output": io.output.text} for io in self.ios],
            "io_fixed": list(self.io_fixed),
            "fingerprint": self.fingerprint(),
        }

    @classmethod
    def from_json(cls, d: Dict[str, Any], split: str = "") -> "TaskInstance":
        ios = []
        for io in d["ios"]:
            text = io["output"]
            kind = text[5:] if text.startswith("Left ") else None
            ios.append(IOPair(tuple(io["inputs"]), io["input"], Outcome(text, None, kind)))
        return cls(
            program=parse_expr(d["program"]),
            scheme=parse_scheme(d["scheme"]),
            param_tys=[parse_type(t) for t in d["param_types"]],
            out_ty=parse_type(d["output_type"]),
            ios=ios,
            split=split,
            io_fixed=tuple(d["io_fixed"]),
        )


def build_instance(
    program: Expr,
    scheme: Scheme,
    ty: Ty,
    cfg: GenConfig,
    pool: FunctionPool,
    input_cache: Dict[Ty, List[Any]],
) -> Optional[TaskInstance]:
    """Sample inputs, evaluate, filter overlong pairs; None if nothing is left."""
    params, out_ty = split_fun(ty)
    type_texts = ["(" + ", ".join(show_type(p) for p in params) + ")", show_type(out_ty), show_type(ty)]
    if max(len(t) for t in type_texts) > cfg.max_io_len:
        return None
    per_param = []
    for p in params:
        if p not in input_cache:
            try:
                input_cache[p] = gen_inputs(p, cfg, substream(cfg.seed, "inputs", show_type(p)), pool)
            except NoSamples:
                input_cache[p] = []
        if not input_cache[p]:
            return None
        per_param.append(input_cache[p])
    text = print_expr(program)
    tstr = show_type(ty)
    radices = [len(xs) for xs in per_param]
    total = int(np.prod(radices))
    # keyed by parameter types only, so equal-typed tasks see equal inputs
    rng = substream(cfg.seed, "combos", *(show_type(p) for p in params))
    k = min(cfg.max_inputs_per_instance, total)
    picks = np.sort(rng.choice(total, size=k, replace=False))
    ios = []
    for pick in picks:
        args = [xs[d] for xs, d in zip(per_param, _mixed_radix(int(pick), radices))]
        rendered = tuple(render_value(a, t) for a, t in zip(args, params))
        input_text = "(" + ", ".join(rendered) + ")"
        outcome = eval_program(program, args, ty, cfg.fuel)
        if len(input_text) > cfg.max_io_len or len(outcome.text) > cfg.max_io_len:
            continue
        ios.append(IOPair(rendered, input_text, outcome))
    if not ios:
        return None
    fixed = fix_sample_count(list(range(len(ios))), cfg.io_pairs_fixed, substream(cfg.seed, "fixed", text, tstr))
    return TaskInstance(program, scheme, list(params), out_ty, ios, io_fixed=tuple(int(i) for i in fixed))


def dedup_by_behavior(tasks: Sequence[TaskInstance], generality: Optional[Dict[str, int]] = None) -> List[TaskInstance]:
    """Keep one task per behaviour: most general program, then fewest nodes, then text.

    ``generality`` maps program text to its instance count; by default it is
    counted over ``tasks``.  Survivors keep their input order.
    """
    if generality is None:
        generality = {}
        for t in tasks:
            generality[t.text] = generality.get(t.text, 0) + 1
    best: Dict[str, int] = {}
    for i, t in enumerate(tasks):
        key = t.fingerprint()
        j = best.get(key)
        if j is None or _keep_rank(t, generality) < _keep_rank(tasks[j], generality):
            best[key] = i
    return [tasks[i] for i in sorted(best.values())]


def _keep_rank(t: TaskInstance, generality: Dict[str, int]):
    return (-generality.get(t.text, 0), t.nodes, t.text, t.type_text)


def split_dataset(tasks: Sequence[TaskInstance], ratios: Sequence[float], rng: np.random.Generator) -> Dict[str, List[TaskInstance]]:
    """Uniform random partition with sizes ``round(r * n)`` (test takes the rest)."""
    n = len(tasks)
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    order = rng.permutation(n)
    parts = {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }
    out = {}
    for name, idx in parts.items():
        out[name] = []
        for i in idx:
            tasks[i].split = name
            out[name].append(tasks[i])
    return out


# -- character maps ---------------------------------------------------------

@dataclass
class CharMaps:
    io: Dict[str, int]
    types: Dict[str, int]
    union: Dict[str, int]
    max_len_io: int
    max_len_either: int


def _index(chars) -> Dict[str, int]:
    return {c: i for i, c in enumerate(sorted(set(chars)))}


def task_type_strings(t: TaskInstance) -> List[str]:
    return [t.input_type_text, t.output_type_text, t.type_text]


def rule_type_strings(rules: Sequence[ExpansionRule]) -> List[str]:
    out = []
    for r in rules:
        out.append(rule_type_text(r))
        out.extend(show_type(h) for h in r.hole_tys)
    return out


def build_char_maps(tasks: Sequence[TaskInstance], include_types: bool = True, rules: Sequence[ExpansionRule] = ()) -> CharMaps:
    io_strings = [s for t in tasks for io in t.ios for s in (io.input_text, io.output.text)]
    type_strings = [s for t in tasks for s in task_type_strings(t)] + rule_type_strings(rules)
    if not include_types:
        type_strings = []
    io_map = _index("".join(io_strings))
    ty_map = _index("".join(type_strings))
    union = _index("".join(io_strings) + "".join(type_strings))
    max_io = max((len(s) for s in io_strings), default=0)
    max_either = max([max_io] + [len(s) for s in type_strings])
    return CharMaps(io_map, ty_map, union, max_io, max_either)


# -- dataset ----------------------------------------------------------------

@dataclass
class Dataset:
    operators: List[str]
    rules: List[ExpansionRule]
    tasks: Dict[str, List[TaskInstance]]
    charmaps: CharMaps
    gen_config: GenConfig
    monotypes: Dict[int, List[Ty]] = field(default_factory=dict)

    def all_tasks(self) -> List[TaskInstance]:
        return [t for s in SPLITS for t in self.tasks.get(s, [])]

    def to_json(self) -> Dict[str, Any]:
        return {
            "operators": [{"name": r, "type": str(o.scheme)} for r, o in zip(self.operators, operator_set(self.operators))],
            "rules": [
                {"operator": r.name, "applied": r.applied, "result_type": show_type(r.result_ty), "hole_types": [show_type(h) for h in r.hole_tys]}
                for r in self.rules
            ],
            "tasks": {s: [t.to_json() for t in self.tasks.get(s, [])] for s in SPLITS},
            "charmap_io": self.charmaps.io,
            "charmap_types": self.charmaps.types,
            "charmap_union": self.charmaps.union,
            "max_len_io": self.charmaps.max_len_io,
            "max_len_either": self.charmaps.max_len_either,
            "gen_config": self.gen_config.to_dict(),
            "monotypes_by_arity": {str(k): [show_type(t) for t in v] for k, v in self.monotypes.items()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True, ensure_ascii=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> "Dataset":
        cfg = GenConfig.from_dict(d["gen_config"])
        names = [o["name"] for o in d["operators"]]
        rules = unroll_grammar(operator_set(names))
        stored = [(r["operator"], r["applied"]) for r in d["rules"]]
        if stored != [(r.name, r.applied) for r in rules]:
            raise ValueError("stored rules do not match the operator set")
        tasks = {s: [TaskInstance.from_json(t, s) for t in d["tasks"][s]] for s in SPLITS}
        cm = CharMaps(d["charmap_io"], d["charmap_types"], d["charmap_union"], d["max_len_io"], d["max_len_either"])
        mono = {int(k): [parse_type(t) for t in v] for k, v in d["monotypes_by_arity"].items()}
        return cls(names, rules, tasks, cm, cfg, mono)

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def candidate_tasks(cfg: GenConfig, rules, programs, by_arity) -> List[TaskInstance]:
    """Every (program, instance) with at least one io pair, in canonical order."""
    pool = FunctionPool(programs)
    input_cache: Dict[Ty, List[Any]] = {}
    out = []
    for p in programs:
        scheme = infer_type(p)
        if not split_fun(scheme.body)[0] or not sane_type(scheme):
            continue
        text = print_expr(p)
        try:
            instances = instantiate_task(p, scheme, by_arity, TABLE, cfg, substream(cfg.seed, "instances", text))
        except NoValidInstance:
            continue
        for ty in instances:
            task = build_instance(p, scheme, ty, cfg, pool, input_cache)
            if task is not None:
                out.append(task)
    return out


def generate_dataset(cfg: GenConfig) -> Dataset:
    cfg.validate()
    rules = unroll_grammar(operator_set(cfg.operators))
    programs = enumerate_programs(rules, cfg.max_nodes)
    log.info("enumerated %d programs", len(programs))
    mono = sample_monotypes(cfg, substream(cfg.seed, "monotypes"))
    by_arity = monotypes_by_arity(mono)
    tasks = candidate_tasks(cfg, rules, programs, by_arity)
    log.info("%d task instances before dedup", len(tasks))
    tasks = dedup_by_behavior(tasks)
    if not tasks:
        raise EmptyDataset("every candidate task was filtered out")
    if len(tasks) > cfg.train_sample_cap:
        keep = np.sort(substream(cfg.seed, "cap").choice(len(tasks), size=cfg.train_sample_cap, replace=False))
        tasks = [tasks[i] for i in keep]
    splits = split_dataset(tasks, cfg.ratios, substream(cfg.seed, "split"))
    charmaps = build_char_maps(tasks, include_types=True, rules=rules)
    return Dataset(list(cfg.operators), rules, splits, charmaps, cfg, by_arity)
