"""Sampling-based synthesis, success accounting, baselines and significance tests."""
from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .expr import Expr, UnknownOperator, holes, node_count, print_expr
from .infer import DSLTypeError, type_checks
from .interp import eval_program, parse_value
from .operators import ExpansionRule, fill_hole, root_ppt
from .r3nn import AllMasked, ppt_key, sample_expansion

# (ppt, hole ids left to right) -> probability matrix [holes, rules]
Policy = Callable[[Expr, List[int]], np.ndarray]


@dataclass
class EvalConfig:
    samples: int = 100
    synth_node_limit: int = 6
    seed: int = 0

    def validate(self) -> "EvalConfig":
        if self.samples < 1 or self.synth_node_limit < 1:
            raise ValueError("samples and synth_node_limit must be at least 1")
        return self


def sample_programs(
    policy: Policy,
    root: Expr,
    rules: Sequence[ExpansionRule],
    samples: int,
    limit: int,
    rng: np.random.Generator,
    mode: str = "first",
    keep_discards: bool = False,
) -> List[Optional[Expr]]:
    """Draw ``samples`` derivations; ones that cannot finish within ``limit`` nodes are dropped.

    With ``keep_discards`` a dropped draw leaves ``None`` in its slot, so
    that prefixes of the list correspond to prefixes of the draws.
    """
    cache: Dict[str, np.ndarray] = {}
    out: List[Optional[Expr]] = []
    for _ in range(samples):
        ppt = root
        while True:
            hs = holes(ppt)
            if not hs:
                out.append(ppt)
                break
            if node_count(ppt) + len(hs) > limit:
                if keep_discards:
                    out.append(None)
                break
            key = ppt_key(ppt)
            if key not in cache:
                try:
                    cache[key] = policy(ppt, [h.id for h in hs])
                except AllMasked:
                    cache[key] = None
            probs = cache[key]
            if probs is None:
                if keep_discards:
                    out.append(None)
                break
            row, r = sample_expansion(probs, rng, mode)
            ppt = fill_hole(ppt, hs[row].id, rules[r])
    return out


def model_policy(model, task) -> Policy:
    ctx = model.context(task)

    def policy(ppt, hole_ids):
        probs, _ = model.distribution(ctx, ppt)
        return probs

    return policy


def uniform_policy(rules: Sequence[ExpansionRule], type_checked: bool = False, env=None, expected=None) -> Policy:
    def policy(ppt, hole_ids):
        probs = np.zeros((len(hole_ids), len(rules)))
        if type_checked:
            ok = np.array([type_checks(fill_hole(ppt, hole_ids[0], r), env, expected) for r in rules], dtype=float)
            if not ok.any():
                raise AllMasked("no type-correct expansion")
            probs[0] = ok / ok.sum()
        else:
            probs[0] = 1.0 / len(rules)
        return probs

    return policy


def oracle_policy(task, rules: Sequence[ExpansionRule]) -> Policy:
    """Always picks the golden expansion of the leftmost hole."""
    from .train import golden_derivation

    golden = {ppt_key(st.ppt): st.rule for st in golden_derivation(task.program, rules, task.ty)}

    def policy(ppt, hole_ids):
        probs = np.zeros((len(hole_ids), len(rules)))
        probs[0, golden[ppt_key(ppt)]] = 1.0
        return probs

    return policy


def synthesize(model, task, cfg: EvalConfig, rng: np.random.Generator, keep_discards: bool = False) -> List[Expr]:
    return sample_programs(
        model_policy(model, task), root_ppt(task.ty), model.rules, cfg.samples, cfg.synth_node_limit, rng,
        model.cfg.policy, keep_discards,
    )


def random_baseline(
    task, rules: Sequence[ExpansionRule], cfg: EvalConfig, rng: np.random.Generator,
    type_checked: bool = False, keep_discards: bool = False,
) -> List[Expr]:
    env = {r.op.name: r.op.scheme for r in rules}
    policy = uniform_policy(rules, type_checked, env, task.ty)
    return sample_programs(policy, root_ppt(task.ty), rules, cfg.samples, cfg.synth_node_limit, rng, "first", keep_discards)


# -- success ----------------------------------------------------------------

def _task_inputs(task) -> List[List]:
    cached = getattr(task, "_parsed_inputs", None)
    if cached is None:
        cached = [[parse_value(text, ty) for text, ty in zip(io.inputs, task.param_tys)] for io in task.ios]
        task._parsed_inputs = cached
    return cached


def program_matches(program: Expr, task) -> bool:
    """Whether ``program`` reproduces every stored outcome of ``task``."""
    try:
        for args, io in zip(_task_inputs(task), task.ios):
            if eval_program(program, args, task.ty).text != io.output.text:
                return False
    except (DSLTypeError, UnknownOperator, KeyError):
        return False
    return True


def task_success(programs: Sequence[Expr], task) -> bool:
    seen = set()
    for p in programs:
        key = print_expr(p)
        if key in seen:
            continue
        seen.add(key)
        if program_matches(p, task):
            return True
    return False


# -- reports ----------------------------------------------------------------

@dataclass
class EvalReport:
    flags: Dict[str, bool]  # task id -> success
    nodes: Dict[str, int]
    samples: int
    records: Dict[str, List[str]] = field(default_factory=dict)
    sub_reports: Dict[str, "EvalReport"] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.flags.values()))) if self.flags else 0.0

    def by_nodes(self) -> Dict[int, float]:
        out: Dict[int, List[bool]] = {}
        for k, ok in self.flags.items():
            out.setdefault(self.nodes[k], []).append(ok)
        return {n: float(np.mean(v)) for n, v in sorted(out.items())}

    def to_json(self) -> Dict:
        return {
            "samples": self.samples,
            "mean": self.mean,
            "by_nodes": {str(k): v for k, v in self.by_nodes().items()},
            "flags": self.flags,
            "nodes": self.nodes,
            "records": self.records,
            "sub_reports": {k: v.to_json() for k, v in self.sub_reports.items()},
        }

    @classmethod
    def from_json(cls, d: Dict) -> "EvalReport":
        return cls(
            flags=d["flags"], nodes=d["nodes"], samples=d["samples"], records=d.get("records", {}),
            sub_reports={k: cls.from_json(v) for k, v in d.get("sub_reports", {}).items()},
        )


def task_id(task) -> str:
    return f"{task.text} :: {task.type_text}"


def accuracy_report(results: Sequence[Tuple[object, List[Expr]]], samples: int, sub_samples: Sequence[int] = (20,)) -> EvalReport:
    """Aggregate (task, sampled programs) pairs; prefixes give the smaller-sample reports.

    ``None`` entries mark discarded draws.
    """
    def build(n: int, keep_records: bool) -> EvalReport:
        flags, nodes, records = {}, {}, {}
        for task, progs in results:
            k = task_id(task)
            kept = [p for p in progs[:n] if p is not None]
            flags[k] = task_success(kept, task)
            nodes[k] = task.nodes
            if keep_records:
                records[k] = [print_expr(p) for p in kept]
        return EvalReport(flags, nodes, n, records)

    rep = build(samples, True)
    for n in sub_samples:
        if n < samples:
            rep.sub_reports[f"@{n}"] = build(n, False)
    return rep


def _run_one(args):
    kind, model, task, rules, cfg, type_checked = args
    rng = np.random.default_rng([cfg.seed, _stable_hash(task_id(task))])
    if kind == "model":
        return synthesize(model, task, cfg, rng, keep_discards=True)
    if kind == "oracle":
        policy = oracle_policy(task, rules)
        return sample_programs(policy, root_ppt(task.ty), rules, cfg.samples, cfg.synth_node_limit, rng, "first", True)
    if kind == "random":
        return random_baseline(task, rules, cfg, rng, type_checked, keep_discards=True)
    raise ValueError(f"unknown evaluation kind {kind!r}")


def _stable_hash(text: str) -> int:
    import zlib

    return zlib.crc32(text.encode())


def evaluate_tasks(
    tasks: Sequence,
    cfg: EvalConfig,
    model=None,
    rules: Optional[Sequence[ExpansionRule]] = None,
    kind: str = "model",
    type_checked: bool = False,
    workers: Optional[int] = None,
) -> EvalReport:
    """Sample for every task (``kind`` is model, random or oracle) and aggregate.

    Each task draws from its own seeded stream, so results do not depend
    on task order or on the number of workers.
    """
    cfg.validate()
    rules = model.rules if rules is None else rules
    workers = workers or int(os.environ.get("SYNTH_THREADS", "1") or 1)
    jobs = [(kind, model, t, rules, cfg, type_checked) for t in tasks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            progs = list(pool.map(_run_one, jobs, chunksize=4))
    else:
        progs = [_run_one(j) for j in jobs]
    return accuracy_report(list(zip(tasks, progs)), cfg.samples)


def quick_accuracy(model, tasks: Sequence, samples: int, seed: int) -> Tuple[float, float]:
    """(accuracy with the first 20 samples, accuracy with all ``samples``)."""
    rep = evaluate_tasks(tasks, EvalConfig(samples=samples, seed=seed), model, workers=1)
    small = rep.sub_reports.get("@20", rep)
    return small.mean, rep.mean


def write_report(rep: EvalReport, directory, name: str = "report") -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, f"{name}.json"), "w") as fh:
        json.dump(rep.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, f"{name}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "nodes", f"success@{rep.samples}"] + [f"success{k}" for k in rep.sub_reports])
        for k in sorted(rep.flags):
            w.writerow([k, rep.nodes[k], int(rep.flags[k])] + [int(s.flags[k]) for s in rep.sub_reports.values()])


# -- statistics -------------------------------------------------------------

def t_test(acc_a: Sequence[float], acc_b: Sequence[float]) -> float:
    """Two-sided pooled-variance two-sample t-test p-value."""
    a = np.asarray(acc_a, dtype=float)
    b = np.asarray(acc_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least two seeds per side")
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        if a[0] == b[0]:
            return 1.0
        return 0.0
    with warnings.catch_warnings():
        # one constant side (e.g. every seed at 100%) is legitimate; scipy warns about it
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(stats.ttest_ind(a, b, equal_var=True).pvalue)
