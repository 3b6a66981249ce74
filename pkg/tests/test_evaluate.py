import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import SMALL_OPS
from oracles import pooled_t_pvalue
from typed_synth.expr import holes, node_count, print_expr
from typed_synth.model import Model, ModelConfig
from typed_synth.operators import fill_hole, root_ppt
from typed_synth.evaluate import (
    EvalConfig, EvalReport, accuracy_report, evaluate_tasks, program_matches, random_baseline, sample_programs,
    t_test, task_success, uniform_policy, write_report,
)
from typed_synth.r3nn import sample_expansion


def test_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(samples=0).validate()


def test_oracle_solves_everything(small_dataset):
    tasks = [t for split in small_dataset.tasks.values() for t in split]
    rep = evaluate_tasks(tasks, EvalConfig(samples=1), rules=small_dataset.rules, kind="oracle")
    assert rep.mean == 1.0
    assert all(len(v) == 1 for v in rep.records.values())


def test_unknown_kind(small_dataset):
    with pytest.raises(ValueError):
        evaluate_tasks(small_dataset.tasks["test"][:1], EvalConfig(), rules=small_dataset.rules, kind="magic")


def test_empty_program_list_fails(small_dataset):
    assert task_success([], small_dataset.tasks["train"][0]) is False


def test_uniform_rule_frequencies(small_dataset):
    rules = small_dataset.rules
    probs = uniform_policy(rules)(root_ppt(), [0])
    rng = np.random.default_rng(0)
    n = 100_000
    counts = np.bincount([sample_expansion(probs, rng)[1] for _ in range(n)], minlength=len(rules))
    p = 1 / len(rules)
    assert (np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p))).all()


def exact_success_probability(task, rules, limit):
    """Probability that one uniform draw yields a program matching the task, by full enumeration."""
    total = 0.0
    stack = [(root_ppt(task.ty), 1.0)]
    while stack:
        ppt, p = stack.pop()
        hs = holes(ppt)
        if not hs:
            total += p * program_matches(ppt, task)
            continue
        if node_count(ppt) + len(hs) > limit:
            continue
        for r in rules:
            stack.append((fill_hole(ppt, hs[0].id, r), p / len(rules)))
    return total


def test_random_success_rate_matches_enumeration(small_dataset):
    task = next(t for t in small_dataset.tasks["train"] if t.nodes == 2)
    rules, limit = small_dataset.rules, 3
    q = exact_success_probability(task, rules, limit)
    assert 0 < q < 1
    cfg = EvalConfig(samples=1, synth_node_limit=limit)
    n = 4000
    hits = 0
    for seed in range(n):
        progs = random_baseline(task, rules, cfg, np.random.default_rng(seed))
        hits += task_success(progs, task)
    assert abs(hits - n * q) <= 3 * np.sqrt(n * q * (1 - q))


def test_type_checked_random_stays_well_typed(small_dataset):
    from typed_synth.infer import type_checks

    task = small_dataset.tasks["train"][0]
    progs = random_baseline(task, small_dataset.rules, EvalConfig(samples=30), np.random.default_rng(1), type_checked=True)
    assert progs and all(type_checks(p, None, task.ty) for p in progs)


def test_discards_keep_their_slot(small_dataset):
    task = small_dataset.tasks["train"][0]
    rng = np.random.default_rng(0)
    progs = sample_programs(uniform_policy(small_dataset.rules), root_ppt(task.ty), small_dataset.rules, 50, 2, rng,
                            keep_discards=True)
    assert len(progs) == 50 and None in progs
    assert all(node_count(p) <= 2 for p in progs if p is not None)


def test_small_sample_report_is_a_prefix(small_dataset):
    tasks = small_dataset.tasks["test"]
    rep = evaluate_tasks(tasks, EvalConfig(samples=40), rules=small_dataset.rules, kind="random")
    sub = rep.sub_reports["@20"]
    assert sub.samples == 20
    for k, ok in sub.flags.items():
        assert ok <= rep.flags[k]
    assert sub.mean <= rep.mean


def test_accuracy_report_prefix_semantics(small_dataset):
    task = small_dataset.tasks["train"][0]
    # a correct program only at draw 25: found with 40 samples, not with 20
    progs = [None] * 24 + [task.program] + [None] * 15
    rep = accuracy_report([(task, progs)], 40)
    assert rep.mean == 1.0 and rep.sub_reports["@20"].mean == 0.0


def test_results_do_not_depend_on_workers(small_dataset, monkeypatch):
    tasks = small_dataset.tasks["train"] + small_dataset.tasks["test"]
    cfg = EvalConfig(samples=10, seed=4)
    model = Model(ModelConfig.for_variant("vanilla", small_dataset, H=4, M=4, layers=1), seed=0)
    one = evaluate_tasks(tasks, cfg, model, workers=1)
    monkeypatch.setenv("SYNTH_THREADS", "2")
    two = evaluate_tasks(tasks, cfg, model)
    assert one.to_json() == two.to_json()
    again = evaluate_tasks(list(reversed(tasks)), cfg, model, workers=1)
    assert again.flags == one.flags and again.records == one.records


def test_report_roundtrip(tmp_path, small_dataset):
    rep = evaluate_tasks(small_dataset.tasks["test"], EvalConfig(samples=25), rules=small_dataset.rules, kind="random")
    write_report(rep, tmp_path)
    import json

    back = EvalReport.from_json(json.loads((tmp_path / "report.json").read_text()))
    assert back.to_json() == rep.to_json()
    header = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert header == "task,nodes,success@25,success@20"


# accuracies are fractions of a task count
ACC = st.integers(0, 200).map(lambda k: k / 200)


@given(st.lists(ACC, min_size=2, max_size=6), st.lists(ACC, min_size=2, max_size=6))
def test_t_test_matches_textbook_formula(a, b):
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        assert t_test(a, b) == (1.0 if a[0] == b[0] else 0.0)
        return
    expected = float(pooled_t_pvalue(a, b))
    assert abs(t_test(a, b) - expected) <= 1e-9


def test_t_test_edge_cases():
    assert t_test([0.5, 0.5, 0.5], [0.5, 0.5]) == 1.0
    assert t_test([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        t_test([0.1], [0.2, 0.3])
