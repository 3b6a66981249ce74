from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from typed_synth.datagen import Dataset, GenConfig, build_char_maps, generate_dataset
from typed_synth.expr import parse_expr
from typed_synth.types import parse_type

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SMALL_OPS = ("just", "length", "zero", "nil", "cons", "fromEnum")

# lines printed by the acceptance suite, shown in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_dataset() -> Dataset:
    return generate_dataset(GenConfig(max_nodes=2, operators=SMALL_OPS, seed=1))


@pytest.fixture(scope="session")
def default_dataset() -> Dataset:
    return generate_dataset(GenConfig())


def fake_task(program: str, ty: str, pairs, in_ty: str = "()", out_ty: str = None):
    """Task-shaped object with hand-written io texts (no interpreter involved)."""
    ios = [SimpleNamespace(input_text=a, output=SimpleNamespace(text=b)) for a, b in pairs]
    return SimpleNamespace(
        program=parse_expr(program), ty=parse_type(ty), fixed_ios=lambda: ios,
        input_type_text=in_ty, output_type_text=out_ty or ty, text=program, type_text=ty, nodes=1,
    )


def sub_dataset(ds: Dataset, train, val=(), test=()) -> Dataset:
    """Dataset over the given tasks with character maps rebuilt from them only."""
    tasks = {"train": list(train), "val": list(val), "test": list(test)}
    cm = build_char_maps([t for v in tasks.values() for t in v], include_types=True, rules=ds.rules)
    return Dataset(list(ds.operators), ds.rules, tasks, cm, ds.gen_config, ds.monotypes)


def finite_difference(f, x: np.ndarray, idx, h: float = 1e-6) -> float:
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def tiny_model(variant_opts: dict, operators=("just", "zero"), rules=(("just", 1), ("zero", 0)), seed: int = 3):
    """float64 model with H=M=4 and T=8 over a hand-made character map."""
    from typed_synth.model import Model, ModelConfig

    cm = {c: i for i, c in enumerate(sorted(set("()Right0LeftXMaybe aInt[],")))}
    cfg = ModelConfig(
        operators=tuple(operators), charmap_io=cm, charmap_types=cm, T=8, H=4, M=4, layers=3,
        io_pairs=2, dtype="float64", rules=rules, **variant_opts,
    )
    return Model(cfg, seed=seed)


def model_gradient_error(model, task, per_param: int = 6, seed: int = 0) -> float:
    """Worst relative error between backprop and central differences of the task loss."""
    from typed_synth.train import task_loss

    grads = {}
    task_loss(model, task, grads)
    rng = np.random.default_rng(seed)
    loss = lambda: task_loss(model, task).loss
    worst = 0.0
    for name, v in model.params.items():
        g = grads.get(name, np.zeros_like(v))
        for _ in range(per_param):
            idx = tuple(int(rng.integers(s)) for s in v.shape)
            worst = max(worst, rel_err(finite_difference(loss, v, idx), g[idx]))
    return worst


def pytest_collection_modifyitems(config, items):
    if os.environ.get("TYPED_SYNTH_EXTENDED") == "1":
        return
    skip = pytest.mark.skip(reason="extended reproduction; set TYPED_SYNTH_EXTENDED=1")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)
