import csv
import json

import pytest

from conftest import SMALL_OPS
from typed_synth import cli
from typed_synth.train import Divergence

GEN = {"generate": {"max_nodes": 2, "operators": list(SMALL_OPS), "seed": 1}}
TINY = {"model": {"H": 4, "M": 4, "layers": 1}, "train": {"max_epochs": 5, "eval_samples": 20},
        "evaluate": {"samples": 30}}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    gen = write_json(d / "gen.json", GEN)
    tiny = write_json(d / "tiny.json", TINY)
    assert cli.main(["generate", "--config", gen, "--out", str(d / "ds")]) == 0
    assert cli.main(["train", "--config", tiny, "--dataset", str(d / "ds"), "--variant", "typed",
                     "--out", str(d / "typed")]) == 0
    return d


def test_generate_is_deterministic(work, tmp_path):
    assert cli.main(["generate", "--config", str(work / "gen.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "dataset.json").read_bytes() == (work / "ds" / "dataset.json").read_bytes()
    a = json.loads((tmp_path / "manifest.json").read_text())
    b = json.loads((work / "ds" / "manifest.json").read_text())
    assert a == b and a["dataset_sha256"] == cli.sha256_file(tmp_path / "dataset.json")


def test_train_outputs(work):
    out = work / "typed"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["variant"] == "typed"
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert [r[:2] for r in rows[1:]] == [["5", "train"], ["5", "val"]]
    ck = json.loads((out / "best" / "manifest.json").read_text())
    cfg = ck["config"]
    # typed encoders run at twice the width over T steps of both strings
    assert ck["arrays"]["enc.in.l0.fw.Wx"]["shape"] == [2 * (len(cfg["charmap_io"]) + 1), 4 * 2 * cfg["H"]]
    assert ck["arrays"]["types.rule.proj.W"]["shape"] == [2 * cfg["H"], cfg["M"]]


@pytest.mark.parametrize("variant", ["oracle", "random"])
def test_baselines_need_no_checkpoint(work, tmp_path, variant):
    rc = cli.main(["evaluate", "--config", str(work / "tiny.json"), "--dataset", str(work / "ds"),
                   "--variant", variant, "--out", str(tmp_path)])
    assert rc == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["samples"] == 30 and "@20" in rep["sub_reports"]
    if variant == "oracle":
        assert rep["mean"] == 1.0


def test_evaluate_model_and_compare(work, tmp_path):
    dirs = []
    for seed in (0, 1):
        d = tmp_path / f"typed{seed}"
        assert cli.main(["evaluate", "--config", str(work / "tiny.json"), "--dataset", str(work / "ds"),
                         "--checkpoint", str(work / "typed"), "--seed", str(seed), "--out", str(d)]) == 0
        dirs.append(str(d))
    r = tmp_path / "random"
    cli.main(["evaluate", "--dataset", str(work / "ds"), "--variant", "random", "--samples", "20", "--out", str(r)])
    assert cli.main(["compare", *dirs, str(r), "--out", str(tmp_path / "cmp")]) == 0
    rows = list(csv.reader(open(tmp_path / "cmp" / "pvalues.csv")))
    assert rows[0] == ["p-values", "random", "typed"]
    assert rows[2][2] == "1.000000"  # typed against itself
    assert rows[1][1] == "NA" and rows[1][2] == "NA"  # random has one seed
    summary = list(csv.reader(open(tmp_path / "cmp" / "summary.csv")))
    assert summary[0] == cli.summary_header()
    assert summary[0][:3] == ["experiment", "@20 mean", "@20 var"]
    random_row = next(r for r in summary if r[0] == "random")
    assert random_row[2] == "NA" and random_row[6] == "NA"  # one seed; no @100 runs


def test_variant_mismatch(work, tmp_path):
    rc = cli.main(["evaluate", "--dataset", str(work / "ds"), "--checkpoint", str(work / "typed"),
                   "--variant", "vanilla", "--out", str(tmp_path)])
    assert rc == cli.EXIT_USAGE


@pytest.mark.parametrize("argv", [
    ["train", "--dataset", "/nonexistent", "--out", "x"],
    ["evaluate", "--dataset", "/nonexistent", "--variant", "random", "--out", "x"],
    ["train", "--variant", "oracle", "--dataset", "/nonexistent", "--out", "x"],
    ["compare", "--out", "x"],
])
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == cli.EXIT_USAGE


@pytest.mark.parametrize("conf", [
    {"bogus": {}},
    {"generate": {"ratios": [0.5, 0.5, 0.5]}},
    {"generate": {"no_such_key": 1}},
])
def test_bad_generate_configs(conf, tmp_path):
    path = write_json(tmp_path / "c.json", conf)
    assert cli.main(["generate", "--config", path, "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE


def test_divergence_exit_code(work, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise Divergence("nan")

    monkeypatch.setattr(cli, "train", boom)
    rc = cli.main(["train", "--config", str(work / "tiny.json"), "--dataset", str(work / "ds"), "--out", str(tmp_path)])
    assert rc == cli.EXIT_DIVERGED


def test_config_prints_defaults(capsys):
    assert cli.main(["config"]) == 0
    conf = json.loads(capsys.readouterr().out)
    assert set(conf) == set(cli.CONFIG_SECTIONS)
    assert conf["model"]["H"] == 32
