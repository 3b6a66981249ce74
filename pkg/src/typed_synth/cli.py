"""Command line entry point: ``typed-synth {generate,train,evaluate,compare}``.

Every subcommand writes a ``manifest.json`` next to its outputs recording
the configuration, seeds and content digests needed to reproduce them.
Wall-clock timestamps go to a separate ``timestamps.json`` so manifests
stay byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .datagen import Dataset, EmptyDataset, GenConfig, generate_dataset
from .evaluate import EvalConfig, EvalReport, evaluate_tasks, t_test, write_report
from .model import VARIANTS, Model, ModelConfig
from .train import Divergence, TrainConfig, restore_state, train

log = logging.getLogger("typed_synth")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
BASELINES = ("random", "oracle")
CONFIG_SECTIONS = ("generate", "model", "train", "evaluate")
MODEL_KEYS = ("H", "M", "layers", "dtype")


class CliError(Exception):
    """Bad input or configuration; reported with exit code 2."""


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int]
    dataset_sha256: Optional[str] = None
    checkpoint_sha256: Optional[str] = None
    outputs: Dict[str, str] = field(default_factory=dict)  # file name -> sha256
    version: str = __version__

    def write(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "manifest.json").write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")

    @classmethod
    def read(cls, directory: Path) -> "RunManifest":
        d = json.loads((Path(directory) / "manifest.json").read_text())
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_timestamps(directory: Path, started: float) -> None:
    stamps = {"started": started, "finished": time.time()}
    (directory / "timestamps.json").write_text(json.dumps(stamps, indent=1) + "\n")


# -- config -----------------------------------------------------------------

def load_config(path: Optional[str]) -> Dict[str, Dict[str, Any]]:
    """Read a sectioned JSON config; missing sections are empty."""
    if path is None:
        return {s: {} for s in CONFIG_SECTIONS}
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise CliError("config must be a JSON object")
    unknown = set(raw) - set(CONFIG_SECTIONS)
    if unknown:
        raise CliError(f"unknown config sections {sorted(unknown)}; expected {list(CONFIG_SECTIONS)}")
    return {s: dict(raw.get(s, {})) for s in CONFIG_SECTIONS}


def _build(cls, values: Dict[str, Any], allowed: Optional[Sequence[str]] = None):
    names = set(allowed) if allowed is not None else {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise CliError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**values).validate()
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def default_config() -> Dict[str, Dict[str, Any]]:
    """Every tunable with its default, in the sectioned file layout."""
    return {
        "generate": GenConfig().to_dict(),
        "model": {"H": 32, "M": 32, "layers": 3, "dtype": "float32"},
        "train": asdict(TrainConfig()),
        "evaluate": {"samples": 100, "synth_node_limit": 6, "split": "test", "type_checked": False},
    }


# -- datasets and checkpoints -----------------------------------------------

def dataset_path(arg: Optional[str]) -> Path:
    if arg is None:
        raise CliError("--dataset is required")
    p = Path(arg)
    if p.is_dir():
        p = p / "dataset.json"
    if not p.is_file():
        raise CliError(f"dataset not found: {arg}")
    return p


def load_dataset(arg: Optional[str]) -> Tuple[Dataset, str]:
    p = dataset_path(arg)
    try:
        return Dataset.load(p), sha256_file(p)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed dataset {p}: {exc}") from exc


def checkpoint_dir(arg: Optional[str], prefer: str = "best") -> Path:
    """Accept a checkpoint directory or a training output holding best/ and last/."""
    if arg is None:
        raise CliError("--checkpoint is required for model variants")
    p = Path(arg)
    if (p / prefer / "manifest.json").is_file():
        p = p / prefer
    if not (p / "manifest.json").is_file():
        raise CliError(f"checkpoint not found: {arg}")
    return p


def check_compatible(model: Model, dataset: Dataset) -> None:
    """Raise unless the checkpoint was built for this dataset's grammar and alphabet."""
    cfg = model.cfg
    if list(cfg.operators) != list(dataset.operators):
        raise CliError(f"checkpoint operators {list(cfg.operators)} differ from dataset operators {dataset.operators}")
    expected = ModelConfig.for_variant(cfg.variant, dataset)
    if cfg.charmap_io != expected.charmap_io or cfg.charmap_types != expected.charmap_types:
        raise CliError("checkpoint character maps do not match the dataset")
    if cfg.T != expected.T:
        raise CliError(f"checkpoint length T={cfg.T} does not match the dataset ({expected.T})")
    shapes = Model(cfg, seed=0).shapes()
    if shapes != model.shapes():
        raise CliError("checkpoint array shapes do not match its configuration")


# -- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    started = time.time()
    conf = load_config(args.config)["generate"]
    if args.seed is not None:
        conf["seed"] = args.seed
    gen = _build(GenConfig, conf)
    out = Path(args.out)
    try:
        ds = generate_dataset(gen)
    except EmptyDataset as exc:
        raise CliError(str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    ds.save(out / "dataset.json")
    digest = sha256_file(out / "dataset.json")
    RunManifest(
        "generate", {"generate": gen.to_dict()}, {"seed": gen.seed},
        dataset_sha256=digest, outputs={"dataset.json": digest},
    ).write(out)
    _write_timestamps(out, started)
    sizes = {k: len(v) for k, v in ds.tasks.items()}
    print(f"wrote {out / 'dataset.json'} ({sizes})")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    conf = load_config(args.config)
    variant = args.variant or "vanilla"
    if variant not in VARIANTS:
        raise CliError(f"cannot train variant {variant!r}; choose from {sorted(VARIANTS)}")
    ds, digest = load_dataset(args.dataset)
    tconf = dict(conf["train"])
    if args.seed is not None:
        tconf["seed"] = args.seed
    if args.samples is not None:
        tconf["eval_samples"] = args.samples
    tcfg = _build(TrainConfig, tconf)
    unknown = set(conf["model"]) - set(MODEL_KEYS)
    if unknown:
        raise CliError(f"unknown model keys: {sorted(unknown)}")
    out = Path(args.out)
    start_epoch, opt = 0, None
    if args.checkpoint is not None:
        model, opt, start_epoch = restore_state(checkpoint_dir(args.checkpoint, prefer="last"), tcfg)
        if model.cfg.variant != variant:
            raise CliError(f"checkpoint is a {model.cfg.variant!r} model, not {variant!r}")
        check_compatible(model, ds)
    else:
        mcfg = ModelConfig.for_variant(variant, ds, **conf["model"])
        model = Model(mcfg, seed=tcfg.seed)
    try:
        records = train(model, ds, tcfg, out, start_epoch=start_epoch, opt=opt)
    except Divergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    outputs = {"metrics.csv": sha256_file(out / "metrics.csv")}
    for sub in ("best", "last"):
        if (out / sub / "manifest.json").is_file():
            outputs[f"{sub}/manifest.json"] = sha256_file(out / sub / "manifest.json")
    ckpt = out / "best" if (out / "best" / "manifest.json").is_file() else out / "last"
    ck_hash = json.loads((ckpt / "manifest.json").read_text())["sha256"] if (ckpt / "manifest.json").is_file() else None
    RunManifest(
        "train", {"model": model.cfg.to_json(), "train": asdict(tcfg), "variant": variant},
        {"seed": tcfg.seed}, dataset_sha256=digest, checkpoint_sha256=ck_hash, outputs=outputs,
    ).write(out)
    _write_timestamps(out, started)
    if records:
        last = records[-1]
        print(f"trained {variant} to epoch {last.epoch}; val loss {last.loss:.4f} acc@{tcfg.eval_samples} {last.acc100:.3f}")
    else:
        print(f"trained {variant}; no evaluation epochs reached")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.time()
    conf = dict(load_config(args.config)["evaluate"])
    split = conf.pop("split", "test")
    type_checked = bool(conf.pop("type_checked", False))
    if args.samples is not None:
        conf["samples"] = args.samples
    if args.seed is not None:
        conf["seed"] = args.seed
    ecfg = _build(EvalConfig, conf)
    ds, digest = load_dataset(args.dataset)
    if split not in ds.tasks:
        raise CliError(f"unknown split {split!r}")
    variant = args.variant
    ck_hash = None
    if variant in BASELINES:
        report = evaluate_tasks(ds.tasks[split], ecfg, None, ds.rules, kind=variant, type_checked=type_checked)
    else:
        ck = checkpoint_dir(args.checkpoint)
        try:
            model = Model.load(ck)
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise CliError(f"unreadable checkpoint {ck}: {exc}") from exc
        if variant is not None and variant != model.cfg.variant:
            raise CliError(f"checkpoint is a {model.cfg.variant!r} model, not {variant!r}")
        check_compatible(model, ds)
        variant = model.cfg.variant
        ck_hash = json.loads((ck / "manifest.json").read_text())["sha256"]
        report = evaluate_tasks(ds.tasks[split], ecfg, model, kind="model")
    out = Path(args.out)
    write_report(report, out)
    RunManifest(
        "evaluate",
        {"evaluate": asdict(ecfg), "split": split, "type_checked": type_checked, "variant": variant},
        {"seed": ecfg.seed}, dataset_sha256=digest, checkpoint_sha256=ck_hash,
        outputs={n: sha256_file(out / n) for n in ("report.json", "report.csv")},
    ).write(out)
    _write_timestamps(out, started)
    line = f"{variant}: accuracy@{report.samples} {report.mean:.3f}"
    for k, sub in report.sub_reports.items():
        line += f", accuracy{k} {sub.mean:.3f}"
    print(line)
    return EXIT_OK


# -- compare ----------------------------------------------------------------

SUMMARY_NODES = (1, 2, 3)


def summary_header() -> List[str]:
    cols = ["experiment"]
    for n in (20, 100):
        cols += [f"@{n} mean", f"@{n} var"] + [f"@{n} acc mean @ {k} nodes" for k in SUMMARY_NODES]
    return cols


def _report_at(rep: EvalReport, samples: int) -> Optional[EvalReport]:
    if rep.samples == samples:
        return rep
    return rep.sub_reports.get(f"@{samples}")


def summary_rows(groups: Dict[str, List[EvalReport]]) -> List[List[str]]:
    """One row per variant: seed mean and variance of accuracy plus per-node means."""
    rows = []
    for name, reps in groups.items():
        row = [name]
        for n in (20, 100):
            at = [r for r in (_report_at(x, n) for x in reps) if r is not None]
            if not at:
                row += ["NA"] * (2 + len(SUMMARY_NODES))
                continue
            means = np.array([r.mean for r in at])
            var = f"{means.var(ddof=1):.6f}" if len(means) > 1 else "NA"
            row += [f"{means.mean():.6f}", var]
            for k in SUMMARY_NODES:
                vals = [r.by_nodes()[k] for r in at if k in r.by_nodes()]
                row.append(f"{np.mean(vals):.6f}" if vals else "NA")
        rows.append(row)
    return rows


def pvalue_matrix(groups: Dict[str, List[EvalReport]], samples: int) -> List[List[str]]:
    names = list(groups)
    acc = {k: [r.mean for r in (_report_at(x, samples) for x in v) if r is not None] for k, v in groups.items()}
    rows = [["p-values"] + names]
    for a in names:
        row = [a]
        for b in names:
            if len(acc[a]) < 2 or len(acc[b]) < 2:
                row.append("NA")
            else:
                row.append(f"{t_test(acc[a], acc[b]):.6f}")
        rows.append(row)
    return rows


def load_report_groups(dirs: Sequence[str]) -> Dict[str, List[EvalReport]]:
    """Group evaluation directories by the variant recorded in their manifests."""
    groups: Dict[str, List[EvalReport]] = {}
    for d in dirs:
        p = Path(d)
        try:
            manifest = RunManifest.read(p)
            rep = EvalReport.from_json(json.loads((p / "report.json").read_text()))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise CliError(f"not an evaluation directory: {d} ({exc})") from exc
        groups.setdefault(manifest.config.get("variant") or "unknown", []).append(rep)
    return dict(sorted(groups.items()))


def cmd_compare(args) -> int:
    if not args.reports:
        raise CliError("compare needs at least one evaluation directory")
    groups = load_report_groups(args.reports)
    samples = args.samples or 20
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pvalues.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(pvalue_matrix(groups, samples))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(summary_header())
        w.writerows(summary_rows(groups))
    RunManifest(
        "compare", {"reports": list(args.reports), "samples": samples}, {},
        outputs={n: sha256_file(out / n) for n in ("pvalues.csv", "summary.csv")},
    ).write(out)
    print((out / "summary.csv").read_text(), end="")
    print((out / "pvalues.csv").read_text(), end="")
    return EXIT_OK


def cmd_config(args) -> int:
    print(json.dumps(default_config(), indent=1, sort_keys=True))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="typed-synth", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="sectioned JSON config (see `typed-synth config`)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="build a dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    variants = sorted(VARIANTS) + list(BASELINES)
    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    p.add_argument("--dataset", help="dataset directory or JSON file")
    p.add_argument("--variant", choices=variants, default="vanilla")
    p.add_argument("--samples", type=int, choices=(20, 100), help="samples per task for validation accuracy")
    p.add_argument("--checkpoint", help="resume from this checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="sample programs and score a split")
    common(p)
    p.add_argument("--dataset", help="dataset directory or JSON file")
    p.add_argument("--checkpoint", help="checkpoint directory (not needed for random/oracle)")
    p.add_argument("--variant", choices=variants, help="model variant or baseline")
    p.add_argument("--samples", type=int, choices=(20, 100))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="p-value matrix and summary table over evaluation runs")
    p.add_argument("reports", nargs="*", help="evaluation output directories")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, choices=(20, 100), help="sample budget used for the p-values (default 20)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("config", help="print the default configuration")
    p.set_defaults(func=cmd_config)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
