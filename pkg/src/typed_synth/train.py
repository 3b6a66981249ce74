"""Strong-supervision training: golden derivations, cross-entropy, Adam."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .expr import App, Expr, Hole, Var, holes, spine
from .model import Model
from .nn.layers import Params
from .operators import ExpansionRule, fill_hole, root_ppt
from .r3nn import normalise
from .types import Ty

log = logging.getLogger(__name__)

LOSS_EPS = 1e-12


class Underivable(ValueError):
    pass


class Divergence(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 1.0
    max_epochs: int = 1000
    eval_every: int = 5
    window: int = 2
    eval_samples: int = 100
    synth_node_limit: int = 6
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if self.window < 1 or self.eval_every < 1 or self.max_epochs < 0:
            raise ValueError("window and eval_every must be positive, max_epochs nonnegative")
        return self


@dataclass(frozen=True)
class GoldenStep:
    ppt: Expr
    hole: int  # hole id
    rule: int  # rule index

    def target(self, n_rules: int) -> np.ndarray:
        row = np.zeros(n_rules)
        row[self.rule] = 1.0
        return row


def golden_derivation(
    program: Expr,
    rules: Sequence[ExpansionRule],
    root_ty: Optional[Ty] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[GoldenStep]:
    """Expansions rebuilding ``program`` from a single root hole.

    Holes are filled leftmost first; with ``rng`` a random open hole is
    picked at every step instead.
    """
    index = {(r.name, r.applied): i for i, r in enumerate(rules)}
    ppt: Expr = root_ppt(root_ty)
    pending: Dict[int, Expr] = {0: program}
    steps: List[GoldenStep] = []
    while pending:
        open_holes = holes(ppt)
        h = open_holes[0] if rng is None else open_holes[int(rng.integers(len(open_holes)))]
        target = pending.pop(h.id)
        head, args = spine(target)
        if not isinstance(head, Var):
            raise Underivable("application head must be an operator")
        key = (head.name, len(args))
        if key not in index:
            raise Underivable(f"no rule for {head.name} applied to {len(args)} arguments")
        steps.append(GoldenStep(ppt, h.id, index[key]))
        before = {x.id for x in holes(ppt)}
        ppt = fill_hole(ppt, h.id, rules[index[key]])
        fresh = [x.id for x in holes(ppt) if x.id not in before]
        pending.update(zip(fresh, args))
    return steps


def step_loss(probs: np.ndarray, hole_row: int, rule: int) -> Tuple[float, bool]:
    """Cross-entropy of the golden expansion; flags probabilities clipped at ``LOSS_EPS``."""
    p = float(probs[hole_row, rule])
    return -math.log(max(p, LOSS_EPS)), p < LOSS_EPS


def _step_dz(probs: np.ndarray, hole_row: int, rule: int, policy: str) -> np.ndarray:
    dz = probs.copy()
    if policy == "first":
        dz[1:] = 0.0
    dz[hole_row, rule] -= 1.0
    return dz


@dataclass
class TaskLoss:
    loss: float
    steps: int
    clipped: int


def task_loss(
    model: Model,
    task,
    grads: Optional[Params] = None,
    rng: Optional[np.random.Generator] = None,
) -> TaskLoss:
    """Mean step loss under teacher forcing; accumulates gradients when ``grads`` is given.

    ``rng`` randomises the derivation's hole order (used by the any-hole policy).
    """
    policy = model.cfg.policy
    steps = golden_derivation(task.program, model.rules, task.ty, rng if policy == "any" else None)
    ctx = model.context(task)
    total, clipped = 0.0, 0
    k = len(steps)
    for st in steps:
        z, cache = model.scores(ctx, st.ppt)
        probs = normalise(z.astype(np.float64), policy)
        row = cache[0].tree.holes.index(st.hole)
        if policy == "first" and row != 0:
            raise Underivable("first-hole policy needs the leftmost hole")
        loss, was_clipped = step_loss(probs, row, st.rule)
        total += loss
        clipped += was_clipped
        if grads is not None:
            model.step_backward(ctx, cache, _step_dz(probs, row, st.rule, policy) / k, grads)
    if grads is not None:
        model.context_backward(ctx, grads)
    return TaskLoss(total / k, k, clipped)


# -- optimiser --------------------------------------------------------------

def clip_gradients(grads: Params, bound: float) -> None:
    for g in grads.values():
        np.clip(g, -bound, bound, out=g)


class Adam:
    """Bias-corrected Adam on a dict of arrays."""

    def __init__(self, params: Params, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)

    def state(self) -> Dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays: Dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for k in self.m:
            self.m[k] = arrays[f"m.{k}"].astype(self.m[k].dtype)
            self.v[k] = arrays[f"v.{k}"].astype(self.v[k].dtype)


# -- loop -------------------------------------------------------------------

METRIC_COLUMNS = ("epoch", "split", "loss", "accuracy@20", "accuracy@100", "seconds")


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    acc20: float
    acc100: float
    seconds: float

    def row(self) -> List:
        return [self.epoch, self.split, f"{self.loss:.6f}", f"{self.acc20:.6f}", f"{self.acc100:.6f}", f"{self.seconds:.3f}"]


def train_epoch(model: Model, tasks: Sequence, opt: Adam, cfg: TrainConfig, epoch: int) -> float:
    """One pass in seeded shuffled order with per-task updates; returns the mean loss."""
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(tasks))
    losses = []
    for i in order:
        grads: Params = {}
        res = task_loss(model, tasks[i], grads, rng)
        if not math.isfinite(res.loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
            raise Divergence(f"non-finite loss or gradient at epoch {epoch} on {tasks[i].text}")
        clip_gradients(grads, cfg.clip)
        opt.step(model.params, grads)
        losses.append(res.loss)
    return float(np.mean(losses)) if losses else 0.0


def mean_loss(model: Model, tasks: Sequence, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    return float(np.mean([task_loss(model, t, None, rng).loss for t in tasks])) if tasks else 0.0


def should_stop(val_losses: Sequence[float], window: int) -> bool:
    """Mean of the latest window of validation losses exceeds the window before it."""
    if len(val_losses) < 2 * window:
        return False
    recent = np.mean(val_losses[-window:])
    before = np.mean(val_losses[-2 * window:-window])
    return bool(recent > before)


def train(
    model: Model,
    dataset,
    cfg: TrainConfig,
    out_dir=None,
    evaluate: Optional[Callable] = None,
    start_epoch: int = 0,
    opt: Optional[Adam] = None,
) -> List[EpochRecord]:
    """Train until ``max_epochs`` or the validation loss rises; keeps best and last checkpoints.

    ``evaluate(model, tasks, samples, seed)`` returns (acc@20, acc@100);
    by default the synthesis harness is used.
    """
    cfg.validate()
    if evaluate is None:
        from .evaluate import quick_accuracy

        evaluate = quick_accuracy
    opt = opt or Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    train_tasks = dataset.tasks["train"]
    val_tasks = dataset.tasks["val"]
    out = Path(out_dir) if out_dir is not None else None
    records: List[EpochRecord] = []
    val_losses: List[float] = []
    best_acc = -1.0
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "a" if start_epoch else "w", newline="")
        writer = csv.writer(fh)
        if not start_epoch:
            writer.writerow(METRIC_COLUMNS)
    try:
        for epoch in range(start_epoch + 1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            tr_loss = train_epoch(model, train_tasks, opt, cfg, epoch)
            log.info("epoch %d train loss %.4f", epoch, tr_loss)
            if epoch % cfg.eval_every:
                if out is not None:
                    _save_state(model, opt, out / "last", epoch)
                continue
            for split, tasks in (("train", train_tasks), ("val", val_tasks)):
                loss = tr_loss if split == "train" else mean_loss(model, tasks, cfg.seed)
                a20, a100 = evaluate(model, tasks, cfg.eval_samples, cfg.seed + epoch) if tasks else (0.0, 0.0)
                rec = EpochRecord(epoch, split, loss, a20, a100, time.perf_counter() - t0)
                records.append(rec)
                if writer is not None:
                    writer.writerow(rec.row())
                    fh.flush()
            val = records[-1]
            val_losses.append(val.loss)
            acc = val.acc100 if cfg.eval_samples >= 100 else val.acc20
            if out is not None:
                if acc > best_acc:
                    _save_state(model, opt, out / "best", epoch)
                _save_state(model, opt, out / "last", epoch)
            best_acc = max(best_acc, acc)
            if should_stop(val_losses, cfg.window):
                log.info("validation loss increased; stopping at epoch %d", epoch)
                break
    finally:
        if fh is not None:
            fh.close()
    return records


def _save_state(model: Model, opt: Adam, directory: Path, epoch: int) -> None:
    model.save(directory, extra={"epoch": epoch, "adam_t": opt.t})
    state = opt.state()
    np.savez(directory / "adam.npz", **{k: np.asarray(v) for k, v in state.items()})


def restore_state(directory, cfg: TrainConfig) -> Tuple[Model, Adam, int]:
    directory = Path(directory)
    model = Model.load(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    with np.load(directory / "adam.npz") as z:
        opt.load_state({k: z[k] for k in z.files}, manifest.get("adam_t", 0))
    return model, opt, manifest.get("epoch", 0)
