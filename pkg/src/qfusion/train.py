"""Training protocol: AdamW, one-cycle cosine schedule, clipping, early stopping."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import SplitDataset, batch_iter, n_batches
from .models import build_model, param_count, save_checkpoint
from .nn import Module
from .rng import numpy_rng
from .stats import compute_metrics, confusion_from_predictions
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


class TrainingError(RuntimeError):
    pass


# ----------------------------------------------------------------- AdamW

@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def adamw_step(params: Sequence[Tensor], state: AdamWState, lr: float) -> None:
    """One decoupled-weight-decay Adam update, in place, using each tensor's ``.grad``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, p in enumerate(params):
        key = str(i)
        g = p.grad
        m = state.m.setdefault(key, np.zeros_like(p.data))
        v = state.v.setdefault(key, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= lr * update + lr * state.weight_decay * p.data


# -------------------------------------------------------------- schedule

@dataclass(frozen=True)
class OneCycleSchedule:
    max_lr: float
    total_steps: int
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def final_lr(self) -> float:
        return self.max_lr / self.final_div_factor

    @property
    def peak_step(self) -> int:
        return max(1, int(round(self.pct_start * self.total_steps)) - 1)


def _cos_anneal(start: float, end: float, frac: float) -> float:
    if frac <= 0.0:
        return start
    if frac >= 1.0:
        return end
    return end + (start - end) * (1.0 + math.cos(math.pi * frac)) / 2.0


def onecycle_lr(step: int, sched: OneCycleSchedule) -> float:
    """Cosine warm-up to ``max_lr`` at ``peak_step``, then cosine decay to ``final_lr`` at the last step."""
    if not 0 <= step < sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps})")
    peak = sched.peak_step
    last = sched.total_steps - 1
    if step == peak:
        return sched.max_lr
    if step < peak:
        return _cos_anneal(sched.initial_lr, sched.max_lr, step / peak)
    return _cos_anneal(sched.max_lr, sched.final_lr, (step - peak) / max(1, last - peak))


# -------------------------------------------------------------- clipping

def clip_grad_norm(params: Sequence[Tensor], max_norm: float = 1.0) -> float:
    """Scale all grads in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


# --------------------------------------------------------- early stopping

@dataclass
class EarlyStopper:
    patience: int = 25
    best: float = -math.inf
    best_epoch: int = -1
    since_improvement: int = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record an epoch's metric; returns True when it is a new best (strictly greater)."""
        if value > self.best:
            self.best, self.best_epoch, self.since_improvement = value, epoch, 0
            return True
        self.since_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_improvement >= self.patience


# ------------------------------------------------------------ evaluation

def predict_logits(model: Module, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = [model(images[i:i + batch_size], train=False).data for i in range(0, len(images), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate(model: Module, split: SplitDataset, positive_class: int = 1,
             smoothing: float = 0.1, batch_size: int = 64) -> dict:
    logits = predict_logits(model, split.images, batch_size)
    logp = T.log_softmax(logits)
    target = T.smoothed_targets(split.labels, logits.shape[1], smoothing)
    preds = logits.argmax(axis=1)
    cm = confusion_from_predictions(split.labels, preds, positive_class)
    return {
        "n": len(split),
        "loss": float(-(target * logp).sum() / len(split)),
        "predictions": preds,
        "confusion": cm,
        **compute_metrics(cm),
    }


# ------------------------------------------------------------------- fit

@dataclass
class RunResult:
    seed: int
    model: str
    config: dict
    curves: list[dict]
    best_epoch: int
    best_val_acc: float
    stopped_epoch: int
    test: dict
    val: dict
    table: dict
    param_counts: dict
    wall_seconds: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def curves_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[c])) for c in CURVE_COLUMNS[1:]])
    return buf.getvalue()


def _metrics_json(ev: dict) -> dict:
    return {
        "n": ev["n"], "loss": ev["loss"], "accuracy": ev["accuracy"], "recall": ev["recall"],
        "precision": ev["precision"], "f1": ev["f1"], "confusion": ev["confusion"].to_dict(),
    }


def fit(model: Module, splits: dict[str, SplitDataset], config: RunConfig,
        out_dir=None, progress: bool = False) -> RunResult:
    """Train with the full protocol, restore the best-validation checkpoint, evaluate on test."""
    t0 = time.perf_counter()
    seed = config.seed
    train, val, test = splits["train"], splits["val"], splits["test"]
    params = model.parameters()
    steps_per_epoch = n_batches(len(train), config.batch_size)
    sched = OneCycleSchedule(config.max_lr, config.max_epochs * steps_per_epoch, config.pct_start,
                             config.div_factor, config.final_div_factor)
    opt = AdamWState(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps,
                     weight_decay=config.weight_decay)
    stopper = EarlyStopper(config.patience)
    curves: list[dict] = []
    best_state = model.state_dict()
    best_row: Optional[dict] = None
    step = 0
    epoch = 0

    for epoch in range(config.max_epochs):
        rng = numpy_rng(seed, "dropout", epoch)
        loss_sum, correct, seen = 0.0, 0, 0
        lr = config.lr
        for b, (x, y) in enumerate(batch_iter(train, config.batch_size, seed, epoch)):
            model.zero_grad()
            with Tape() as tape:
                logits = model(x, train=True, rng=rng)
                loss = T.cross_entropy_smoothed(logits, y, config.label_smoothing)
            lval = float(loss.data)
            if not math.isfinite(lval):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            tape.backward(loss)
            clip_grad_norm(params, config.clip_norm)
            lr = onecycle_lr(step, sched)
            adamw_step(params, opt, lr)
            step += 1
            loss_sum += lval * len(y)
            correct += int(np.sum(logits.data.argmax(axis=1) == y))
            seen += len(y)

        ev = evaluate(model, val, config.positive_id, config.label_smoothing)
        row = {"epoch": epoch + 1, "train_loss": loss_sum / seen, "train_acc": correct / seen,
               "val_loss": ev["loss"], "val_acc": ev["accuracy"], "lr": lr}
        curves.append(row)
        if stopper.update(ev["accuracy"], epoch + 1):
            best_state = copy.deepcopy(model.state_dict())
            best_row = row
        if progress:
            log.info("%s seed=%d epoch %d: train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f",
                     model.kind, seed, epoch + 1, row["train_loss"], row["train_acc"],
                     row["val_loss"], row["val_acc"])
        if stopper.should_stop:
            break

    model.load_state_dict(best_state)
    test_ev = evaluate(model, test, config.positive_id, config.label_smoothing)
    val_ev = evaluate(model, val, config.positive_id, config.label_smoothing)
    table = {
        "train_acc": best_row["train_acc"], "val_acc": best_row["val_acc"],
        "train_loss": best_row["train_loss"], "val_loss": best_row["val_loss"],
        "test_acc": test_ev["accuracy"], "recall": test_ev["recall"],
        "precision": test_ev["precision"], "f1": test_ev["f1"],
    }
    result = RunResult(
        seed=seed, model=model.kind, config=config.to_dict(), curves=curves,
        best_epoch=stopper.best_epoch, best_val_acc=stopper.best, stopped_epoch=len(curves),
        test=_metrics_json(test_ev), val=_metrics_json(val_ev), table=table,
        param_counts=param_count(model), wall_seconds=time.perf_counter() - t0,
    )
    if out_dir is not None:
        write_run(out_dir, result, model)
    return result


def write_run(out_dir, result: RunResult, model: Module) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curves.csv").write_text(curves_csv(result.curves))
    (out / "result.json").write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n")
    save_checkpoint(out / "model.ckpt", model)
    (out / "confusion.csv").write_text(confusion_csv(result.test["confusion"]))


def confusion_csv(cm: dict) -> str:
    """2x2 table, rows = true class, columns = predicted class (malignant, benign)."""
    pos = cm["positive_class"]
    cell = {(pos, pos): cm["TP"], (pos, 1 - pos): cm["FN"], (1 - pos, 1 - pos): cm["TN"], (1 - pos, pos): cm["FP"]}
    names = ("malignant", "benign")
    lines = ["true\\pred," + ",".join(names)]
    for t in (0, 1):
        lines.append(names[t] + "," + ",".join(str(cell[(t, p)]) for p in (0, 1)))
    return "\n".join(lines) + "\n"


def train_run(config: RunConfig, splits: dict[str, SplitDataset], out_dir=None, progress: bool = False) -> RunResult:
    model = build_model(config.model, config.seed)
    return fit(model, splits, config, out_dir=out_dir, progress=progress)
