"""Classification metrics, exact Wilcoxon signed-rank test, Cohen's d, run comparison."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

BENIGN, MALIGNANT = 1, 0
WILCOXON_MAX_N = 20


@dataclass
class ConfusionMatrix:
    TP: int = 0
    FP: int = 0
    TN: int = 0
    FN: int = 0
    positive_class: int = BENIGN

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.TN + self.FN

    def swapped(self) -> "ConfusionMatrix":
        """Same decisions viewed with the other class as positive."""
        return ConfusionMatrix(self.TN, self.FN, self.TP, self.FP, 1 - self.positive_class)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.positive_class != self.positive_class:
            other = other.swapped()
        return ConfusionMatrix(self.TP + other.TP, self.FP + other.FP, self.TN + other.TN,
                               self.FN + other.FN, self.positive_class)

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def compute_metrics(cm: ConfusionMatrix) -> dict[str, Optional[float]]:
    """Accuracy, recall, precision and F1. Undefined ratios come back as ``None``."""
    recall = _ratio(cm.TP, cm.TP + cm.FN)
    precision = _ratio(cm.TP, cm.TP + cm.FP)
    if recall is None or precision is None or recall + precision == 0:
        f1 = None
    else:
        f1 = 2 * recall * precision / (recall + precision)
    return {"accuracy": _ratio(cm.TP + cm.TN, cm.total), "recall": recall,
            "precision": precision, "f1": f1}


def confusion_from_predictions(labels, predictions, positive_class: int = BENIGN) -> ConfusionMatrix:
    y = np.asarray(labels).reshape(-1)
    p = np.asarray(predictions).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"{y.size} labels vs {p.size} predictions")
    pos_true, pos_pred = y == positive_class, p == positive_class
    return ConfusionMatrix(
        TP=int(np.sum(pos_true & pos_pred)),
        FP=int(np.sum(~pos_true & pos_pred)),
        TN=int(np.sum(~pos_true & ~pos_pred)),
        FN=int(np.sum(pos_true & ~pos_pred)),
        positive_class=positive_class,
    )


@dataclass
class Discrepancy:
    metric: str
    reported: float
    recomputed: Optional[float]

    @property
    def delta(self) -> Optional[float]:
        return None if self.recomputed is None else self.reported - self.recomputed


def audit_reported(cm: ConfusionMatrix, reported: dict[str, float], tol: float = 5e-4) -> list[Discrepancy]:
    """Recompute metrics from counts and list any reported value off by more than ``tol``."""
    got = compute_metrics(cm)
    out = []
    for k, v in reported.items():
        r = got.get(k)
        if r is None or abs(r - v) > tol:
            out.append(Discrepancy(k, v, r))
    return out


# ---------------------------------------------------------------- Wilcoxon

@dataclass
class WilcoxonResult:
    p: float
    w_plus: float
    n: int
    n_zero_dropped: int = 0
    degenerate: bool = False


def _wplus_distribution(doubled_ranks: Sequence[int]) -> np.ndarray:
    """counts[w] = number of sign assignments whose doubled W+ equals w."""
    counts = np.zeros(int(sum(doubled_ranks)) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        # numpy buffers overlapping operands, so this uses the pre-update counts
        counts[r:] += counts[:counts.size - r]
    return counts


def wilcoxon_one_sided(diffs) -> WilcoxonResult:
    """Exact one-sided signed-rank test of H1: differences tend to be positive.

    Zeros are dropped, ties share average ranks, and the null distribution of
    W+ covers all 2^n equally likely sign assignments.
    """
    d = np.asarray(diffs, dtype=float).reshape(-1)
    nz = d[d != 0]
    dropped = int(d.size - nz.size)
    if nz.size == 0:
        return WilcoxonResult(1.0, 0.0, 0, dropped, degenerate=True)
    if nz.size > WILCOXON_MAX_N:
        raise ValueError(f"exact test limited to n <= {WILCOXON_MAX_N}, got {nz.size}")
    # average ranks are multiples of 1/2, so doubling keeps the arithmetic exact
    doubled = np.rint(2 * rankdata(np.abs(nz))).astype(np.int64)
    w2 = int(doubled[nz > 0].sum())
    counts = _wplus_distribution(doubled)
    p = counts[w2:].sum() / 2.0 ** nz.size
    return WilcoxonResult(float(p), w2 / 2.0, int(nz.size), dropped)


# --------------------------------------------------------------- Cohen's d

class InfiniteEffect(ValueError):
    """Groups differ but have zero pooled variance."""


def cohens_d(group_a, group_b) -> float:
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("Cohen's d needs at least two values per group")
    diff = a.mean() - b.mean()
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if pooled <= 0:
        if diff == 0:
            return 0.0
        raise InfiniteEffect(f"mean difference {diff:g} with zero pooled variance")
    return float(diff / math.sqrt(pooled))


# ------------------------------------------------------------ run comparison

TABLE_COLUMNS = ("train_acc", "val_acc", "train_loss", "val_loss", "test_acc", "recall", "precision", "f1")


@dataclass
class ComparisonReport:
    seeds: list[int]
    acc_a: list[float]
    acc_b: list[float]
    p: float
    w_plus: float
    d: Optional[float]
    flags: list[str] = field(default_factory=list)
    table: dict[str, dict[str, Optional[float]]] = field(default_factory=dict)
    table_std: dict[str, dict[str, Optional[float]]] = field(default_factory=dict)
    aggregate: dict[str, dict] = field(default_factory=dict)
    labels: tuple[str, str] = ("a", "b")

    @property
    def reject(self) -> bool:
        return self.p < 0.05

    def verdict(self, alpha: float = 0.05) -> str:
        return "reject H0 at 0.05" if self.p < alpha else "fail to reject H0 at 0.05"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["labels"] = list(self.labels)
        out["verdict"] = self.verdict()
        return out


def load_runs(run_dir) -> dict[int, dict]:
    """Map seed -> result.json payload for every result under ``run_dir``."""
    run_dir = Path(run_dir)
    runs = {}
    for path in sorted(run_dir.glob("**/result.json")):
        res = json.loads(path.read_text())
        seed = int(res["seed"])
        if seed in runs:
            raise ValueError(f"{run_dir}: seed {seed} appears twice")
        runs[seed] = res
    if not runs:
        raise ValueError(f"{run_dir}: no result.json files found")
    return runs


def _cm(d: dict) -> ConfusionMatrix:
    return ConfusionMatrix(**{k: d[k] for k in ("TP", "FP", "TN", "FN", "positive_class")})


def _table_row(runs: list[dict]) -> tuple[dict, dict]:
    means, stds = {}, {}
    for col in TABLE_COLUMNS:
        vals = [r["table"][col] for r in runs if r["table"].get(col) is not None]
        means[col] = float(np.mean(vals)) if vals else None
        stds[col] = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return means, stds


def compare_runs(dir_a, dir_b, labels: tuple[str, str] = ("a", "b")) -> ComparisonReport:
    """Pair test accuracies by seed and test whether model A beats model B."""
    runs_a, runs_b = load_runs(dir_a), load_runs(dir_b)
    if set(runs_a) != set(runs_b):
        raise ValueError(f"seed sets differ: {sorted(runs_a)} vs {sorted(runs_b)}")
    seeds = sorted(runs_a)
    acc_a = [float(runs_a[s]["test"]["accuracy"]) for s in seeds]
    acc_b = [float(runs_b[s]["test"]["accuracy"]) for s in seeds]
    flags = []
    w = wilcoxon_one_sided(np.subtract(acc_a, acc_b))
    if w.degenerate:
        flags.append("wilcoxon: all paired differences are zero; p set to 1")
    elif w.n_zero_dropped:
        flags.append(f"wilcoxon: dropped {w.n_zero_dropped} zero differences")
    d: Optional[float] = None
    if len(seeds) >= 2:
        try:
            d = cohens_d(acc_a, acc_b)
        except InfiniteEffect as exc:
            flags.append(f"cohens_d: infinite effect ({exc})")
    else:
        flags.append("cohens_d: needs at least two runs per model")

    report = ComparisonReport(seeds, acc_a, acc_b, w.p, w.w_plus, d, flags, labels=labels)
    for label, runs in zip(labels, (runs_a, runs_b)):
        rows = [runs[s] for s in seeds]
        report.table[label], report.table_std[label] = _table_row(rows)
        agg = None
        for r in rows:
            cm = _cm(r["test"]["confusion"])
            agg = cm if agg is None else agg + cm
        report.aggregate[label] = {
            "benign_positive": {**agg.to_dict(), **compute_metrics(agg)},
            "malignant_positive": {**agg.swapped().to_dict(), **compute_metrics(agg.swapped())},
        }
        # table accuracy is a mean of run accuracies; counts-derived accuracy can differ
        pooled = compute_metrics(agg)["accuracy"]
        mean_acc = report.table[label]["test_acc"]
        if pooled is not None and mean_acc is not None and abs(pooled - mean_acc) > 5e-4:
            flags.append(f"{label}: mean test accuracy {mean_acc:.4f} differs from pooled-count accuracy {pooled:.4f}")
    return report


def format_report(report: ComparisonReport) -> str:
    a, b = report.labels
    lines = [f"{'model':<10}" + "".join(f"{c:>12}" for c in TABLE_COLUMNS)]
    for label in (a, b):
        row = report.table[label]
        lines.append(f"{label:<10}" + "".join(f"{'-' if row[c] is None else format(row[c], '.4f'):>12}"
                                               for c in TABLE_COLUMNS))
    lines.append(f"paired test accuracy ({a} - {b}) by seed {report.seeds}:")
    lines.append("  " + ", ".join(f"{x - y:+.4f}" for x, y in zip(report.acc_a, report.acc_b)))
    lines.append(f"mean {a} = {np.mean(report.acc_a):.4f}, mean {b} = {np.mean(report.acc_b):.4f}")
    lines.append(f"one-sided Wilcoxon signed-rank: W+ = {report.w_plus:g}, p = {report.p:.5f}")
    lines.append("Cohen's d = " + ("undefined" if report.d is None else f"{report.d:.4f}"))
    lines.append(f"verdict: {report.verdict()}")
    lines.extend(f"note: {f}" for f in report.flags)
    return "\n".join(lines)
