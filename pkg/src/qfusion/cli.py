"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``QFUSION_DATA`` supplies the default data archive path.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import quantum as qs
from .config import ConfigError, dump_config, load_config
from .data import ArchiveError, load_archive, swap_labels, synth_archive
from .models import CheckpointError, load_checkpoint, read_checkpoint
from .stats import compare_runs, compute_metrics, format_report
from .train import confusion_csv, evaluate, train_run

log = logging.getLogger("qfusion")

DATA_ENV = "QFUSION_DATA"


class UsageError(Exception):
    pass


def _data_path(arg) -> Path:
    path = arg or os.environ.get(DATA_ENV)
    if not path:
        raise UsageError(f"no data archive given (use --data or set {DATA_ENV})")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"data archive not found: {p}")
    return p


def _load_splits(path: Path, swap: bool):
    try:
        splits = load_archive(path)
    except ArchiveError as exc:
        raise UsageError(str(exc)) from None
    return swap_labels(splits) if swap else splits


def _overrides(args) -> dict:
    keys = ("model", "seed", "lr", "max_lr", "batch_size", "max_epochs", "patience",
            "clip_norm", "label_smoothing", "weight_decay", "positive_class", "swap_labels")
    return {k: getattr(args, k, None) for k in keys}


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    data = _data_path(args.data)
    cfg = load_config(args.config, **_overrides(args), data=str(data), out=args.out)
    splits = _load_splits(data, cfg.swap_labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    res = train_run(cfg, splits, out_dir=out, progress=True)
    t = res.test
    print(f"{cfg.model} seed={cfg.seed}: best epoch {res.best_epoch} (val acc {res.best_val_acc:.4f}), "
          f"test acc {t['accuracy']:.4f}, recall {t['recall']}, precision {t['precision']}, f1 {t['f1']}")
    print(f"wrote {out / 'curves.csv'}, {out / 'result.json'}, {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    data = _data_path(args.data)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    splits = _load_splits(data, args.swap_labels)
    split = splits[args.split]
    positive = 1 if args.positive_class == "benign" else 0
    ev = evaluate(model, split, positive)
    cm = ev["confusion"]
    payload = {
        "checkpoint": str(ckpt), "model": model.kind, "split": args.split, "n": ev["n"], "loss": ev["loss"],
        "positive_class": args.positive_class, "confusion": cm.to_dict(), **compute_metrics(cm),
        "malignant_positive" if positive == 1 else "benign_positive": compute_metrics(cm.swapped()),
    }
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_{args.split}.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / f"confusion_{args.split}.csv").write_text(confusion_csv(cm.to_dict()))
    print(f"{model.kind} on {args.split} ({ev['n']} samples, positive={args.positive_class}):")
    for k in ("accuracy", "recall", "precision", "f1"):
        v = payload[k]
        print(f"  {k:<9} {'undefined' if v is None else format(v, '.4f')}")
    print(f"  TP={cm.TP} FP={cm.FP} TN={cm.TN} FN={cm.FN}")
    return 0


def cmd_compare(args) -> int:
    try:
        report = compare_runs(args.runs_a, args.runs_b, labels=(args.label_a, args.label_b))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(format_report(report))
    print(f"wrote {out}")
    return 0


def _circuit_params(spec: qs.CircuitSpec, name: str, source: str) -> np.ndarray:
    if source == "zeros":
        return np.zeros(spec.n_params)
    path = Path(source)
    if not path.exists():
        raise UsageError(f"params file not found: {path}")
    try:
        _, _, state = read_checkpoint(path)
        key = f"{name}.theta"
        if key not in state:
            raise UsageError(f"checkpoint {path} has no {name} circuit (classical model?)")
        return state[key]
    except CheckpointError:
        try:
            vals = np.array(path.read_text().split(), dtype=float)
        except ValueError as exc:
            raise UsageError(f"{path}: not a checkpoint or number list ({exc})") from None
        if vals.size != spec.n_params:
            raise UsageError(f"{path}: expected {spec.n_params} parameters, found {vals.size}") from None
        return vals


def cmd_circuit_dump(args) -> int:
    spec = qs.amplitude_circuit() if args.circuit == "amplitude" else qs.angle_circuit()
    params = _circuit_params(spec, args.circuit, args.params)
    sys.stdout.write(qs.dump_circuit(spec, params))
    if args.unitary:
        u = qs.circuit_unitary(spec, params)
        sys.stdout.write(f"unitary {u.shape[0]}\n")
        for row in u:
            sys.stdout.write(" ".join(f"{z.real:.12g}{z.imag:+.12g}j" for z in row) + "\n")
    return 0


def cmd_data_synth(args) -> int:
    synth_archive(args.out, per_split=args.per_split, seed=args.seed)
    print(f"wrote synthetic archive {args.out} ({args.per_split} images per split)")
    return 0


def cmd_run_experiment(args) -> int:
    data = _data_path(args.data)
    base = load_config(args.config, **_overrides(args), data=str(data))
    splits = _load_splits(data, base.swap_labels)
    out = Path(args.out)
    jobs = [(kind, seed) for seed in args.seeds for kind in ("hybrid", "classical")]
    t0 = time.perf_counter()

    def run(job):
        kind, seed = job
        cfg = base.replace(model=kind, seed=seed, out=str(out / kind / f"seed_{seed}"))
        res = train_run(cfg, splits, out_dir=cfg.out, progress=args.verbose)
        print(f"done {kind} seed={seed}: test acc {res.test['accuracy']:.4f} "
              f"(best epoch {res.best_epoch}, {res.wall_seconds:.0f}s)", flush=True)
        return res

    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)
    wall = time.perf_counter() - t0
    report = compare_runs(out / "hybrid", out / "classical", labels=("hybrid", "classical"))
    payload = {**report.to_dict(), "wall_seconds": wall, "workers": args.workers}
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(format_report(report))
    print(f"total wall time {wall / 3600:.2f} h")
    return 0


# ------------------------------------------------------------------ parser

def _add_hparams(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-lr", dest="max_lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--label-smoothing", dest="label_smoothing", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--positive-class", dest="positive_class", choices=("benign", "malignant"))
    p.add_argument("--swap-labels", dest="swap_labels", action="store_true", default=None,
                   help="archive codes benign as 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model for one seed")
    p.add_argument("--model", choices=("hybrid", "classical"))
    p.add_argument("--seed", type=int)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    _add_hparams(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", choices=("test", "val", "train"), default="test")
    p.add_argument("--positive-class", dest="positive_class", choices=("benign", "malignant"), default="benign")
    p.add_argument("--swap-labels", dest="swap_labels", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="paired statistics over two run sets")
    p.add_argument("--runs-a", dest="runs_a", required=True)
    p.add_argument("--runs-b", dest="runs_b", required=True)
    p.add_argument("--label-a", dest="label_a", default="a")
    p.add_argument("--label-b", dest="label_b", default="b")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("circuit", help="circuit inspection")
    csub = p.add_subparsers(dest="circuit_command", required=True)
    d = csub.add_parser("dump", help="print a circuit in the text gate-list format")
    d.add_argument("--circuit", choices=("amplitude", "angle"), required=True)
    d.add_argument("--params", default="zeros", help="'zeros', a checkpoint, or a whitespace-separated number file")
    d.add_argument("--unitary", action="store_true", help="also print the dense variational unitary")
    d.set_defaults(func=cmd_circuit_dump)

    p = sub.add_parser("data", help="data utilities")
    dsub = p.add_subparsers(dest="data_command", required=True)
    s = dsub.add_parser("synth", help="write a tiny synthetic archive")
    s.add_argument("--out", required=True)
    s.add_argument("--per-split", dest="per_split", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_data_synth)

    p = sub.add_parser("run-experiment", help="5 seeds x 2 models, then compare")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--workers", type=int, default=1)
    _add_hparams(p)
    p.set_defaults(func=cmd_run_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ArchiveError, CheckpointError) as exc:
        print(f"qfusion: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface any runtime failure as exit 1
        print(f"qfusion: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
