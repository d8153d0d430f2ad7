"""Time one training epoch per model at the standard split sizes and project the full protocol.

Uses a synthetic archive of 546/78/156 images, so only the timing is meaningful.
"""

from __future__ import annotations

import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from qfusion.config import RunConfig
from qfusion.data import STANDARD_SIZES, load_archive, write_archive
from qfusion.models import build_model
from qfusion.train import fit


def standard_size_archive(path: Path, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    splits = {}
    for split, n in STANDARD_SIZES.items():
        labels = (rng.random(n) < 0.73).astype(np.uint8)
        imgs = rng.integers(0, 140, (n, 28, 28))
        imgs[labels == 1, 9:19, 9:19] += 100
        splits[split] = (imgs.astype(np.uint8), labels[:, None])
    write_archive(path, splits)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--max-epochs", type=int, default=80)
    ap.add_argument("--budget-hours", type=float, default=4.0)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "standard.npz"
        standard_size_archive(path)
        splits = load_archive(path)
    total = 0.0
    for kind in ("hybrid", "classical"):
        cfg = RunConfig(model=kind, seed=0, max_epochs=args.epochs, patience=args.epochs)
        t0 = time.perf_counter()
        fit(build_model(kind, 0), splits, cfg)
        per_epoch = (time.perf_counter() - t0) / args.epochs
        run = per_epoch * args.max_epochs
        total += run * args.seeds
        print(f"{kind}: {per_epoch:.1f} s/epoch -> {run / 60:.1f} min for {args.max_epochs} epochs")
    verdict = "within" if total <= args.budget_hours * 3600 else "over"
    print(f"projected worst case (no early stop, sequential): {total / 3600:.2f} h, "
          f"{verdict} the {args.budget_hours:g} h budget")


if __name__ == "__main__":
    main()
