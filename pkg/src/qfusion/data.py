"""BreastMNIST archive loading, normalization, and batching.

The archive is a ZIP of NPY v1.0 members (``{split}_images`` uint8 Nx28x28,
``{split}_labels`` uint8 Nx1), i.e. the MedMNIST ``.npz`` layout. Label
convention follows MedMNIST: 0 = malignant, 1 = normal/benign.
"""

from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .rng import permutation

SPLITS = ("train", "val", "test")
STANDARD_SIZES = {"train": 546, "val": 78, "test": 156}
CLASS_NAMES = ("malignant", "benign")


class ArchiveError(ValueError):
    pass


@dataclass
class SplitDataset:
    images: np.ndarray  # (N, 1, 28, 28) float64 in [-1, 1]
    labels: np.ndarray  # (N,) int64 in {0, 1}
    name: str

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.name}: {self.images.shape[0]} images vs {self.labels.shape[0]} labels")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def normalize(raw) -> np.ndarray:
    """Map uint8 pixels 0..255 onto [-1, 1]."""
    return np.asarray(raw, dtype=np.float64) / 127.5 - 1.0


def _read_npy(zf: zipfile.ZipFile, member: str) -> np.ndarray:
    names = set(zf.namelist())
    fname = member + ".npy" if member + ".npy" in names else member
    if fname not in names:
        raise ArchiveError(f"archive is missing member {member!r} (has: {sorted(names)})")
    fp = io.BytesIO(zf.read(fname))
    try:
        version = np.lib.format.read_magic(fp)
    except ValueError as exc:
        raise ArchiveError(f"{member}: not an NPY file ({exc})") from exc
    if version != (1, 0):
        raise ArchiveError(f"{member}: NPY version {version} unsupported, expected 1.0")
    shape, fortran, dtype = np.lib.format.read_array_header_1_0(fp)
    if dtype != np.uint8:
        raise ArchiveError(f"{member}: dtype {dtype}, expected uint8")
    count = int(np.prod(shape)) if shape else 1
    buf = fp.read(count)
    if len(buf) != count:
        raise ArchiveError(f"{member}: truncated payload ({len(buf)} of {count} bytes)")
    arr = np.frombuffer(buf, dtype=np.uint8)
    return arr.reshape(shape, order="F" if fortran else "C")


def load_archive(path) -> dict[str, SplitDataset]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data archive not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise ArchiveError(f"{path}: not a ZIP archive ({exc})") from exc
    out = {}
    with zf:
        for split in SPLITS:
            imgs = _read_npy(zf, f"{split}_images")
            labels = _read_npy(zf, f"{split}_labels")
            if imgs.ndim != 3 or imgs.shape[1:] != (28, 28):
                raise ArchiveError(f"{split}_images: shape {imgs.shape}, expected (N, 28, 28)")
            if labels.shape != (imgs.shape[0], 1):
                raise ArchiveError(f"{split}_labels: shape {labels.shape}, expected ({imgs.shape[0]}, 1)")
            if labels.size and labels.max() > 1:
                raise ArchiveError(f"{split}_labels: expected binary labels, found {np.unique(labels)}")
            out[split] = SplitDataset(normalize(imgs)[:, None], labels.reshape(-1).astype(np.int64), split)
    return out


def swap_labels(splits: dict[str, SplitDataset]) -> dict[str, SplitDataset]:
    """For archives that code benign as 0."""
    return {k: SplitDataset(v.images, 1 - v.labels, v.name) for k, v in splits.items()}


def batch_iter(split: SplitDataset, batch_size: int = 16, seed: int = 0, epoch: int = 0,
               shuffle: bool = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) batches; the train split is shuffled per (seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(split)
    if n == 0:
        raise ValueError(f"split {split.name!r} is empty")
    if shuffle is None:
        shuffle = split.name == "train"
    order = permutation(n, seed, epoch) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield split.images[idx], split.labels[idx]


def n_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def write_archive(path, splits: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    """Write raw uint8 ``(images, labels)`` per split in the MedMNIST layout."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for split, (imgs, labels) in splits.items():
            for suffix, arr in (("images", imgs), ("labels", labels)):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype=np.uint8), version=(1, 0))
                zf.writestr(f"{split}_{suffix}.npy", buf.getvalue())


def synth_archive(path, per_split: int = 2, seed: int = 0) -> None:
    """Tiny learnable stand-in: class 1 images are brighter in the centre."""
    rng = np.random.default_rng(seed)
    splits = {}
    for k, split in enumerate(SPLITS):
        labels = (np.arange(per_split) % 2).astype(np.uint8)
        imgs = rng.integers(0, 120, size=(per_split, 28, 28))
        imgs[labels == 1, 8:20, 8:20] += 120
        splits[split] = (imgs.astype(np.uint8), labels[:, None])
    write_archive(path, splits)
