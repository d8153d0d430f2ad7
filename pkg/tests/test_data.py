import io
import zipfile
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfusion import data as D
from qfusion.rng import Xoshiro256StarStar, derive_seed, permutation, splitmix64


@pytest.fixture
def synth(tmp_path):
    path = tmp_path / "synth.npz"
    D.synth_archive(path, per_split=2)
    return path


def npy_bytes(arr, version=(1, 0)):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, version=version)
    return buf.getvalue()


def write_members(path, members):
    with zipfile.ZipFile(path, "w") as zf:
        for name, payload in members.items():
            zf.writestr(name, payload)


def full_members(n=2):
    out = {}
    for split in D.SPLITS:
        out[f"{split}_images.npy"] = npy_bytes(np.zeros((n, 28, 28), np.uint8))
        out[f"{split}_labels.npy"] = npy_bytes(np.zeros((n, 1), np.uint8))
    return out


# ------------------------------------------------------------------ loader

def test_synthetic_archive_sizes(synth):
    splits = D.load_archive(synth)
    assert {k: len(v) for k, v in splits.items()} == {"train": 2, "val": 2, "test": 2}
    assert splits["train"].images.shape == (2, 1, 28, 28)
    assert splits["train"].labels.dtype == np.int64


def test_loader_matches_numpy_load(synth):
    ref = np.load(synth)
    splits = D.load_archive(synth)
    for split in D.SPLITS:
        np.testing.assert_array_equal(splits[split].images[:, 0], D.normalize(ref[f"{split}_images"]))
        np.testing.assert_array_equal(splits[split].labels, ref[f"{split}_labels"].reshape(-1))


def test_load_idempotent(synth):
    a, b = D.load_archive(synth), D.load_archive(synth)
    for k in a:
        np.testing.assert_array_equal(a[k].images, b[k].images)


def test_standard_sizes_shape(tmp_path):
    path = tmp_path / "std.npz"
    rng = np.random.default_rng(0)
    D.write_archive(path, {
        s: (rng.integers(0, 256, (n, 28, 28)).astype(np.uint8), (np.arange(n) % 2)[:, None].astype(np.uint8))
        for s, n in D.STANDARD_SIZES.items()
    })
    splits = D.load_archive(path)
    assert {k: len(v) for k, v in splits.items()} == {"train": 546, "val": 78, "test": 156}
    assert all(np.all(np.abs(v.images) <= 1) for v in splits.values())


def test_missing_member_named(tmp_path):
    members = full_members()
    del members["val_labels.npy"]
    path = tmp_path / "trunc.npz"
    write_members(path, members)
    with pytest.raises(D.ArchiveError, match="val_labels"):
        D.load_archive(path)


def test_bad_magic(tmp_path):
    members = full_members()
    members["train_images.npy"] = b"NOTNPY" + b"\0" * 100
    path = tmp_path / "bad.npz"
    write_members(path, members)
    with pytest.raises(D.ArchiveError, match="train_images"):
        D.load_archive(path)


def test_bad_version(tmp_path):
    members = full_members()
    members["test_images.npy"] = npy_bytes(np.zeros((2, 28, 28), np.uint8), version=(2, 0))
    path = tmp_path / "v2.npz"
    write_members(path, members)
    with pytest.raises(D.ArchiveError, match="version"):
        D.load_archive(path)


def test_shape_mismatch(tmp_path):
    members = full_members()
    members["train_images.npy"] = npy_bytes(np.zeros((2, 28, 27), np.uint8))
    path = tmp_path / "shape.npz"
    write_members(path, members)
    with pytest.raises(D.ArchiveError, match="shape"):
        D.load_archive(path)
    members = full_members()
    members["train_labels.npy"] = npy_bytes(np.zeros((3, 1), np.uint8))
    write_members(path, members)
    with pytest.raises(D.ArchiveError, match="train_labels"):
        D.load_archive(path)


def test_truncated_payload(tmp_path):
    members = full_members()
    members["val_images.npy"] = members["val_images.npy"][:-10]
    path = tmp_path / "short.npz"
    write_members(path, members)
    with pytest.raises(D.ArchiveError, match="truncated"):
        D.load_archive(path)


def test_not_a_zip(tmp_path):
    path = tmp_path / "x.npz"
    path.write_bytes(b"hello")
    with pytest.raises(D.ArchiveError):
        D.load_archive(path)
    with pytest.raises(FileNotFoundError):
        D.load_archive(tmp_path / "nope.npz")


def test_swap_labels(synth):
    splits = D.load_archive(synth)
    swapped = D.swap_labels(splits)
    np.testing.assert_array_equal(swapped["train"].labels, 1 - splits["train"].labels)


# --------------------------------------------------------------- normalize

def test_normalize_values():
    out = D.normalize(np.array([0, 255, 128], dtype=np.uint8))
    assert out[0] == -1.0 and out[1] == 1.0
    assert out[2] == pytest.approx(0.00392156862745098, abs=1e-15)
    all_px = D.normalize(np.arange(256, dtype=np.uint8))
    assert np.all(np.diff(all_px) > 0)
    np.testing.assert_array_equal(np.rint((all_px + 1) * 127.5).astype(np.uint8), np.arange(256))


# ---------------------------------------------------------------- batching

def test_batch_count_546():
    split = D.SplitDataset(np.zeros((546, 1, 28, 28)), np.zeros(546, dtype=np.int64), "train")
    sizes = [len(y) for _, y in D.batch_iter(split, 16, seed=0, epoch=0)]
    assert len(sizes) == 35 == D.n_batches(546, 16)
    assert sizes[:34] == [16] * 34 and sizes[-1] == 2


def test_permutation_determinism():
    np.testing.assert_array_equal(permutation(546, 3, 5), permutation(546, 3, 5))
    assert not np.array_equal(permutation(546, 3, 0), permutation(546, 3, 1))
    assert not np.array_equal(permutation(546, 3, 0), permutation(546, 4, 0))
    assert sorted(permutation(546, 3, 0)) == list(range(546))


def test_eval_splits_not_shuffled():
    split = D.SplitDataset(np.zeros((5, 1, 28, 28)), np.arange(5) % 2, "val")
    (_, y), = list(D.batch_iter(split, 16, seed=1, epoch=3))
    np.testing.assert_array_equal(y, [0, 1, 0, 1, 0])


@given(st.integers(2, 300), st.integers(0, 2 ** 32), st.integers(0, 100))
@settings(max_examples=40, deadline=None)
def test_shuffle_preserves_label_multiset(n, seed, epoch):
    labels = (np.arange(n) * 7 % 3 == 0).astype(np.int64)
    split = D.SplitDataset(np.zeros((n, 1, 28, 28)), labels, "train")
    got = np.concatenate([y for _, y in D.batch_iter(split, 16, seed=seed, epoch=epoch)])
    assert Counter(got.tolist()) == Counter(labels.tolist())


def test_splitmix_reference_values():
    # first outputs for seed 1234567 from the published splitmix64 reference
    state, out1 = splitmix64(1234567)
    _, out2 = splitmix64(state)
    assert out1 == 6457827717110365317
    assert out2 == 3203168211198807973


def test_xoshiro_below_in_range():
    g = Xoshiro256StarStar(42)
    vals = [g.below(7) for _ in range(2000)]
    assert min(vals) == 0 and max(vals) == 6
    assert derive_seed(1, "init") != derive_seed(1, "dropout")
