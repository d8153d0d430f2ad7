import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfusion.config import RunConfig
from qfusion.data import SplitDataset, load_archive, n_batches, synth_archive
from qfusion.models import build_model, load_checkpoint
from qfusion.tensor import Tensor
from qfusion.train import (
    AdamWState, EarlyStopper, OneCycleSchedule, TrainingError, adamw_step, clip_grad_norm, curves_csv,
    fit, onecycle_lr, train_run,
)


def param_with_grad(w, g, name="w"):
    p = Tensor(np.array(w, dtype=float), requires_grad=True, name=name)
    p.grad = np.array(g, dtype=float)
    return p


# ------------------------------------------------------------------ AdamW

def test_adamw_first_step_closed_form():
    p = param_with_grad([1.0], [1.0])
    adamw_step([p], AdamWState(weight_decay=0.01), lr=0.001)
    # bias-corrected first step moves by lr * g / (|g| + eps), decay adds lr * lambda * w
    expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8) - 0.001 * 0.01 * 1.0
    assert p.data[0] == pytest.approx(expected, abs=1e-15)
    assert p.data[0] == pytest.approx(0.99899, abs=1e-8)


def test_adamw_zero_grad_no_decay():
    p = param_with_grad([0.3, -2.0], [0.0, 0.0])
    st_ = AdamWState(weight_decay=0.0)
    for _ in range(3):
        adamw_step([p], st_, lr=0.01)
    np.testing.assert_array_equal(p.data, [0.3, -2.0])


def test_adamw_reference_trajectory():
    # independent scalar re-derivation of the textbook update
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(6, 3))
    p = param_with_grad(np.ones(3), grads[0])
    s = AdamWState(weight_decay=0.05)
    w, m, v = np.ones(3), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        p.grad = g.copy()
        adamw_step([p], s, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh, vh = m / (1 - 0.9 ** t), v / (1 - 0.999 ** t)
        w = w - 0.01 * (mh / (np.sqrt(vh) + 1e-8) + 0.05 * w)
        np.testing.assert_allclose(p.data, w, rtol=1e-14)


def test_adamw_nan_names_parameter():
    p = param_with_grad([1.0], [np.nan], name="classifier.fc1.weight")
    with pytest.raises(TrainingError, match="classifier.fc1.weight"):
        adamw_step([p], AdamWState(), lr=0.001)


# --------------------------------------------------------------- schedule

def reference_lr(step, total, max_lr=0.002, pct=0.3, div=25.0, final_div=1e4):
    peak = max(1, round(pct * total) - 1)
    lo, hi, end = max_lr / div, max_lr, max_lr / final_div
    if step <= peak:
        t = step / peak
        return hi + (lo - hi) * (1 + math.cos(math.pi * t)) / 2
    t = (step - peak) / (total - 1 - peak)
    return end + (hi - end) * (1 + math.cos(math.pi * t)) / 2


def test_schedule_endpoints():
    total = 35 * 80
    assert total == 2800
    s = OneCycleSchedule(0.002, total)
    assert onecycle_lr(0, s) == 0.002 / 25
    assert onecycle_lr(0, s) == pytest.approx(8e-5, rel=1e-15)
    assert onecycle_lr(s.peak_step, s) == 0.002
    assert onecycle_lr(total - 1, s) == pytest.approx(2e-7, rel=1e-15)
    lrs = [onecycle_lr(k, s) for k in range(total)]
    assert max(lrs) == 0.002 and int(np.argmax(lrs)) == s.peak_step
    with pytest.raises(ValueError):
        onecycle_lr(total, s)


def test_schedule_matches_closed_form_everywhere():
    s = OneCycleSchedule(0.002, 2800)
    worst = max(abs(onecycle_lr(k, s) - reference_lr(k, 2800)) for k in range(2800))
    assert worst < 1e-18


def test_schedule_monotone_phases():
    s = OneCycleSchedule(0.002, 2800)
    lrs = np.array([onecycle_lr(k, s) for k in range(2800)])
    assert np.all(np.diff(lrs[: s.peak_step + 1]) > 0)
    assert np.all(np.diff(lrs[s.peak_step:]) < 0)


# --------------------------------------------------------------- clipping

def test_clip_345():
    p = param_with_grad([0.0, 0.0], [3.0, 4.0])
    assert clip_grad_norm([p], 1.0) == 5.0
    np.testing.assert_allclose(p.grad, [0.6, 0.8], rtol=1e-15)


def test_clip_below_threshold_unchanged():
    p = param_with_grad([0.0, 0.0], [0.3, 0.4])
    clip_grad_norm([p], 1.0)
    np.testing.assert_array_equal(p.grad, [0.3, 0.4])


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8), min_size=1, max_size=5),
       st.floats(0.1, 10))
@settings(max_examples=100, deadline=None)
def test_post_clip_norm_bounded(groups, max_norm):
    params = [param_with_grad(np.zeros(len(g)), g) for g in groups]
    before = [p.grad.copy() for p in params]
    pre = clip_grad_norm(params, max_norm)
    post = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params))
    assert post <= max_norm * (1 + 1e-12)
    if pre <= max_norm:
        for b, p in zip(before, params):
            np.testing.assert_array_equal(b, p.grad)


# --------------------------------------------------------- early stopping

@pytest.mark.parametrize("k", [1, 7, 30])
def test_early_stop_at_k_plus_patience(k):
    stopper = EarlyStopper(25)
    stopped = None
    for epoch in range(1, 200):
        stopper.update(0.5 + 0.01 * min(epoch, k), epoch)
        if stopper.should_stop:
            stopped = epoch
            break
    assert stopper.best_epoch == k
    assert stopped == k + 25


def test_early_stop_ties_keep_earlier():
    stopper = EarlyStopper(5)
    for epoch, v in enumerate([0.5, 0.8, 0.8, 0.7], start=1):
        stopper.update(v, epoch)
    assert stopper.best_epoch == 2


# --------------------------------------------------------------------- fit

@pytest.fixture(scope="module")
def tiny_splits(tmp_path_factory):
    path = tmp_path_factory.mktemp("d") / "tiny.npz"
    synth_archive(path, per_split=8, seed=1)
    return load_archive(path)


def test_steps_per_epoch_protocol():
    assert n_batches(546, 16) == 35
    assert n_batches(546, 16) * 80 == 2800


@pytest.mark.parametrize("kind", ["classical", "hybrid"])
def test_fit_deterministic_curves(kind, tiny_splits, tmp_path):
    cfg = RunConfig(model=kind, seed=4, max_epochs=3, batch_size=4)
    a = train_run(cfg, tiny_splits, out_dir=tmp_path / "a")
    b = train_run(cfg, tiny_splits, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "curves.csv").read_bytes() == (tmp_path / "b" / "curves.csv").read_bytes()
    assert a.curves == b.curves
    c = train_run(cfg.replace(seed=5), tiny_splits)
    assert curves_csv(c.curves) != curves_csv(a.curves)


def test_fit_records_schedule_and_best(tiny_splits, tmp_path):
    cfg = RunConfig(model="classical", seed=0, max_epochs=4, batch_size=4)
    res = train_run(cfg, tiny_splits, out_dir=tmp_path)
    steps = n_batches(8, 4)
    sched = OneCycleSchedule(cfg.max_lr, steps * 4)
    for row in res.curves:
        assert row["lr"] == onecycle_lr(steps * row["epoch"] - 1, sched)
    assert res.best_val_acc == max(r["val_acc"] for r in res.curves)
    best = next(r for r in res.curves if r["val_acc"] == res.best_val_acc)
    assert res.best_epoch == best["epoch"]
    # the saved checkpoint is the best-validation state
    from qfusion.train import evaluate
    model = load_checkpoint(tmp_path / "model.ckpt")
    assert evaluate(model, tiny_splits["val"])["accuracy"] == res.best_val_acc
    for name in ("curves.csv", "result.json", "model.ckpt", "confusion.csv"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "curves.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,train_acc,val_loss,val_acc,lr"


def test_fit_early_stops(tiny_splits):
    cfg = RunConfig(model="classical", seed=0, max_epochs=30, patience=2, batch_size=8)
    res = fit(build_model("classical", 0), tiny_splits, cfg)
    assert res.stopped_epoch <= 30
    if res.stopped_epoch < 30:
        assert res.stopped_epoch == res.best_epoch + 2


def test_fit_nan_loss_aborts(tiny_splits):
    bad = dict(tiny_splits)
    imgs = tiny_splits["train"].images.copy()
    imgs[0, 0, 0, 0] = np.nan
    bad["train"] = SplitDataset(imgs, tiny_splits["train"].labels, "train")
    with pytest.raises(TrainingError, match="epoch 0"):
        fit(build_model("classical", 0), bad, RunConfig(model="classical", max_epochs=1, batch_size=8))
