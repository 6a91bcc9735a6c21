import math

import numpy as np
import pytest

from hymunet.autodiff import Tensor
from hymunet.data import Sample, generate_sample, generate_synthetic
from hymunet.metrics import dsc, hd95, iou, precision
from hymunet.model import HyMUNet, ModelConfig, load_checkpoint
from hymunet.training import AdamW, TrainConfig, TrainLog, adamw_step, cosine_lr, evaluate, predict_proba, train

TINY = dict(stage_widths=[4, 4, 8, 8], blocks_per_stage=[1, 1, 1, 1], input_size=32, state_dim=4)


def adam_reference(w0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Scalar AdamW written out step by step."""
    w, m, v = w0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        w = w - lr * wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_zero_grad_zero_decay_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW([p])
    opt.step(0.1, [np.zeros(2)])
    assert np.array_equal(p.data, [1.0, -2.0])


def test_first_step_is_minus_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    adamw_step([p], [np.array([1.0])], [np.zeros(1)], [np.zeros(1)], 1, lr=1e-3)
    assert math.isclose(p.data[0], -1e-3, rel_tol=1e-7)


@pytest.mark.parametrize("wd", [0.0, 0.1])
def test_quadratic_matches_scalar_reference(wd):
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([p], weight_decay=wd)
    for _ in range(10):
        opt.step(0.05, [2 * p.data])
    ref = adam_reference(1.0, lambda w: 2 * w, 10, 0.05, wd=wd)
    assert abs(p.data[0] - ref) < 1e-12


def test_adamw_rejects_nonfinite_and_bad_step():
    p = Tensor(np.zeros(1), requires_grad=True)
    with pytest.raises(FloatingPointError):
        AdamW([p]).step(0.1, [np.array([np.nan])])
    with pytest.raises(ValueError):
        adamw_step([p], [np.zeros(1)], [np.zeros(1)], [np.zeros(1)], 0, 0.1)


def test_cosine_schedule_points():
    assert cosine_lr(0, 50) == 1e-4
    assert math.isclose(cosine_lr(50, 50), 1e-6, rel_tol=1e-12)
    assert math.isclose(cosine_lr(25, 50), (1e-4 + 1e-6) / 2, rel_tol=1e-12)
    lrs = [cosine_lr(t, 50) for t in range(51)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_min=1e-3, lr0=1e-4)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_zero_epochs_returns_initial_state():
    model = HyMUNet(ModelConfig(**TINY))
    init = model.state_dict()
    state, log = train(model, generate_synthetic(0, 2, 32), [], TrainConfig(epochs=0))
    assert not log.records
    assert all(np.array_equal(state[k], init[k]) for k in init)


def test_overlapping_splits_rejected():
    ds = generate_synthetic(0, 2, 32)
    with pytest.raises(ValueError, match="overlap"):
        train(HyMUNet(ModelConfig(**TINY)), ds, ds[:1], TrainConfig(epochs=1))


@pytest.mark.slow
def test_single_sample_memorization():
    s = generate_sample(0, 0, 32)
    model = HyMUNet(ModelConfig(stage_widths=[8, 8, 16, 16], input_size=32))
    cfg = TrainConfig(epochs=50, lr0=1e-2, lr_min=1e-5, augment=False, batch_size=1)
    _, log = train(model, [s], [], cfg)
    losses = [r["train_loss"] for r in log.records]
    assert all(b < a for a, b in zip(losses[:10], losses[1:10]))
    assert evaluate(model, [s]).mean("dsc") >= 0.95


def _small_run(tmp_path, tag, epochs=2):
    ds = generate_synthetic(5, 12, 32)
    model = HyMUNet(ModelConfig(**TINY))
    cfg = TrainConfig(epochs=epochs, batch_size=4, lr0=1e-3, seed=3)
    ckpt = tmp_path / f"{tag}.hymc"
    state, log = train(model, ds[:8], ds[8:], cfg, ckpt_path=ckpt, log_path=tmp_path / f"{tag}.txt")
    return state, log, ckpt, ds


def test_determinism_and_best_checkpoint(tmp_path):
    _, log_a, ckpt_a, ds = _small_run(tmp_path, "a", epochs=3)
    _, log_b, ckpt_b, _ = _small_run(tmp_path, "b", epochs=3)
    assert log_a.reproducible() == log_b.reproducible()
    assert ckpt_a.read_bytes() == ckpt_b.read_bytes()
    best_epoch, best_val = log_a.best()
    assert best_val == max(r["val_dsc"] for r in log_a.records)
    reloaded = load_checkpoint(ckpt_a)
    assert evaluate(reloaded, ds[8:]).mean("dsc") == best_val
    text = (tmp_path / "a.txt").read_text().splitlines()
    assert len(text) == 3 and text[0].startswith("epoch=0 lr=")


def test_trainlog_best_ties_go_to_earlier():
    log = TrainLog([{"val_dsc": 0.5}, {"val_dsc": 0.7}, {"val_dsc": 0.7}, {"val_dsc": float("nan")}])
    assert log.best() == (1, 0.7)
    assert TrainLog().best()[0] == -1


def test_nonfinite_loss_halts(tmp_path):
    ds = generate_synthetic(0, 4, 32)
    model = HyMUNet(ModelConfig(**TINY))
    model.head.conv.bias.data[:] = np.nan
    state, log = train(model, ds[:2], ds[2:], TrainConfig(epochs=3, batch_size=2))
    assert not log.records and log.notes and "non-finite" in log.notes[0]


def test_evaluate_empty_and_perfect_stub():
    assert len(evaluate(lambda x: x, [])) == 0
    ds = generate_synthetic(1, 4, 32)
    lookup = {s.image.tobytes(): s.mask for s in ds}

    def oracle(x):
        return np.stack([lookup[img.transpose(1, 2, 0).tobytes()][None].astype(float) for img in x])

    agg = evaluate(oracle, ds).aggregate()
    assert agg["dsc_mean"] == agg["iou_mean"] == agg["precision_mean"] == 1.0 and agg["hd95_mean"] == 0.0


def test_evaluate_random_stub_matches_composed_oracles():
    ds = generate_synthetic(2, 10, 32)
    rng = np.random.default_rng(0)
    probs = rng.random((10, 1, 32, 32))
    rep = evaluate(lambda x: probs, ds)
    for i, s in enumerate(ds):
        P = probs[i, 0] >= 0.5
        assert rep.dsc[i] == dsc(P, s.mask) and rep.iou[i] == iou(P, s.mask)
        assert rep.precision[i] == precision(P, s.mask) and rep.hd95[i] == hd95(P, s.mask)


def test_predict_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        predict_proba(lambda x: np.full((1, 1, 2, 2), np.nan), np.zeros((1, 3, 2, 2)))


def test_predict_restores_training_mode():
    model = HyMUNet(ModelConfig(**TINY))
    predict_proba(model, np.zeros((1, 3, 32, 32)))
    assert model.training
