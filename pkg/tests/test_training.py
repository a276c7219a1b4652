import csv
import math

import numpy as np
import pytest

from xstft.complexity import count_params
from xstft.data import Pipeline, gen_direction_dataset
from xstft.network import MICRO_LAYOUT, build_network, init_orthogonal, load_checkpoint, micro_spec
from xstft.training import (
    SGD,
    DivergenceError,
    TrainConfig,
    cross_entropy,
    lr_at,
    reversal_flip_rate,
    sgd_update,
    topk_correct,
    train,
    train_step,
)


def tiny_spec(variant="t"):
    # two stems and one inception on 16x16 clips of 8 frames: fast enough for many steps
    layout = (MICRO_LAYOUT[0], MICRO_LAYOUT[2], ("inception", (64, 64, 64, 16, 32, 32)))
    return micro_spec(variant, frames=8, size=(16, 16), layout=layout)


def tiny_model(seed=0, dtype=np.float64, variant="t"):
    return init_orthogonal(build_network(tiny_spec(variant), dtype), seed)


@pytest.fixture(scope="module")
def tiny_data():
    return gen_direction_dataset(5, 16, frames=8, height=16, width=16)


def frozen_bn_model(seed, x):
    """A model whose batch norms use running statistics gathered from one pass over ``x``."""
    model = tiny_model(seed)
    model.forward(x, train=True)
    return model


def batch(ds, n, dtype=np.float64):
    x, y = next(Pipeline(8, (16, 16), dtype=dtype).eval_batches(ds, n))
    return x, y


# --- SGD ------------------------------------------------------------------


def test_sgd_hand_example():
    w, v = sgd_update(np.array([1.0]), np.array([1.0]), np.array([0.0]), 0.1, 0.9, 0.9, 1e-3)
    assert v[0] == pytest.approx(0.1001, abs=1e-15)
    assert w[0] == pytest.approx(0.98999, abs=1e-15)


def test_sgd_degenerate_is_plain_sgd(rng):
    w, g = rng.standard_normal(5), rng.standard_normal(5)
    w2, _ = sgd_update(w, g, np.zeros(5), 0.3, 0.0, 0.0, 0.0)
    np.testing.assert_array_equal(w2, w - 0.3 * g)


def test_sgd_class_matches_functional(tiny_data):
    model = tiny_model()
    opt = SGD(model, 0.9, 0.9, 1e-3)
    x, y = batch(tiny_data, 4)
    before = {k: v.copy() for k, v in model.parameters().items()}
    train_step(model, opt, x, y, 0.05)
    grads = model.gradients()
    for name, w in model.parameters().items():
        expected, _ = sgd_update(before[name], grads[name], np.zeros_like(w), 0.05, 0.9, 0.9, 1e-3)
        np.testing.assert_allclose(w, expected, rtol=0, atol=1e-15)


def test_optimizer_touches_exactly_the_counted_params():
    model = tiny_model()
    opt = SGD(model)
    counted = count_params(model)
    assert sum(v.size for v in opt.velocity.values()) == counted["total"]
    assert not any("stft" in name and name.endswith(".W") for name in opt.touched())


def test_nonfinite_gradient_raises(tiny_data):
    model = tiny_model()
    x, y = batch(tiny_data, 2)
    x[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(DivergenceError):
        train_step(model, SGD(model), x, y, 0.1)


# --- loss -----------------------------------------------------------------


def test_cross_entropy_uniform_and_confident():
    loss, _ = cross_entropy(np.zeros((3, 7)), [0, 3, 6])
    assert loss == pytest.approx(math.log(7), abs=1e-12)
    logits = np.zeros((1, 4))
    logits[0, 2] = 50.0
    assert cross_entropy(logits, [2])[0] < 1e-20


def test_cross_entropy_gradient(rng):
    logits = rng.standard_normal((4, 7))
    labels = [1, 0, 6, 3]
    _, g = cross_entropy(logits, labels)
    h = 1e-6
    num = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        p, m = logits.copy(), logits.copy()
        p[idx] += h
        m[idx] -= h
        num[idx] = (cross_entropy(p, labels)[0] - cross_entropy(m, labels)[0]) / (2 * h)
    assert np.max(np.abs(num - g)) < 1e-7


@pytest.mark.parametrize("labels", [[0, 7], [-1, 0], [0]])
def test_cross_entropy_bad_labels(labels):
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 7)), labels)


def test_topk():
    logits = np.array([[0.1, 0.5, 0.4], [0.9, 0.05, 0.05]])
    assert topk_correct(logits, [2, 0], 1) == 1
    assert topk_correct(logits, [2, 0], 2) == 2
    assert topk_correct(logits, [2, 1], 5) == 2


# --- schedule -------------------------------------------------------------


def test_schedule():
    cfg = TrainConfig.full_schedule()
    assert cfg.epochs == 160
    assert [lr_at(cfg, e) for e in (0, 39)] == [0.1, 0.1]
    assert lr_at(cfg, 40) == pytest.approx(0.01)
    assert lr_at(cfg, 79) == pytest.approx(0.01)
    assert lr_at(cfg, 80) == pytest.approx(0.001)


@pytest.mark.parametrize("field,value", [("lr", 0.0), ("momentum", 1.0), ("batch_size", 0), ("precision", "float16")])
def test_config_validation(field, value):
    cfg = TrainConfig(**{field: value})
    with pytest.raises(ValueError):
        cfg.validate()


# --- optimisation behaviour -----------------------------------------------


def test_single_step_decreases_loss(tiny_data):
    x, y = batch(tiny_data, 8)
    wins = 0
    for seed in range(20):
        model = frozen_bn_model(seed, x)
        before, _ = cross_entropy(model.forward(x, train=False), y)
        model.zero_grad()
        _, g = cross_entropy(model.forward(x, train=False), y)
        model.backward(g)
        SGD(model, 0.0, 0.0, 0.0).step(1e-3)
        after, _ = cross_entropy(model.forward(x, train=False), y)
        wins += after < before
    assert wins >= 19


def test_full_batch_descent_is_monotone(tiny_data):
    x, y = batch(tiny_data, 8)
    model = frozen_bn_model(3, x)
    opt = SGD(model, 0.0, 0.0, 0.0)
    losses = []
    for _ in range(10):
        model.zero_grad()
        loss, g = cross_entropy(model.forward(x, train=False), y)
        losses.append(loss)
        model.backward(g)
        opt.step(1e-3)
    assert all(b <= a for a, b in zip(losses, losses[1:])), losses


def test_gradient_accumulation_matches_large_batch(tiny_data):
    x, y = batch(tiny_data, 8)
    model = frozen_bn_model(1, x)
    model.zero_grad()
    _, g = cross_entropy(model.forward(x, train=False), y)
    model.backward(g)
    full = {k: v.copy() for k, v in model.gradients().items()}
    acc = {k: np.zeros_like(v) for k, v in full.items()}
    for part in (slice(0, 3), slice(3, 8)):
        model.zero_grad()
        _, g = cross_entropy(model.forward(x[part], train=False), y[part])
        model.backward(g * (len(y[part]) / len(y)))
        for k, v in model.gradients().items():
            acc[k] += v
    for k in full:
        assert np.max(np.abs(acc[k] - full[k])) < 1e-10, k


# --- loop -----------------------------------------------------------------


def loop_config(epochs):
    return TrainConfig(batch_size=8, epochs=epochs, lr=0.05, lr_period=2, precision="float64", eval_batch_size=8)


def test_metrics_csv_and_checkpoints(tiny_data, tmp_path):
    rows = train(tiny_model(), tiny_data, tiny_data, loop_config(2), tmp_path)
    assert [(r["epoch"], r["split"]) for r in rows] == [(0, "train"), (0, "val"), (1, "train"), (1, "val")]
    with (tmp_path / "metrics.csv").open() as fh:
        text = list(csv.reader(fh))
    assert text[0] == ["epoch", "split", "loss", "top1"]
    assert len(text) == 5
    for line in text[1:]:
        float(line[2]), float(line[3])
    state = load_checkpoint(tmp_path / "last.ckpt")
    assert int(state["meta/epoch"][0]) == 1
    assert (tmp_path / "best.ckpt").exists()


def test_resume_is_bit_exact(tiny_data, tmp_path):
    straight, split = tmp_path / "a", tmp_path / "b"
    train(tiny_model(), tiny_data, tiny_data, loop_config(3), straight)
    train(tiny_model(), tiny_data, tiny_data, loop_config(1), split)
    train(tiny_model(), tiny_data, tiny_data, loop_config(3), split, resume=split / "last.ckpt")
    assert (straight / "last.ckpt").read_bytes() == (split / "last.ckpt").read_bytes()
    assert (straight / "metrics.csv").read_text() == (split / "metrics.csv").read_text()


def test_stop_at_ends_early(tiny_data, tmp_path):
    rows = train(tiny_model(), tiny_data, tiny_data, loop_config(3), tmp_path, stop_at=0.0)
    assert {r["epoch"] for r in rows} == {0}


def test_reversal_flip_rate():
    labels = np.array([0, 1, 0, 2, 1])
    preds = np.array([0, 1, 1, 2, 1])
    rev = np.array([1, 1, 0, 3, 0])
    rate, n = reversal_flip_rate(labels, preds, rev)
    assert n == 3
    assert rate == pytest.approx(2 / 3)
    assert reversal_flip_rate([2], [2], [3]) == (0.0, 0)
