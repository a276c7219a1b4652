"""Optimizer, loss and the train/eval loops."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import REVERSED_LABEL, DatasetFile, Pipeline
from .network import Network, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

PRECISIONS = {"float64": np.float64, "float32": np.float32}


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    lr: float = 0.1
    lr_decay: float = 0.1
    lr_period: int = 10
    momentum: float = 0.9
    dampening: float = 0.9
    weight_decay: float = 1e-3
    precision: str = "float32"
    seed: int = 0
    augment: bool = True
    flip: bool = False
    eval_batch_size: int = 50

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.momentum < 1 and 0 <= self.dampening < 1):
            raise ValueError("momentum and dampening must lie in [0, 1)")
        if self.weight_decay < 0 or self.batch_size < 1 or self.epochs < 0 or self.lr_period < 1:
            raise ValueError("invalid batch size, epochs, decay period or weight decay")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @classmethod
    def full_schedule(cls, **kw):
        """From-scratch schedule: 160 epochs, lr 0.1 divided by 10 every 40."""
        return cls(epochs=160, lr=0.1, lr_decay=0.1, lr_period=40, **kw)


def lr_at(config: TrainConfig, epoch: int) -> float:
    return config.lr * config.lr_decay ** (epoch // config.lr_period)


class SGD:
    """Velocity-form SGD with dampening and L2 weight decay.

    Per tensor: ``g' = g + wd*w``, ``v = mu*v + (1 - d)*g'``, ``w -= lr*v``,
    with the velocity starting at zero.
    """

    def __init__(self, model: Network, momentum=0.9, dampening=0.9, weight_decay=1e-3):
        self.model = model
        self.momentum, self.dampening, self.weight_decay = momentum, dampening, weight_decay
        self.velocity = {name: np.zeros_like(layer.params[key]) for name, layer, key in model.named_parameters()}

    def step(self, lr: float):
        mu, d, wd = self.momentum, self.dampening, self.weight_decay
        for name, layer, key in self.model.named_parameters():
            w = layer.params[key]
            g = layer.grads[key]
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in {name}")
            if wd:
                g = g + wd * w
            v = self.velocity[name]
            v *= mu
            v += (1 - d) * g
            layer.params[key] = w - lr * v

    def touched(self) -> list[str]:
        return list(self.velocity)


def sgd_update(w, g, v, lr, momentum, dampening, weight_decay):
    """Functional single-tensor form of :meth:`SGD.step`; returns ``(w, v)``."""
    g = g + weight_decay * w
    v = momentum * v + (1 - dampening) * g
    return w - lr * v, v


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be {b} class indices below {k}")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -float(logp[np.arange(b), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(b), labels] -= 1.0
    return loss, (grad / b).astype(logits.dtype)


def topk_correct(logits: np.ndarray, labels, k: int) -> int:
    k = min(k, logits.shape[1])
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return int((top == np.asarray(labels)[:, None]).any(axis=1).sum())


def evaluate(model: Network, ds: DatasetFile, pipeline: Pipeline, batch_size: int = 50) -> dict:
    total, loss_sum, top1, top5 = 0, 0.0, 0, 0
    for x, y in pipeline.eval_batches(ds, batch_size):
        logits = model.forward(x, train=False)
        loss, _ = cross_entropy(logits, y)
        loss_sum += loss * len(y)
        top1 += topk_correct(logits, y, 1)
        top5 += topk_correct(logits, y, 5)
        total += len(y)
    return {"loss": loss_sum / total, "top1": top1 / total, "top5": top5 / total}


def predict(model: Network, ds: DatasetFile, pipeline: Pipeline, batch_size: int = 50, reverse_time=False):
    preds = []
    for x, _ in pipeline.eval_batches(ds, batch_size):
        if reverse_time:
            x = x[:, :, ::-1].copy()
        preds.append(np.argmax(model.forward(x, train=False), axis=1))
    return np.concatenate(preds)


def reversal_flip_rate(labels, preds, reversed_preds, classes=(0, 1)) -> tuple[float, int]:
    """Among correctly classified clips of ``classes``, the fraction whose
    prediction on the time-reversed clip is the reversed label."""
    labels, preds, reversed_preds = (np.asarray(a) for a in (labels, preds, reversed_preds))
    mask = np.isin(labels, classes) & (preds == labels)
    n = int(mask.sum())
    if n == 0:
        return 0.0, 0
    target = np.array([REVERSED_LABEL[int(v)] for v in labels[mask]])
    return float(np.mean(reversed_preds[mask] == target)), n


def train_step(model: Network, opt: SGD, x, y, lr: float):
    model.zero_grad()
    logits = model.forward(x, train=True)
    loss, g = cross_entropy(logits, y)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss")
    model.backward(g)
    opt.step(lr)
    return loss, logits


def _state(model: Network, opt: SGD, epoch: int, best: float) -> dict:
    state = model.state_dict()
    state.update({f"velocity/{k}": v for k, v in opt.velocity.items()})
    state["meta/epoch"] = np.array([epoch], dtype=np.int64)
    state["meta/best_top1"] = np.array([best], dtype=np.float64)
    return state


def _restore(model: Network, opt: SGD, state: dict) -> tuple[int, float]:
    model.load_state_dict(state)
    for k in opt.velocity:
        opt.velocity[k] = state[f"velocity/{k}"].astype(opt.velocity[k].dtype).copy()
    return int(state["meta/epoch"][0]), float(state["meta/best_top1"][0])


METRIC_FIELDS = ("epoch", "split", "loss", "top1")


def train(model: Network, train_ds: DatasetFile, val_ds: DatasetFile | None, config: TrainConfig,
          out_dir, resume: str | Path | None = None, stop_at: float | None = None,
          pipeline: Pipeline | None = None) -> list[dict]:
    """Run the training schedule, logging metrics and checkpoints to ``out_dir``.

    Writes ``metrics.csv`` (epoch, split, loss, top1), ``last.ckpt`` after
    every epoch (resumable) and ``best.ckpt`` whenever validation top-1
    improves.  ``stop_at`` ends training early once validation top-1
    reaches it.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = model.spec
    if pipeline is None:
        pipeline = Pipeline(spec.frames, spec.size, config.seed, config.augment, config.flip, config.dtype)
    opt = SGD(model, config.momentum, config.dampening, config.weight_decay)
    start, best = 0, -1.0
    metrics_path = out_dir / "metrics.csv"
    rows: list[dict] = []
    if resume is not None:
        last, best = _restore(model, opt, load_checkpoint(resume))
        start = last + 1
        if metrics_path.exists():
            with metrics_path.open() as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["epoch"]) <= last]
    with metrics_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

    for epoch in range(start, config.epochs):
        lr = lr_at(config, epoch)
        tic = time.perf_counter()
        n, loss_sum, correct = 0, 0.0, 0
        for x, y in pipeline.train_batches(train_ds, config.batch_size, epoch):
            loss, logits = train_step(model, opt, x, y, lr)
            loss_sum += loss * len(y)
            correct += topk_correct(logits, y, 1)
            n += len(y)
        epoch_rows = [{"epoch": epoch, "split": "train", "loss": repr(loss_sum / n), "top1": repr(correct / n)}]
        val_top1 = None
        if val_ds is not None:
            res = evaluate(model, val_ds, pipeline, config.eval_batch_size)
            val_top1 = res["top1"]
            epoch_rows.append({"epoch": epoch, "split": "val", "loss": repr(res["loss"]), "top1": repr(val_top1)})
        with metrics_path.open("a", newline="") as fh:
            csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n").writerows(epoch_rows)
        rows.extend(epoch_rows)
        if val_top1 is not None and val_top1 > best:
            best = val_top1
            save_checkpoint(out_dir / "best.ckpt", _state(model, opt, epoch, best))
        save_checkpoint(out_dir / "last.ckpt", _state(model, opt, epoch, best))
        log.info(
            "epoch %d lr %.4g train loss %.4f top1 %.3f val top1 %s (%.1fs)",
            epoch, lr, loss_sum / n, correct / n,
            "-" if val_top1 is None else f"{val_top1:.3f}", time.perf_counter() - tic,
        )
        if stop_at is not None and val_top1 is not None and val_top1 >= stop_at:
            break
    return rows


def load_model_state(model: Network, path) -> Network:
    model.load_state_dict(load_checkpoint(path))
    return model
