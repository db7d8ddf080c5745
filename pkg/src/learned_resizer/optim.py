"""Momentum SGD, the step-wise exponential schedule, and the training loops.

Modes of :func:`train_joint`:

``joint``            resizer and baseline both updated every step
``resizer_frozen``   resizer fixed (eval mode), baseline updated
``baseline_frozen``  baseline fixed (eval mode), resizer updated
``control_bilinear`` no resizer; batches are bilinearly resized to the
                     output resolution before the baseline
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt_io
from .data import Batcher, PreResizeSpec
from .losses import cross_entropy_smoothed, emd_loss, probabilities, smooth_label_batch
from .metrics import plcc, srcc, top_k_error
from .baselines import mean_scores
from .tensor import Tensor, bilinear_resize, fresh_tape, no_grad

log = logging.getLogger(__name__)

MODES = ("joint", "resizer_frozen", "baseline_frozen", "control_bilinear")


@dataclass
class TrainConfig:
    base_lr: float = 0.05
    momentum: float = 0.9
    decay_rate: float = 0.94
    decay_every_epochs: int = 2
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    mode: str = "joint"
    nesterov: bool = False
    task: str = "classify"
    probability_head: str = "softmax"
    label_smoothing: float = 0.1
    pre_resize: str = "bilinear"
    in_size: tuple = None
    out_size: tuple = None
    eval_every: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        if self.task not in ("classify", "iqa"):
            raise ValueError(f"task must be classify or iqa, got {self.task!r}")
        for name in ("in_size", "out_size"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, tuple(int(s) for s in v))

    @classmethod
    def finetune(cls, **overrides):
        """Fine-tuning defaults: lr 0.005 for 4 epochs."""
        return cls(**{"base_lr": 0.005, "epochs": 4, **overrides})

    def lr_at_epoch(self, epoch):
        return lr_schedule(epoch, self.base_lr, self.decay_rate, self.decay_every_epochs)

    def to_dict(self):
        d = asdict(self)
        for k in ("in_size", "out_size"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


def lr_schedule(epoch, base_lr=0.05, decay_rate=0.94, every=2):
    """``base_lr * decay_rate ** floor(epoch / every)``."""
    return base_lr * decay_rate ** (epoch // every)


def sgd_momentum_step(params, grads, velocity, lr, momentum=0.9, nesterov=False):
    """In-place heavy-ball update: ``v = m v + g; p -= lr v``.

    ``params``, ``grads`` and ``velocity`` are parallel lists of arrays.
    """
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"sgd shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v += g
        if nesterov:
            p -= lr * (g + momentum * v)
        else:
            p -= lr * v


class SGDMomentum:
    """Velocity buffers keyed by parameter name, zeroed only at construction."""

    def __init__(self, named_params, momentum=0.9, nesterov=False):
        self.named = dict(named_params)
        self.momentum = momentum
        self.nesterov = nesterov
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.named.items()}

    def step(self, lr):
        keys = [k for k, p in self.named.items() if p.grad is not None]
        sgd_momentum_step(
            [self.named[k].data for k in keys],
            [self.named[k].grad for k in keys],
            [self.velocity[k] for k in keys],
            lr,
            self.momentum,
            self.nesterov,
        )


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class History:
    records: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    models: dict = field(default_factory=dict)

    @property
    def final_metrics(self):
        return self.records[-1]["metrics"] if self.records else {}

    @property
    def lrs(self):
        return [r["lr"] for r in self.records]


class RunLog:
    """JSON-lines log (machine) plus ``logging`` lines (human)."""

    def __init__(self, path=None):
        self.path = path
        self._f = open(path, "w") if path else None

    def write(self, record):
        if self._f:
            self._f.write(json.dumps(record, sort_keys=True) + "\n")
            self._f.flush()
        if record.get("event") == "eval":
            metrics = " ".join(f"{k}={v:.4f}" for k, v in record["metrics"].items())
            loss = "-" if record["loss"] is None else f"{record['loss']:.4f}"
            log.info("step %d epoch %d lr %.5f loss %s %s", record["step"], record["epoch"], record["lr"], loss, metrics)

    def close(self):
        if self._f:
            self._f.close()
            self._f = None


def _pipeline(resizer, baseline, x, cfg, out_size, train_resizer, train_baseline):
    if cfg.mode == "control_bilinear" or resizer is None:
        img = bilinear_resize(x, *out_size)
    else:
        img = resizer(x, training=train_resizer, out_size=out_size)
    logits = baseline.logits(img, training=train_baseline)
    if cfg.task == "iqa":
        return probabilities(logits, "softmax")
    return probabilities(logits, cfg.probability_head)


def _loss(probs, labels, cfg, num_classes):
    if cfg.task == "iqa":
        return emd_loss(probs, labels)
    targets = smooth_label_batch(labels, num_classes, cfg.label_smoothing)
    return cross_entropy_smoothed(probs, targets)


def evaluate(resizer, baseline, batcher, cfg, out_size=None):
    """Eval-mode metrics over every record of ``batcher``'s dataset."""
    out_size = out_size or _out_size(resizer, cfg)
    outs, losses, sizes = [], [], []
    with no_grad():
        for x, labels in batcher.epoch(train=False):
            probs = _pipeline(resizer, baseline, x, cfg, out_size, False, False)
            losses.append(_loss(probs, labels, cfg, baseline.num_classes).item())
            sizes.append(len(labels))
            outs.append(probs.data)
    probs = np.concatenate(outs)
    labels = batcher.labels
    metrics = {"loss": float(np.average(losses, weights=sizes))}
    if cfg.task == "iqa":
        pred, true = mean_scores(probs.astype(np.float64)), mean_scores(labels)
        metrics["plcc"] = plcc(pred, true)
        metrics["srcc"] = srcc(pred, true)
    else:
        metrics["top1_error"] = top_k_error(probs, labels, 1)
        if probs.shape[1] > 5:
            metrics["top5_error"] = top_k_error(probs, labels, 5)
    return metrics


def _out_size(resizer, cfg):
    if cfg.out_size is not None:
        return cfg.out_size
    if resizer is not None:
        return (resizer.cfg.out_h, resizer.cfg.out_w)
    raise ValueError("control_bilinear mode needs TrainConfig.out_size")


def _has_stats(model):
    return all(st.running_mean is not None for st in model.bn.values())


def _grad_norms(named):
    return {k: float(np.sqrt((p.grad.astype(np.float64) ** 2).sum())) for k, p in named.items() if p.grad is not None}


def train_joint(resizer, baseline, train_ds, val_ds, cfg, log_path=None, extra_log=None):
    """Train according to ``cfg.mode``; returns a :class:`History`.

    The first JSON-lines record holds the resolved configuration, followed
    by one ``eval`` record at step 0 and after every eval interval.
    """
    if cfg.mode != "control_bilinear" and resizer is None:
        raise ValueError(f"mode {cfg.mode!r} needs a resizer")
    out_size = _out_size(resizer, cfg)
    in_size = cfg.in_size or tuple(np.asarray(train_ds.images[0]).shape[-2:])
    pre = PreResizeSpec(cfg.pre_resize, *in_size)
    pre.check_covers(*out_size)
    train_b = Batcher(train_ds, pre, cfg.batch_size, seed=cfg.seed)
    val_b = Batcher(val_ds, pre, cfg.batch_size, seed=cfg.seed)
    steps_per_epoch = train_b.steps_per_epoch()
    if steps_per_epoch == 0:
        raise ValueError(f"training set of {len(train_ds)} records is smaller than one batch of {cfg.batch_size}")
    eval_every = cfg.eval_every or steps_per_epoch

    use_resizer = cfg.mode != "control_bilinear"
    train_resizer = use_resizer and cfg.mode in ("joint", "baseline_frozen")
    train_baseline = cfg.mode in ("joint", "resizer_frozen", "control_bilinear")
    for frozen, model, name in ((use_resizer and not train_resizer, resizer, "resizer"),
                                (not train_baseline, baseline, "baseline")):
        if frozen and not _has_stats(model):
            raise ValueError(f"mode {cfg.mode!r} freezes the {name}, which has no batch-norm running "
                             f"statistics yet; load a trained {name} checkpoint first")
    if use_resizer:
        resizer.set_trainable(train_resizer)
    baseline.set_trainable(train_baseline)

    named = {}
    if train_resizer:
        named.update({f"resizer.{k}": p for k, p in resizer.params.items()})
    if train_baseline:
        named.update({f"baseline.{k}": p for k, p in baseline.params.items()})
    opt = SGDMomentum(named, cfg.momentum, cfg.nesterov)
    model_r = resizer if use_resizer else None

    history = History()
    runlog = RunLog(log_path)
    header = {"event": "config", "config": cfg.to_dict(), "pre_resize": [pre.method, pre.target_h, pre.target_w],
              "out_size": list(out_size), "train_records": len(train_ds), "val_records": len(val_ds),
              "baseline": baseline.metadata()}
    if model_r is not None:
        header["resizer"] = ckpt_io.resizer_metadata(model_r)
    header.update(extra_log or {})
    runlog.write(header)

    def emit(step, epoch, lr, loss):
        metrics = evaluate(model_r, baseline, val_b, cfg, out_size)
        rec = {"event": "eval", "step": step, "epoch": epoch, "lr": lr, "loss": loss, "metrics": metrics}
        history.records.append(rec)
        runlog.write(rec)

    try:
        step = 0
        if all(m is None or _has_stats(m) for m in (model_r, baseline)):
            emit(0, 0, cfg.lr_at_epoch(0), None)
        window = []
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at_epoch(epoch)
            for x, labels in train_b.epoch(epoch, train=True):
                with fresh_tape() as tape:
                    probs = _pipeline(model_r, baseline, x, cfg, out_size, train_resizer, train_baseline)
                    loss = _loss(probs, labels, cfg, baseline.num_classes)
                    value = loss.item()
                    if not math.isfinite(value):
                        raise TrainingDiverged(
                            f"non-finite loss {value} at step {step} (epoch {epoch}, lr {lr:.6g}); "
                            f"last grad norms: {_grad_norms(named)}"
                        )
                    tape.backward(loss)
                opt.step(lr)
                step += 1
                history.step_losses.append(value)
                window.append(value)
                if step % eval_every == 0:
                    emit(step, epoch + 1 if step % steps_per_epoch == 0 else epoch, lr, float(np.mean(window)))
                    window = []
        if window:
            emit(step, cfg.epochs, cfg.lr_at_epoch(max(cfg.epochs - 1, 0)), float(np.mean(window)))
        runlog.write({"event": "done", "steps": step, "final_metrics": history.final_metrics})
    finally:
        runlog.close()
        if use_resizer:
            resizer.set_trainable(True)
        baseline.set_trainable(True)
    history.models = {"resizer": model_r, "baseline": baseline}
    return history


def finetune_resizer(resizer_ckpt, new_baseline, train_ds, val_ds, cfg=None, expect=None, log_path=None):
    """Initialise a resizer from a checkpoint and train it jointly with ``new_baseline``.

    ``resizer_ckpt`` is a :class:`~learned_resizer.checkpoint.Checkpoint` or a
    path. ``expect`` (a ResizerConfig) guards against architecture mismatch;
    its output size also overrides the stored one.
    """
    if not isinstance(resizer_ckpt, ckpt_io.Checkpoint):
        resizer_ckpt = ckpt_io.load(resizer_ckpt)
    cfg = cfg or TrainConfig.finetune()
    if cfg.mode != "joint":
        cfg = replace(cfg, mode="joint")
    resizer = ckpt_io.restore_resizer(resizer_ckpt, expect)
    return train_joint(resizer, new_baseline, train_ds, val_ds, cfg, log_path=log_path,
                       extra_log={"finetune_from": resizer_ckpt.metadata.get("resizer")})
