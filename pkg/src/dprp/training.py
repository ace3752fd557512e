"""SGD with momentum, reduce-on-plateau, per-epoch pruning and epoch records."""

from __future__ import annotations

import logging
import os
import queue
import threading
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import LabeledImageSet, augment
from .errors import ConfigError, DimensionError, NumericError
from .layers import Model
from .metrics import model_account, topk_accuracy
from .nn import cross_entropy
from .pruning import PruneEvent, prune_step
from .regularization import LossConfig, total_loss
from .tensor import GradTape, Tensor, backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    min_lr: float = 1e-5
    augment: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0 < self.plateau_factor < 1 or self.plateau_patience < 0:
            raise ConfigError("invalid plateau settings")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "SgdConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown sgd fields {sorted(unknown)}")
        return cls(**d)


def sgd_step(params, grads, velocity: dict, lr: float, momentum: float, weight_decay: float) -> None:
    """Classic momentum: g += wd*p; v = m*v + g; p -= lr*v (in place)."""
    for p in params:
        g = grads[p]
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient {g.shape} does not match parameter {p.data.shape} ({p.name})")
        if weight_decay:
            g = g + weight_decay * p.data
        v = velocity.get(p)
        if v is None or momentum == 0:
            v = g.copy() if v is None else g
        else:
            if v.shape != g.shape:
                raise DimensionError(f"momentum buffer {v.shape} does not match {g.shape} ({p.name})")
            v = momentum * v + g
        velocity[p] = v
        p.data = p.data - lr * v


@dataclass
class Plateau:
    """Multiply the rate by ``factor`` once the monitored loss has failed to
    improve for more than ``patience`` consecutive epochs."""

    lr: float
    factor: float = 0.1
    patience: int = 10
    min_lr: float = 1e-5
    threshold: float = 1e-8
    best: float = float("inf")
    bad_epochs: int = 0

    def step(self, loss: float) -> float:
        if loss < self.best - self.threshold:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr

    def to_json(self) -> dict:
        d = asdict(self)
        d["best"] = None if np.isinf(self.best) else self.best
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Plateau":
        d = dict(d)
        if d.get("best") is None:
            d["best"] = float("inf")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    app: float
    orth: float
    sort: float
    comp: float
    reg: float
    total: float
    lr: float
    params: int
    macs: int
    top1: float
    top5: float | None
    ranks: dict
    sigma: dict
    events: list = field(default_factory=list)


@dataclass
class TrainState:
    """Everything needed to continue training bit-for-bit."""

    model: Model
    loss_cfg: LossConfig
    sgd_cfg: SgdConfig
    rng: np.random.Generator
    plateau: Plateau
    velocity: dict = field(default_factory=dict)
    epoch: int = 0
    prune: bool = True
    init_sigma: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, model: Model, loss_cfg: LossConfig, sgd_cfg: SgdConfig, prune: bool | None = None) -> "TrainState":
        if prune is None:
            prune = loss_cfg.mode != "none"
        return cls(
            model=model,
            loss_cfg=loss_cfg,
            sgd_cfg=sgd_cfg,
            rng=np.random.default_rng(sgd_cfg.seed),
            plateau=Plateau(sgd_cfg.lr, sgd_cfg.plateau_factor, sgd_cfg.plateau_patience, sgd_cfg.min_lr),
            prune=prune,
            init_sigma=sigma_snapshot(model),
        )


def sigma_snapshot(model: Model) -> dict:
    return {p.name: [float(v) for v in p.sigma.data] for p in model.factorized()}


def rank_snapshot(model: Model) -> dict:
    return {p.name: p.r for p in model.factorized()}


def predict(model: Model, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    out = [model(Tensor(images[i : i + batch_size])).data for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, 0))


def evaluate(model: Model, ds: LabeledImageSet) -> dict:
    logits = predict(model, ds.images)
    res = {"top1": topk_accuracy(logits, ds.labels, 1), "top5": None}
    if ds.n_classes >= 5:
        res["top5"] = topk_accuracy(logits, ds.labels, 5)
    return res


def _batches(ds: LabeledImageSet, order: np.ndarray, cfg: SgdConfig, rng: np.random.Generator):
    for i in range(0, len(order), cfg.batch_size):
        idx = order[i : i + cfg.batch_size]
        x = ds.images[idx]
        if cfg.augment:
            x = augment(x, rng)
        yield x, ds.labels[idx]


def _prefetch(gen, depth: int):
    """Run a batch generator on a helper thread; order is unchanged."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()

    def work():
        for item in gen:
            q.put(item)
        q.put(done)

    t = threading.Thread(target=work, daemon=True)
    t.start()
    while (item := q.get()) is not done:
        yield item
    t.join()


def train_epoch(state: TrainState, train: LabeledImageSet) -> dict:
    model, cfg = state.model, state.sgd_cfg
    params = list(model.tensors().values())
    layers = model.factorized()
    order = state.rng.permutation(len(train))
    batches = _batches(train, order, cfg, state.rng)
    threads = int(os.environ.get("DPRP_THREADS", "1"))
    if threads > 1:
        batches = _prefetch(batches, threads)
    sums = dict.fromkeys(("app", "orth", "sort", "comp", "reg", "total"), 0.0)
    n_batches = 0
    for bi, (x, y) in enumerate(batches):
        try:
            with GradTape() as tape:
                app = cross_entropy(model(Tensor(x)), y)
                parts = total_loss(app, layers, state.loss_cfg)
            grads = backward(parts.total, tape, params)
            sgd_step(params, grads, state.velocity, state.plateau.lr, cfg.momentum, cfg.weight_decay)
        except NumericError as exc:
            raise NumericError(f"epoch {state.epoch + 1}, batch {bi}: {exc}") from exc
        for k, v in parts.values().items():
            sums[k] += v
        n_batches += 1
    return {k: v / max(n_batches, 1) for k, v in sums.items()}


def fit(state: TrainState, train: LabeledImageSet, test: LabeledImageSet, on_epoch=None) -> list[EpochRecord]:
    """Train from ``state.epoch`` up to ``sgd_cfg.epochs``; mutates ``state``.

    Per epoch: shuffle, minibatch updates, pruning, plateau step on the mean
    classification loss, held-out evaluation, record. ``on_epoch(state,
    record)`` is called after each record (checkpointing hooks in there).
    """
    if len(train) == 0:
        raise ConfigError("empty training set")
    if train.image_shape != tuple(state.model.input_shape):
        raise DimensionError(f"data shape {train.image_shape} does not match model input {state.model.input_shape}")
    records = []
    while state.epoch < state.sgd_cfg.epochs:
        lr_used = state.plateau.lr
        losses = train_epoch(state, train)
        state.epoch += 1
        events: list[PruneEvent] = []
        if state.prune:
            events = prune_step(state.model.factorized(), state.loss_cfg.epsilon, state.epoch, state.velocity)
        state.plateau.step(losses["app"])
        acc = evaluate(state.model, test)
        acct = model_account(state.model)
        rec = EpochRecord(
            epoch=state.epoch,
            lr=lr_used,
            params=state.model.trainable_count(),
            macs=acct.macs,
            top1=acc["top1"],
            top5=acc["top5"],
            ranks=rank_snapshot(state.model),
            sigma=sigma_snapshot(state.model),
            events=events,
            **losses,
        )
        log.debug(
            "epoch %d  L_app %.4f  L_total %.4f  params %d  top1 %.4f  lr %g",
            rec.epoch, rec.app, rec.total, rec.params, rec.top1, rec.lr,
        )
        records.append(rec)
        if on_epoch is not None:
            on_epoch(state, rec)
    return records
