"""Parameter, compression and MAC accounting plus accuracy metrics.

MAC convention: one multiply plus one add; bias adds, activations and pooling
are not counted. A factorized convolution is charged for rebuilding its
filter from the factors (``r * SC * L1L2``) on top of the convolution itself.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .layers import LayerSpec, Model, Pool
from .nn import conv_output_size


def param_counts(spec: LayerSpec, r: int) -> tuple[int, int]:
    """(dense, factorized-at-rank-r) weight counts; biases excluded."""
    h, w = spec.h, spec.w
    if not 1 <= r <= min(h, w):
        raise ConfigError(f"rank {r} outside [1, {min(h, w)}]")
    return h * w, r * (h + w + 1)


def compression_rate(spec: LayerSpec, r: int) -> float:
    dense, fact = param_counts(spec, r)
    return 1.0 - fact / dense


def break_even_rank(spec: LayerSpec) -> float:
    """Largest real rank at which the factorized layer is no larger than the dense one."""
    return spec.h * spec.w / (spec.h + spec.w + 1)


def layer_macs(spec: LayerSpec, r: int | None, out_hw: tuple[int, int] = (1, 1)) -> int:
    """MACs for one input; ``r=None`` means the dense layer."""
    if spec.kind == "conv":
        sh = spec.shape
        conv = sh.S * sh.C * sh.L1 * sh.L2 * out_hw[0] * out_hw[1]
        return conv if r is None else conv + r * sh.h * sh.w
    return spec.h * spec.w if r is None else r * (spec.h + spec.w)


@dataclass
class LayerAccount:
    name: str
    kind: str
    factorized: bool
    h: int
    w: int
    theta: int
    r: int
    p_dense: int
    p_fact: int
    bias: int
    rate: float
    macs: int


@dataclass
class ModelAccount:
    layers: list[LayerAccount] = field(default_factory=list)

    @property
    def dense_weights(self) -> int:
        return sum(l.p_dense for l in self.layers)

    @property
    def trainable_weights(self) -> int:
        return sum(l.p_fact for l in self.layers)

    @property
    def biases(self) -> int:
        return sum(l.bias for l in self.layers)

    @property
    def trainable(self) -> int:
        return self.trainable_weights + self.biases

    @property
    def dense_total(self) -> int:
        return self.dense_weights + self.biases

    @property
    def compression(self) -> float:
        """Whole-model compression against the dense architecture, biases included."""
        return 1.0 - self.trainable / self.dense_total

    @property
    def weight_compression(self) -> float:
        return 1.0 - self.trainable_weights / self.dense_weights

    @property
    def macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def dense_macs(self) -> int:
        return sum(l.macs for l in self.layers if not l.factorized)

    def totals(self) -> dict:
        return {
            "dense_weights": self.dense_weights,
            "trainable_weights": self.trainable_weights,
            "biases": self.biases,
            "trainable_params": self.trainable,
            "dense_params": self.dense_total,
            "compression": self.compression,
            "weight_compression": self.weight_compression,
            "macs": self.macs,
        }

    def to_json(self) -> dict:
        return {"layers": [asdict(l) for l in self.layers], "totals": self.totals()}


def _walk(items, ranks, input_shape):
    """Yield (spec, rank, out_hw) for each weight layer, propagating shapes."""
    c, h, w = input_shape
    flat = None
    it_ranks = iter(ranks)
    for it in items:
        if isinstance(it, Pool):
            if flat is not None:
                raise ConfigError("pooling after a fully-connected layer")
            h, w = (1, 1) if it.kind == "gap" else (h // it.size, w // it.size)
            if h < 1 or w < 1:
                raise ConfigError("pooling reduced the feature map below 1x1")
            continue
        r = next(it_ranks)
        if it.kind == "conv":
            sh = it.shape
            if flat is not None or sh.C != c:
                raise ConfigError(f"conv expects {sh.C} input channels, got {c}")
            h = conv_output_size(h, sh.L2, sh.p, sh.s, strict=False)
            w = conv_output_size(w, sh.L1, sh.p, sh.s, strict=False)
            c = sh.S
            yield it, r, (h, w)
        else:
            d_in = flat if flat is not None else c * h * w
            if it.shape.D1 != d_in:
                raise ConfigError(f"fc expects D1={it.shape.D1}, incoming width is {d_in}")
            flat = it.shape.D2
            yield it, r, (1, 1)


def _ranks_for(items, model: Model | None):
    if model is not None:
        return [l.param.r if l.param is not None else None for l in model.weight_layers()]
    return [min(it.h, it.w) if it.factorized else None for it in items if isinstance(it, LayerSpec)]


def model_account(model_or_items, input_shape=None) -> ModelAccount:
    """Per-layer accounting of a built model (current ranks) or of an
    architecture description (factorized layers at full rank)."""
    if isinstance(model_or_items, Model):
        model, items, input_shape = model_or_items, model_or_items.items, model_or_items.input_shape
        names = [l.name for l in model.weight_layers()]
    else:
        model, items = None, list(model_or_items)
        if input_shape is None:
            raise ConfigError("input shape required for an architecture description")
        counts: dict[str, int] = {}
        names = []
        for it in items:
            if isinstance(it, LayerSpec):
                counts[it.kind] = counts.get(it.kind, 0) + 1
                names.append(f"{it.kind}{counts[it.kind]}")
    acct = ModelAccount()
    for name, (spec, r, out_hw) in zip(names, _walk(items, _ranks_for(items, model), input_shape)):
        dense = spec.h * spec.w
        fact = r * (spec.h + spec.w + 1) if r is not None else dense
        acct.layers.append(
            LayerAccount(
                name=name,
                kind=spec.kind,
                factorized=r is not None,
                h=spec.h,
                w=spec.w,
                theta=min(spec.h, spec.w),
                r=r if r is not None else min(spec.h, spec.w),
                p_dense=dense,
                p_fact=fact,
                bias=spec.bias_count(),
                rate=1.0 - fact / dense,
                macs=layer_macs(spec, r, out_hw),
            )
        )
    return acct


def mac_count(model_or_items, input_shape=None) -> int:
    return model_account(model_or_items, input_shape).macs


def topk_accuracy(logits, labels, k: int) -> float:
    """Fraction of rows whose label is among the k largest logits; ties go to
    the lower class index."""
    z = np.asarray(getattr(logits, "data", logits))
    labels = np.asarray(labels)
    if not 1 <= k <= z.shape[1]:
        raise InputError(f"k={k} outside [1, {z.shape[1]}]")
    if z.shape[0] == 0:
        return 0.0
    rows = np.arange(z.shape[0])
    true = z[rows, labels][:, None]
    idx = np.arange(z.shape[1])[None, :]
    ahead = (z > true) | ((z == true) & (idx < labels[:, None]))
    return float(np.mean(ahead.sum(axis=1) < k))


def scaled_accuracy(a_source: float, a_base_source: float, a_base_ours: float) -> float:
    """Rescale a reported accuracy to our baseline: a_source * ours / theirs."""
    if a_base_source == 0:
        raise InputError("source baseline accuracy must be non-zero")
    return a_source * a_base_ours / a_base_source
