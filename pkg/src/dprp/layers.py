"""SVD-factorized convolutional and fully-connected layers.

A factorized layer stores ``U (h x r)``, ``sigma (r)`` and ``V (w x r)`` instead
of its dense weight. For a convolution the ``S x C x L2 x L1`` filter is
matricized to ``SC x L1L2`` (row index ``s*C + c``, column index
``l2*L1 + l1``); for a dense layer ``W`` is ``D2 x D1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DimensionError
from .svd import svd
from .tensor import Tensor, get_dtype, matmul, mul, parameter, relu, reshape, transpose


@dataclass(frozen=True)
class ConvShape:
    S: int
    C: int
    L1: int
    L2: int
    p: int = 0
    s: int = 1

    def __post_init__(self):
        if min(self.S, self.C, self.L1, self.L2, self.s) < 1 or self.p < 0:
            raise ConfigError(f"invalid conv shape {self}")

    @property
    def h(self) -> int:
        return self.S * self.C

    @property
    def w(self) -> int:
        return self.L1 * self.L2

    @property
    def filter_shape(self) -> tuple:
        return (self.S, self.C, self.L2, self.L1)

    @property
    def fan_in(self) -> int:
        return self.C * self.L1 * self.L2


@dataclass(frozen=True)
class FcShape:
    D1: int
    D2: int

    def __post_init__(self):
        if min(self.D1, self.D2) < 1:
            raise ConfigError(f"invalid fc shape {self}")

    @property
    def h(self) -> int:
        return self.D2

    @property
    def w(self) -> int:
        return self.D1

    @property
    def fan_in(self) -> int:
        return self.D1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "fc"
    shape: ConvShape | FcShape
    factorized: bool = True
    activation: str = "relu"  # "relu" | "none"

    def __post_init__(self):
        want = {"conv": ConvShape, "fc": FcShape}.get(self.kind)
        if want is None:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if not isinstance(self.shape, want):
            raise ConfigError(f"{self.kind} layer needs a {want.__name__}")
        if self.activation not in ("relu", "none"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def h(self) -> int:
        return self.shape.h

    @property
    def w(self) -> int:
        return self.shape.w

    def dense_count(self) -> int:
        return self.h * self.w

    def bias_count(self) -> int:
        return self.h if self.kind == "fc" else self.shape.S


@dataclass
class FactorizedParam:
    """Trainable SVD factors of one layer. ``r`` shrinks under pruning."""

    U: Tensor
    sigma: Tensor
    V: Tensor
    h: int
    w: int
    theta: int
    bias: Tensor | None = None
    name: str = ""

    @property
    def r(self) -> int:
        return self.sigma.shape[0]

    def factor_tensors(self) -> dict[str, Tensor]:
        return {"U": self.U, "sigma": self.sigma, "V": self.V}

    def tensors(self) -> dict[str, Tensor]:
        out = self.factor_tensors()
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def factor_count(self) -> int:
        """Stored factor scalars, counted from the arrays themselves."""
        return self.U.size + self.sigma.size + self.V.size

    def reconstruct(self) -> Tensor:
        """``U diag(sigma) V^T`` recorded on the active tape."""
        return matmul(mul(self.U, self.sigma), transpose(self.V))

    def dense_matrix(self) -> np.ndarray:
        return (self.U.data * self.sigma.data) @ self.V.data.T


# --------------------------------------------------------------------------
# Matricization
# --------------------------------------------------------------------------


def reshape_filter(k):
    """``S x C x L2 x L1`` filter -> ``SC x L1L2`` matrix (row-major fold)."""
    if k.ndim != 4:
        raise DimensionError(f"reshape_filter needs a 4-way filter, got shape {k.shape}")
    s, c, l2, l1 = k.shape
    if isinstance(k, Tensor):
        return reshape(k, (s * c, l2 * l1))
    return np.asarray(k).reshape(s * c, l2 * l1)


def inverse_reshape(m, shape: ConvShape):
    if m.ndim != 2 or m.shape != (shape.h, shape.w):
        raise DimensionError(f"matrix {m.shape} does not factor as SC x L1L2 = {(shape.h, shape.w)}")
    if isinstance(m, Tensor):
        return reshape(m, shape.filter_shape)
    return np.asarray(m).reshape(shape.filter_shape)


# --------------------------------------------------------------------------
# Initialization
# --------------------------------------------------------------------------


def draw_dense(spec: LayerSpec, rng: np.random.Generator) -> np.ndarray:
    """Kaiming fan-in normal draw of the dense filter/weight, 64-bit."""
    std = np.sqrt(2.0 / spec.shape.fan_in)
    shape = spec.shape.filter_shape if spec.kind == "conv" else (spec.shape.D2, spec.shape.D1)
    return rng.standard_normal(shape) * std


def factorize(spec: LayerSpec, dense: np.ndarray, name: str = "", bias: bool = True) -> FactorizedParam:
    """Full-rank SVD factors of a dense parameter (theta = min(h, w))."""
    m = reshape_filter(dense) if spec.kind == "conv" else np.asarray(dense)
    u, sigma, v = svd(m)
    dt = get_dtype()
    return FactorizedParam(
        U=parameter(u.astype(dt), name=f"{name}.U"),
        sigma=parameter(sigma.astype(dt), name=f"{name}.sigma"),
        V=parameter(v.astype(dt), name=f"{name}.V"),
        h=spec.h,
        w=spec.w,
        theta=min(spec.h, spec.w),
        bias=parameter(np.zeros(spec.bias_count(), dt), name=f"{name}.bias") if bias else None,
        name=name,
    )


def init_factorized(spec: LayerSpec, rng: np.random.Generator, name: str = "", bias: bool = True) -> FactorizedParam:
    if not spec.factorized:
        raise ConfigError("init_factorized called on a dense layer spec")
    return factorize(spec, draw_dense(spec, rng), name=name, bias=bias)


# --------------------------------------------------------------------------
# Forward passes
# --------------------------------------------------------------------------


def _add_channel_bias(y: Tensor, bias: Tensor | None) -> Tensor:
    if bias is None:
        return y
    shape = (bias.shape[0], 1, 1) if y.ndim == 3 else (1, bias.shape[0], 1, 1)
    return y + reshape(bias, shape)


def forward_conv(param: FactorizedParam, shape: ConvShape, x: Tensor) -> Tensor:
    k = inverse_reshape(param.reconstruct(), shape)
    return _add_channel_bias(nn.conv2d(x, k, pad=shape.p, stride=shape.s), param.bias)


def forward_fc(param: FactorizedParam, x: Tensor) -> Tensor:
    """``x V diag(sigma) U^T`` as three thin products; W is never formed."""
    if x.ndim != 2 or x.shape[1] != param.w:
        raise DimensionError(f"fc input {x.shape} does not match D1={param.w}")
    y = matmul(mul(matmul(x, param.V), param.sigma), transpose(param.U))
    return y if param.bias is None else y + param.bias


# --------------------------------------------------------------------------
# Model container
# --------------------------------------------------------------------------


class Layer:
    """A conv or fc layer, factorized or dense, with optional relu."""

    def __init__(self, spec: LayerSpec, name: str, rng: np.random.Generator | None = None, dense=None):
        self.spec = spec
        self.name = name
        if dense is None:
            dense = draw_dense(spec, rng)
        self.init_dense = dense
        if spec.factorized:
            self.param = factorize(spec, dense, name=name)
            self.weight = None
            self.bias = self.param.bias
        else:
            dt = get_dtype()
            self.param = None
            self.weight = parameter(dense.astype(dt), name=f"{name}.weight")
            self.bias = parameter(np.zeros(spec.bias_count(), dt), name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        spec = self.spec
        if spec.kind == "conv":
            if self.param is not None:
                y = forward_conv(self.param, spec.shape, x)
            else:
                y = _add_channel_bias(nn.conv2d(x, self.weight, spec.shape.p, spec.shape.s), self.bias)
        else:
            if x.ndim == 4:
                x = reshape(x, (x.shape[0], -1))
            if self.param is not None:
                y = forward_fc(self.param, x)
            else:
                y = matmul(x, transpose(self.weight)) + self.bias
        return relu(y) if spec.activation == "relu" else y

    def tensors(self) -> dict[str, Tensor]:
        if self.param is not None:
            return {f"{self.name}.{k}": t for k, t in self.param.tensors().items()}
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def trainable_count(self) -> int:
        return sum(t.size for t in self.tensors().values())


@dataclass(frozen=True)
class Pool:
    kind: str  # "avgpool" | "gap"
    size: int = 2

    def __call__(self, x: Tensor) -> Tensor:
        if self.kind == "gap":
            return nn.global_avg_pool(x)
        return nn.avg_pool2d(x, self.size)


def parse_architecture(entries: list[dict]) -> list:
    """JSON layer list -> LayerSpec / Pool items. ``kind`` values: conv, fc,
    dense-conv, dense-fc, avgpool, gap."""
    items = []
    for i, raw in enumerate(entries):
        e = dict(raw)
        kind = e.pop("kind", None)
        try:
            if kind in ("avgpool", "gap"):
                items.append(Pool(kind, int(e.pop("size", 2))))
            elif kind in ("conv", "dense-conv"):
                lk = e.pop("L", None)
                shape = ConvShape(
                    S=int(e.pop("S")),
                    C=int(e.pop("C")),
                    L1=int(e.pop("L1", lk)),
                    L2=int(e.pop("L2", lk)),
                    p=int(e.pop("p", 0)),
                    s=int(e.pop("s", 1)),
                )
                fac = e.pop("factorized", kind == "conv")
                items.append(LayerSpec("conv", shape, bool(fac), e.pop("activation", "relu")))
            elif kind in ("fc", "dense-fc"):
                shape = FcShape(D1=int(e.pop("D1")), D2=int(e.pop("D2")))
                fac = e.pop("factorized", kind == "fc")
                items.append(LayerSpec("fc", shape, bool(fac), e.pop("activation", "none")))
            else:
                raise ConfigError(f"architecture entry {i}: unknown kind {kind!r}")
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"architecture entry {i}: missing or invalid field {exc}") from exc
        if kind in ("dense-conv", "dense-fc") and items[-1].factorized:
            raise ConfigError(f"architecture entry {i}: {kind} cannot be factorized")
        if e:
            raise ConfigError(f"architecture entry {i}: unknown fields {sorted(e)}")
    return items


def architecture_to_json(items: list) -> list[dict]:
    out = []
    for it in items:
        if isinstance(it, Pool):
            out.append({"kind": it.kind, "size": it.size} if it.kind == "avgpool" else {"kind": "gap"})
        else:
            d = {"kind": it.kind, **asdict(it.shape), "factorized": it.factorized, "activation": it.activation}
            out.append(d)
    return out


def desk_architecture(n_classes: int, in_channels: int = 3, factorized: bool = True) -> list:
    """Three 3x3 conv stages (8, 16, 32 channels) with pooling, then a classifier."""
    f = factorized
    return [
        LayerSpec("conv", ConvShape(S=8, C=in_channels, L1=3, L2=3, p=1, s=1), f),
        Pool("avgpool", 2),
        LayerSpec("conv", ConvShape(S=16, C=8, L1=3, L2=3, p=1, s=1), f),
        Pool("avgpool", 2),
        LayerSpec("conv", ConvShape(S=32, C=16, L1=3, L2=3, p=1, s=1), f),
        Pool("gap"),
        LayerSpec("fc", FcShape(D1=32, D2=n_classes), f, activation="none"),
    ]


def resnet20_architecture(n_classes: int = 10, factorized: bool = False) -> list:
    """ResNet-20 (CIFAR) convolution stack without the identity shortcuts.

    Parameter-free shortcuts add no multiply-accumulates, so this plain stack
    has the same MAC count. Analysis only; stride-2 extents use floor rounding.
    """
    f = factorized
    items = [LayerSpec("conv", ConvShape(16, 3, 3, 3, 1, 1), f)]
    c_in = 16
    for width, first_stride in ((16, 1), (32, 2), (64, 2)):
        for block in range(3):
            for j in range(2):
                s = first_stride if (block == 0 and j == 0) else 1
                items.append(LayerSpec("conv", ConvShape(width, c_in, 3, 3, 1, s), f))
                c_in = width
    items.append(Pool("gap"))
    items.append(LayerSpec("fc", FcShape(D1=64, D2=n_classes), f, activation="none"))
    return items


@dataclass
class Model:
    """Plain feed-forward stack of layers and pools."""

    items: list
    input_shape: tuple  # (C, H, W)
    layers: list = field(default_factory=list)

    @classmethod
    def build(cls, items: list, input_shape: tuple, rng: np.random.Generator) -> "Model":
        model = cls(list(items), tuple(input_shape))
        counts: dict[str, int] = {}
        for it in model.items:
            if isinstance(it, LayerSpec):
                counts[it.kind] = counts.get(it.kind, 0) + 1
                model.layers.append(Layer(it, f"{it.kind}{counts[it.kind]}", rng))
            else:
                model.layers.append(it)
        return model

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def weight_layers(self) -> list[Layer]:
        return [l for l in self.layers if isinstance(l, Layer)]

    def factorized(self) -> list[FactorizedParam]:
        return [l.param for l in self.weight_layers() if l.param is not None]

    def tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in self.weight_layers():
            out.update(layer.tensors())
        return out

    def trainable_count(self) -> int:
        return sum(t.size for t in self.tensors().values())
