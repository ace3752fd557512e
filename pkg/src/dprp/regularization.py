"""Loss terms on SVD factors and total-loss assembly.

Counting factors (the out-of-order and negative counts), the survivable
rank and the norm dividing the compression term are evaluated from current
values and enter the tape as constants.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from functools import reduce

import numpy as np

from .errors import ConfigError
from .pruning import compute_tau
from .tensor import Tensor, add, as_tensor, div, l2_norm, matmul, relu, scale, sub, tabs, transpose, tsum

MODES = ("proposed", "none", "l1", "l2", "funnel")


@dataclass(frozen=True)
class LossConfig:
    lambda_str: float = 1.0
    lambda_comp: float = 0.1
    mu_orth: float = 1000.0
    mu_sort: float = 1.0
    epsilon: float = 0.1
    mode: str = "proposed"
    lambda_reg: float = 0.1
    delta: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown regularization mode {self.mode!r}; expected one of {MODES}")
        for f in ("lambda_str", "lambda_comp", "mu_orth", "mu_sort", "lambda_reg"):
            if not getattr(self, f) >= 0:
                raise ConfigError(f"{f} must be >= 0")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.mode == "funnel" and not self.delta > 0:
            raise ConfigError("funnel mode needs delta > 0")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "LossConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown loss fields {sorted(unknown)}")
        return cls(**d)


def chi(count: int) -> float:
    return 1.0 / count if count > 0 else 0.0


def _zero() -> Tensor:
    return as_tensor(0.0)


def _mean_over_layers(terms: list[Tensor], n_layers: int) -> Tensor:
    if not terms:
        return _zero()
    return scale(reduce(add, terms), 1.0 / n_layers)


def orth_loss(layers) -> Tensor:
    """Mean over layers of (||U^T U - I||_F + ||V^T V - I||_F) / r^2."""
    terms = []
    for p in layers:
        eye = np.eye(p.r, dtype=p.U.data.dtype)
        dev_u = l2_norm(sub(matmul(transpose(p.U), p.U), eye))
        dev_v = l2_norm(sub(matmul(transpose(p.V), p.V), eye))
        terms.append(scale(add(dev_u, dev_v), 1.0 / p.r**2))
    return _mean_over_layers(terms, len(layers))


def sort_loss(layers) -> Tensor:
    """Hinge penalties on ascents and on negative values (excluding the last entry)."""
    terms = []
    for p in layers:
        s = p.sigma
        if p.r < 2:
            terms.append(_zero())
            continue
        vals = s.data
        gamma = int(np.count_nonzero(vals[1:] > vals[:-1]))
        eta = int(np.count_nonzero(vals < 0))
        ascent = tsum(relu(sub(s[1:], s[:-1])))
        negative = tsum(relu(scale(s[:-1], -1.0)))
        terms.append(add(scale(ascent, chi(gamma)), scale(negative, chi(eta))))
    return _mean_over_layers(terms, len(layers))


def comp_loss(layers, epsilon: float) -> Tensor:
    """Normalized l1 mass of the singular values past the survivable rank."""
    terms = []
    for p in layers:
        tau = compute_tau(p.sigma.data, epsilon)
        nrm = float(np.linalg.norm(p.sigma.data))
        if tau == p.r or nrm == 0.0:
            terms.append(_zero())
            continue
        tail = tsum(tabs(p.sigma[tau:]))
        terms.append(scale(tail, 1.0 / ((p.r - tau) * nrm)))
    return _mean_over_layers(terms, len(layers))


def ablation_reg(layers, mode: str, delta: float = 1e-3) -> Tensor:
    """l1: ||s||_1 / r, l2: ||s||_2 / r, funnel: sum |s|/(|s| + delta) / r; averaged over layers."""
    if mode not in ("l1", "l2", "funnel"):
        raise ConfigError(f"unknown ablation regularizer {mode!r}")
    terms = []
    for p in layers:
        s = p.sigma
        if mode == "l1":
            v = tsum(tabs(s))
        elif mode == "l2":
            v = l2_norm(s)
        else:
            a = tabs(s)
            v = tsum(div(a, add(a, delta)))
        terms.append(scale(v, 1.0 / p.r))
    return _mean_over_layers(terms, len(layers))


@dataclass
class LossBreakdown:
    app: float
    orth: float
    sort: float
    comp: float
    reg: float
    total: Tensor

    @property
    def total_value(self) -> float:
        return float(self.total.data)

    def values(self) -> dict[str, float]:
        return {
            "app": self.app,
            "orth": self.orth,
            "sort": self.sort,
            "comp": self.comp,
            "reg": self.reg,
            "total": self.total_value,
        }


def total_loss(app: Tensor, layers, cfg: LossConfig) -> LossBreakdown:
    total = app
    orth = sort = comp = reg = 0.0
    if cfg.mode == "proposed" and layers:
        lo, ls, lc = orth_loss(layers), sort_loss(layers), comp_loss(layers, cfg.epsilon)
        orth, sort, comp = float(lo.data), float(ls.data), float(lc.data)
        if cfg.lambda_str and (cfg.mu_orth or cfg.mu_sort):
            structure = add(scale(lo, cfg.mu_orth), scale(ls, cfg.mu_sort))
            total = add(total, scale(structure, cfg.lambda_str))
        if cfg.lambda_comp:
            total = add(total, scale(lc, cfg.lambda_comp))
    elif cfg.mode in ("l1", "l2", "funnel") and layers:
        lr_ = ablation_reg(layers, cfg.mode, cfg.delta)
        reg = float(lr_.data)
        if cfg.lambda_reg:
            total = add(total, scale(lr_, cfg.lambda_reg))
    return LossBreakdown(float(app.data), orth, sort, comp, reg, total)
