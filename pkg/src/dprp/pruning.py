"""Dynamic rank reduction: find the survivable rank and cut the factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .layers import FactorizedParam


@dataclass(frozen=True)
class PruneEvent:
    epoch: int
    layer: str
    rank_before: int
    rank_after: int
    removed: tuple  # removed sigma values, in index order
    params_removed: int

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "layer": self.layer,
            "rank_before": self.rank_before,
            "rank_after": self.rank_after,
            "removed": [float(v) for v in self.removed],
            "params_removed": self.params_removed,
        }


def compute_tau(sigma, epsilon: float) -> int:
    """Longest prefix length whose consecutive ratios |s[i+1]| > eps |s[i]| all hold.

    Equivalently the (1-based) index of the first failing ratio, or ``r``
    when none fails. Always at least 1.
    """
    a = np.abs(np.asarray(getattr(sigma, "data", sigma), dtype=np.float64))
    if a.ndim != 1 or a.size == 0:
        raise UsageError("compute_tau needs a non-empty singular value vector")
    fails = np.flatnonzero(~(a[1:] > epsilon * a[:-1]))
    return int(fails[0]) + 1 if fails.size else int(a.size)


def truncate(param: FactorizedParam, tau: int, momentum: dict | None = None, epoch: int = 0):
    """Keep the leading ``tau`` singular triplets. Returns ``(param, event)``;
    ``event`` is None when nothing is removed. Momentum buffers keyed by the
    factor tensors are cut in lockstep."""
    r = param.r
    if not 1 <= tau <= r:
        raise UsageError(f"tau={tau} outside [1, {r}] for layer {param.name!r}")
    if tau == r:
        return param, None
    removed = tuple(float(v) for v in param.sigma.data[tau:])
    cuts = {param.U: (slice(None), slice(0, tau)), param.V: (slice(None), slice(0, tau)), param.sigma: slice(0, tau)}
    for t, idx in cuts.items():
        t.data = np.ascontiguousarray(t.data[idx])
        t.grad = None
        if momentum is not None and t in momentum:
            momentum[t] = np.ascontiguousarray(momentum[t][idx])
    event = PruneEvent(epoch, param.name, r, tau, removed, (r - tau) * (param.h + param.w + 1))
    return param, event


def prune_step(layers, epsilon: float, epoch: int, momentum: dict | None = None) -> list[PruneEvent]:
    """Truncate every factorized layer at its current survivable rank."""
    events = []
    for param in layers:
        _, event = truncate(param, compute_tau(param.sigma.data, epsilon), momentum, epoch)
        if event is not None:
            events.append(event)
    return events
