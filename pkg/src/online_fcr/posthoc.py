"""Post-hoc upper bounds on the realized false coverage proportion.

For any predictable levels alpha_i and arbitrary selection decisions S_i,
with probability at least 1 - delta the realized FCP satisfies, at every
prefix n simultaneously,

    FCP(n) <= (a + sum_{i<=n} alpha_i) / (sum_{i<=n} S_i)
              * log(1/delta) / (a * log(1 + log(1/delta)/a)).

The bound is vacuous (+inf) until the first selection. It is increasing in
the spent level mass and decreasing in the selection count, but it is not
monotone in n: a burst of selections can pull it down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["PosthocConfig", "posthoc_factor", "fcp_upper_bound", "track_uniform_bound"]


@dataclass(frozen=True)
class PosthocConfig:
    a: float = 1.0
    delta: float = 0.05

    def __post_init__(self):
        if not (self.a > 0):
            raise ValueError(f"a must be positive, got {self.a}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


def posthoc_factor(cfg: PosthocConfig) -> float:
    """The multiplicative constant log(1/delta) / (a log(1 + log(1/delta)/a))."""
    L = math.log(1.0 / cfg.delta)
    return L / (cfg.a * math.log1p(L / cfg.a))


def fcp_upper_bound(
    levels: Sequence[float],
    selections: Sequence[bool],
    cfg: PosthocConfig,
    n: int,
) -> float:
    """Bound at prefix n; +inf while no selection has been made."""
    if n < 1 or n > len(levels) or len(levels) != len(selections):
        raise ValueError("need 1 <= n <= len(levels) == len(selections)")
    n_sel = sum(bool(s) for s in selections[:n])
    if n_sel == 0:
        return math.inf
    spent = math.fsum(levels[:n])
    return (cfg.a + spent) / n_sel * posthoc_factor(cfg)


def track_uniform_bound(
    levels: Sequence[float],
    selections: Sequence[bool],
    cfg: PosthocConfig,
) -> np.ndarray:
    """The bound at every prefix n >= 1 (vectorized); vacuous entries are inf."""
    lv = np.asarray(levels, dtype=float)
    sel = np.asarray(selections, dtype=bool)
    if lv.shape != sel.shape:
        raise ValueError("levels and selections must have equal length")
    spent = np.cumsum(lv)
    counts = np.cumsum(sel)
    factor = posthoc_factor(cfg)
    with np.errstate(divide="ignore"):
        out = np.where(counts > 0, (cfg.a + spent) / np.maximum(counts, 1) * factor, np.inf)
    return out
