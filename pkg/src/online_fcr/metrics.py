"""Error-rate computations over decision/coverage records.

All ratios use the 0/0 = 0 convention. Records are immutable values and the
metrics are pure folds, so any prefix T can be queried and replications can
be evaluated concurrently without shared state.

FCP(T)   = sum_{i<=T} V_i / sum_{i<=T} S_i          (realized proportion)
est FCP  = sum_{i<=T} alpha_i / (sum_{i<=T} S_i v 1) (budget surrogate)
memFCP   = sum d^{T-i} V_i / sum d^{T-i} S_i         (decaying memory)

Aggregation over replications: FCR-hat is the mean FCP, mFCR-hat the ratio
of means, pFCR-hat the mean FCP over replications with at least one
selection, FSR-hat the mean false-sign proportion. Point estimates come
with Monte Carlo standard errors (mFCR via the delta method).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "StepRecord",
    "RateReport",
    "ReplicationStats",
    "AggregateReport",
    "fcp",
    "estimated_fcp",
    "mem_weighted_fcp",
    "sign_error_counts",
    "localization_error_counts",
    "rate_report",
    "aggregate_rates",
]


@dataclass(frozen=True)
class StepRecord:
    """One protocol step. Oracle fields (miscovered, theta,
    localization_false) are known only in simulation."""

    index: int
    selected: bool
    miscovered: bool | None = None
    level: float | None = None
    sign_decision: int = 0
    theta: float | None = None
    localized_index: int | None = None
    localization_false: bool | None = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("record index must be a positive integer")
        if self.miscovered and not self.selected:
            raise ValueError("miscovered implies selected (V_i = S_i * 1{theta not in I})")
        if self.sign_decision not in (-1, 0, 1):
            raise ValueError("sign_decision must be one of -1, 0, 1")
        if self.sign_decision != 0 and not self.selected:
            raise ValueError("a sign decision implies selection")
        if self.localized_index is not None and not self.selected:
            raise ValueError("a localization implies selection")


@dataclass(frozen=True)
class RateReport:
    fcp: float
    est_fcp: float
    fsp: float
    flp: float
    n_selected: int


def _prefix(records: Sequence[StepRecord], T: int) -> list[StepRecord]:
    if T < 1:
        raise ValueError("T must be a positive integer")
    return [r for r in records if r.index <= T]


def fcp(records: Sequence[StepRecord], T: int) -> float:
    """Realized false coverage proportion over the prefix of time T."""
    n_sel = 0
    n_mis = 0
    for r in _prefix(records, T):
        if r.selected:
            if r.miscovered is None:
                raise ValueError(
                    f"incomplete oracle data: selected record {r.index} has no miscoverage flag"
                )
            n_sel += 1
            n_mis += int(r.miscovered)
    return n_mis / n_sel if n_sel else 0.0


def estimated_fcp(levels: Sequence[float], selections: Sequence[bool]) -> float:
    """Budget surrogate sum(alpha_i) / (sum(S_i) v 1)."""
    if len(levels) != len(selections):
        raise ValueError("levels and selections must have equal length")
    for a in levels:
        if not (0.0 < a < 1.0):
            raise ValueError(f"level outside (0, 1): {a}")
    total = math.fsum(levels)
    n_sel = sum(bool(s) for s in selections)
    return total / max(n_sel, 1)


def mem_weighted_fcp(records: Sequence[StepRecord], decay: float, T: int) -> float:
    """Decaying-memory FCP; decay = 1 recovers fcp exactly (the weights are
    then exactly 1.0, so both folds accumulate the same floats)."""
    if not (0.0 < decay <= 1.0):
        raise ValueError(f"decay must lie in (0, 1], got {decay}")
    num = 0.0
    den = 0.0
    for r in _prefix(records, T):
        if r.selected:
            if r.miscovered is None:
                raise ValueError(
                    f"incomplete oracle data: selected record {r.index} has no miscoverage flag"
                )
            w = decay ** (T - r.index)
            den += w
            num += w * int(r.miscovered)
    return num / den if den else 0.0


def sign_error_counts(records: Sequence[StepRecord]) -> tuple[int, int]:
    """(false directional decisions, total directional decisions).

    Weak classification: D = -1 claims theta <= 0, so theta = 0 classified
    nonpositive is correct; D = +1 claims theta > 0.
    """
    false_signs = 0
    total = 0
    for r in records:
        if r.sign_decision == 0:
            continue
        if r.theta is None:
            raise ValueError(f"record {r.index} has a sign decision but no ground-truth theta")
        total += 1
        if r.sign_decision == 1 and r.theta <= 0:
            false_signs += 1
        elif r.sign_decision == -1 and r.theta > 0:
            false_signs += 1
    return false_signs, total


def localization_error_counts(records: Sequence[StepRecord]) -> tuple[int, int]:
    """(false localizations, total localizations made)."""
    false_locs = 0
    total = 0
    for r in records:
        if r.localized_index is None:
            continue
        if r.localization_false is None:
            raise ValueError(f"record {r.index} localizes but carries no oracle flag")
        total += 1
        false_locs += int(r.localization_false)
    return false_locs, total


def rate_report(records: Sequence[StepRecord], T: int | None = None) -> RateReport:
    if T is None:
        T = max((r.index for r in records), default=1)
    pre = _prefix(records, T)
    n_sel = sum(r.selected for r in pre)
    levels = [r.level for r in pre if r.level is not None]
    est = (math.fsum(levels) / max(n_sel, 1)) if levels else 0.0
    fs, ts = sign_error_counts(pre)
    fl, tl = localization_error_counts(pre)
    return RateReport(
        fcp=fcp(pre, T),
        est_fcp=est,
        fsp=fs / ts if ts else 0.0,
        flp=fl / tl if tl else 0.0,
        n_selected=n_sel,
    )


# ---------------------------------------------------------------------------
# Aggregation across replications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationStats:
    """Per-replication tallies sufficient for every aggregate."""

    n_selected: int
    n_miscovered: int
    false_signs: int = 0
    total_signs: int = 0
    false_locs: int = 0
    total_locs: int = 0
    sum_levels: float = 0.0

    @property
    def fcp(self) -> float:
        return self.n_miscovered / self.n_selected if self.n_selected else 0.0

    @property
    def fsp(self) -> float:
        return self.false_signs / self.total_signs if self.total_signs else 0.0


@dataclass(frozen=True)
class AggregateReport:
    n_reps: int
    n_reps_with_selection: int
    fcr_hat: float
    fcr_se: float
    mfcr_hat: float
    mfcr_se: float
    pfcr_hat: float
    pfcr_se: float
    fsr_hat: float
    fsr_se: float
    mean_selected: float
    mean_selected_se: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return m, se


def aggregate_rates(per_replication: Sequence[ReplicationStats]) -> AggregateReport:
    if not per_replication:
        raise ValueError("need at least one replication")
    n = len(per_replication)
    sel = np.array([r.n_selected for r in per_replication], dtype=float)
    mis = np.array([r.n_miscovered for r in per_replication], dtype=float)
    fcps = np.array([r.fcp for r in per_replication], dtype=float)
    fsps = np.array([r.fsp for r in per_replication], dtype=float)

    fcr_hat, fcr_se = _mean_se(fcps)
    fsr_hat, fsr_se = _mean_se(fsps)
    mean_sel, mean_sel_se = _mean_se(sel)

    mean_s = float(np.mean(sel))
    if mean_s > 0:
        mfcr_hat = float(np.mean(mis)) / mean_s
        # delta method for the ratio of means
        resid = mis - mfcr_hat * sel
        mfcr_se = float(np.std(resid, ddof=1) / (mean_s * math.sqrt(n))) if n > 1 else 0.0
    else:
        mfcr_hat, mfcr_se = 0.0, 0.0

    positive = fcps[sel > 0]
    if len(positive):
        pfcr_hat, pfcr_se = _mean_se(positive)
    else:
        pfcr_hat, pfcr_se = 0.0, 0.0

    return AggregateReport(
        n_reps=n,
        n_reps_with_selection=int(np.sum(sel > 0)),
        fcr_hat=fcr_hat,
        fcr_se=fcr_se,
        mfcr_hat=mfcr_hat,
        mfcr_se=mfcr_se,
        pfcr_hat=pfcr_hat,
        pfcr_se=pfcr_se,
        fsr_hat=fsr_hat,
        fsr_se=fsr_se,
        mean_selected=mean_sel,
        mean_selected_se=mean_sel_se,
    )
