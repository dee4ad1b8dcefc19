"""Distribution-free prediction intervals and their selective reporting.

Full conformal: for a candidate response y, refit on the training set plus
(x_new, y) and keep y iff the conformal p-value
#{i : r_i >= r_new} / (n+1) exceeds the level (ties counted as >=, the
conservative direction). The reported interval is the smallest interval
containing all kept grid points; a non-contiguous kept set is returned as
its convex hull with a warning (valid, possibly conservative).

Both shipped predictors (k-nearest-neighbor mean, ridge) are linear
smoothers, so the n+1 residuals are affine in the hallucinated y and the
whole grid is scored with two fits; a generic refit-per-y path covers
arbitrary predictors and is used to cross-check the affine path in tests.

Split conformal: fit on the first fraction, then
prediction +- the ceil((1-level)(n_cal+1))-th smallest calibration
|residual|. When that index exceeds n_cal the finite-sample-valid interval
is the whole line; the scalar API treats this as an error, while the
selective stream (where tiny committed levels are routine) reports the
unbounded interval, which is trivially valid and never selected by
width-style rules.

Selective stream: per test point, commit a LORD-CI level, build the
conformal interval at that level, and report it only if the selection rule
fires; the FCR guarantee carries over with Y_i in place of the parameter.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .interval_rules import Interval
from .protocol import RunLog, StepOutcome
from .scheduler import GammaSequence, LordCiScheduler

__all__ = [
    "TrainingSet",
    "KNearestMean",
    "RidgeLinear",
    "ConformalConfig",
    "YGrid",
    "full_conformal_interval",
    "split_conformal_interval",
    "WidthBudget",
    "ExcludesValue",
    "LocalityBall",
    "selective_conformal_stream",
    "SelectiveConformalResult",
    "load_training_csv",
]


@dataclass(frozen=True)
class TrainingSet:
    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape[0] != y.shape[0] or x.shape[0] == 0:
            raise ValueError("training set must be nonempty with matching x/y lengths")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]


def load_training_csv(path: str) -> TrainingSet:
    """CSV with a header row; every column but the last is a feature."""
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        next(reader)  # header
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError("training CSV needs at least one feature column plus y")
    return TrainingSet(arr[:, :-1], arr[:, -1])


# ---------------------------------------------------------------------------
# Predictors (linear smoothers)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KNearestMean:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def hat_matrix(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.k > n:
            raise ValueError(f"k={self.k} exceeds the {n} available points")
        d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
        order = np.argsort(d, axis=1, kind="stable")  # stable: permutation-invariant ties
        H = np.zeros((n, n))
        rows = np.repeat(np.arange(n), self.k)
        cols = order[:, : self.k].ravel()
        H[rows, cols] = 1.0 / self.k
        return H

    def fit(self, x: np.ndarray, y: np.ndarray):
        H = self.hat_matrix(x)
        train_x = x.copy()

        def predict(xq: np.ndarray) -> np.ndarray:
            xq = np.atleast_2d(xq)
            d = np.linalg.norm(xq[:, None, :] - train_x[None, :, :], axis=2)
            order = np.argsort(d, axis=1, kind="stable")[:, : self.k]
            return y[order].mean(axis=1)

        predict.fitted = H @ y
        return predict


@dataclass(frozen=True)
class RidgeLinear:
    lam: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("ridge penalty must be nonnegative")

    def _design(self, x: np.ndarray) -> np.ndarray:
        return np.column_stack([np.ones(x.shape[0]), x])

    def hat_matrix(self, x: np.ndarray) -> np.ndarray:
        A = self._design(x)
        D = np.eye(A.shape[1])
        D[0, 0] = 0.0  # intercept unpenalized
        M = np.linalg.solve(A.T @ A + self.lam * D, A.T)
        return A @ M

    def fit(self, x: np.ndarray, y: np.ndarray):
        A = self._design(x)
        D = np.eye(A.shape[1])
        D[0, 0] = 0.0
        beta = np.linalg.solve(A.T @ A + self.lam * D, A.T @ y)

        def predict(xq: np.ndarray) -> np.ndarray:
            xq = np.atleast_2d(xq)
            return self._design(xq) @ beta

        predict.fitted = A @ beta
        return predict


Predictor = KNearestMean | RidgeLinear


@dataclass(frozen=True)
class YGrid:
    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        if self.steps < 3:
            raise ValueError("y grid needs at least 3 steps")
        if not (self.lo < self.hi):
            raise ValueError("y grid must have lo < hi")

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class ConformalConfig:
    predictor: Predictor
    y_grid: YGrid | None = None
    mode: str = "split"  # "split" | "full"
    train_fraction: float = 0.5

    def __post_init__(self):
        if self.mode not in ("split", "full"):
            raise ValueError(f"unknown conformal mode: {self.mode}")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie strictly inside (0, 1)")
        if self.mode == "full" and self.y_grid is None:
            raise ValueError("full conformal requires a y grid")


# ---------------------------------------------------------------------------
# Full conformal
# ---------------------------------------------------------------------------


def _full_conformal_included(
    train: TrainingSet, x_new: np.ndarray, level: float, cfg: ConformalConfig, exact: bool
) -> tuple[np.ndarray, np.ndarray]:
    ys = cfg.y_grid.values()
    x_aug = np.vstack([train.x, np.atleast_2d(x_new)])
    n1 = train.n + 1
    if exact:
        included = np.empty(len(ys), dtype=bool)
        for j, y in enumerate(ys):
            y_aug = np.concatenate([train.y, [y]])
            pred = cfg.predictor.fit(x_aug, y_aug)
            r = np.abs(y_aug - pred.fitted)
            pval = np.sum(r >= r[-1]) / n1
            included[j] = pval > level
        return ys, included
    # affine path: residuals r_i(y) = |a_i + b_i * y| for linear smoothers
    H = cfg.predictor.hat_matrix(x_aug)
    e = np.zeros(n1)
    y0 = np.concatenate([train.y, [0.0]])
    a = y0 - H @ y0
    e[-1] = 1.0
    b = e - H @ e
    r = np.abs(a[None, :] + np.outer(ys, b))  # (grid, n1)
    pvals = np.sum(r >= r[:, -1:], axis=1) / n1
    return ys, pvals > level


def full_conformal_interval(
    train: TrainingSet,
    x_new,
    level: float,
    cfg: ConformalConfig,
    exact: bool = False,
) -> Interval:
    """Smallest interval containing the kept grid values (closed endpoints).

    Warns when the kept set is non-contiguous (hull returned) and when it
    touches a grid boundary (the true interval may extend beyond the grid).
    """
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must lie in (0, 1), got {level}")
    x_new = np.atleast_1d(np.asarray(x_new, dtype=float))
    ys, included = _full_conformal_included(train, x_new, level, cfg, exact)
    if not included.any():
        # keep the best-supported single grid point rather than claiming empty
        warnings.warn("full conformal kept no grid point; grid too coarse for this level")
        j = len(ys) // 2
        return Interval(float(ys[j]), float(ys[j]), False, False)
    idx = np.where(included)[0]
    if np.any(np.diff(idx) > 1):
        warnings.warn("non-contiguous conformal inclusion set; returning the convex hull")
    if included[0] or included[-1]:
        warnings.warn("conformal interval touches the y-grid boundary; widen the grid")
    lo, hi = float(ys[idx[0]]), float(ys[idx[-1]])
    if lo == hi:
        return Interval(lo, hi, False, False)
    return Interval(lo, hi, False, False)


# ---------------------------------------------------------------------------
# Split conformal
# ---------------------------------------------------------------------------


def _split_fit(train: TrainingSet, cfg: ConformalConfig):
    n_fit = int(math.floor(cfg.train_fraction * train.n))
    if n_fit < 1 or n_fit >= train.n:
        raise ValueError("both split halves must be nonempty")
    pred = cfg.predictor.fit(train.x[:n_fit], train.y[:n_fit])
    resid = np.sort(np.abs(train.y[n_fit:] - pred(train.x[n_fit:])))
    return pred, resid


def _split_radius(resid: np.ndarray, level: float) -> float:
    n_cal = len(resid)
    k = math.ceil((1.0 - level) * (n_cal + 1))
    if k > n_cal:
        return math.inf
    return float(resid[k - 1])


def split_conformal_interval(
    train: TrainingSet, x_new, level: float, cfg: ConformalConfig
) -> Interval:
    """prediction +- the ceil((1-level)(n_cal+1))-th smallest |residual|."""
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must lie in (0, 1), got {level}")
    pred, resid = _split_fit(train, cfg)
    q = _split_radius(resid, level)
    if math.isinf(q):
        raise ValueError(
            f"calibration half too small for the quantile index: need "
            f"ceil((1-level)*(n_cal+1)) <= n_cal = {len(resid)}"
        )
    mu = float(pred(np.atleast_2d(np.asarray(x_new, dtype=float)))[0])
    return Interval(mu - q, mu + q, False, False)


# ---------------------------------------------------------------------------
# Selective conformal streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WidthBudget:
    max_width: float


@dataclass(frozen=True)
class ExcludesValue:
    value: float = 0.0


@dataclass(frozen=True)
class LocalityBall:
    """Select when the test point falls within `radius` of `center` - the
    epsilon-ball selection whose shrinking radius degenerates the levels."""

    center: np.ndarray
    radius: float


IntervalSelection = WidthBudget | ExcludesValue | LocalityBall


@dataclass
class SelectiveConformalResult:
    log: RunLog
    miscovered: np.ndarray | None  # per selected step, when y_true was given
    selected_widths: np.ndarray


def selective_conformal_stream(
    train: TrainingSet,
    test_x: np.ndarray,
    selection: IntervalSelection,
    alpha: float,
    w0: float | None = None,
    cfg: ConformalConfig | None = None,
    y_true: Sequence[float] | None = None,
    gamma: GammaSequence | None = None,
) -> SelectiveConformalResult:
    """Commit a LORD-CI level per test point, build the split/full conformal
    interval at that level, and report it when the selection rule fires."""
    if cfg is None:
        cfg = ConformalConfig(RidgeLinear())
    test_x = np.atleast_2d(np.asarray(test_x, dtype=float))
    sched = LordCiScheduler(alpha, w0, gamma)

    pred = resid = None
    if cfg.mode == "split":
        pred, resid = _split_fit(train, cfg)

    outcomes: list[StepOutcome] = []
    miscov: list[bool] = []
    widths: list[float] = []
    for i in range(test_x.shape[0]):
        level = sched.peek()
        if cfg.mode == "split":
            q = _split_radius(resid, level)
            mu = float(pred(test_x[i : i + 1])[0])
            iv = Interval(mu - q, mu + q, False, False) if math.isfinite(q) else None
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                iv = full_conformal_interval(train, test_x[i], level, cfg)

        if isinstance(selection, LocalityBall):
            sel = bool(
                np.linalg.norm(test_x[i] - np.atleast_1d(selection.center)) <= selection.radius
            )
        elif iv is None:
            sel = False  # unbounded candidate: no width/value selection can fire
        elif isinstance(selection, WidthBudget):
            sel = iv.width <= selection.max_width
        else:
            sel = not iv.contains(selection.value)

        sched.advance(sel)
        reported = iv if sel else None
        if sel and reported is None:
            reported = Interval(-math.inf, math.inf, True, True)
        outcomes.append(
            StepOutcome(
                index=i + 1,
                level_committed=level,
                selected=sel,
                interval=reported,
                sign_decision=reported.sign_class() if reported is not None else 0,
            )
        )
        if sel:
            widths.append(reported.width)
            if y_true is not None:
                miscov.append(not reported.contains(float(y_true[i])))

    log = RunLog(outcomes=outcomes, final_state=sched.state.snapshot())
    return SelectiveConformalResult(
        log=log,
        miscovered=np.asarray(miscov, dtype=bool) if y_true is not None else None,
        selected_widths=np.asarray(widths, dtype=float),
    )
