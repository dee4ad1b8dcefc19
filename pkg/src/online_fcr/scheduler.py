"""Predictable level sequences: the LORD-CI update, alpha-spending, and the
decaying-memory variant.

The LORD-CI level for time i with selection times tau_1 < tau_2 < ... is

    alpha_i = gamma_i W0 + (alpha - W0) gamma_{i - tau_1}
              + alpha * sum_{k: tau_k < i, tau_k != tau_1} gamma_{i - tau_k},

with gamma_j = 0 for j <= 0. The sequence {gamma_j} is nonincreasing,
positive, and sums to at most one, so every prefix satisfies the budget
invariant  sum_{i<=T} alpha_i <= alpha * (sum_{i<=T} S_i  v  1): before the
first selection only the W0 gamma-mass is spent (< W0 < alpha), and each
selection opens one more gamma-tail worth at most alpha.

Levels are deterministic functions of (S_1..S_{i-1}, alpha, W0, gamma) only;
per-level and running sums use compensated (Kahan) addition so the budget
check stays exact to ~1e-12 over 1e4 steps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "GammaSequence",
    "default_gamma",
    "gamma_default",
    "default_gamma_tail_bound",
    "SchedulerState",
    "initial_state",
    "next_level",
    "mem_next_level",
    "record_decision",
    "alpha_spending_level",
    "LordCiScheduler",
]

_DEFAULT_GAMMA_SCALE = 0.0722


def _default_gamma_block(lo: int, hi: int) -> np.ndarray:
    """gamma_j = 0.0722 * ln(j v 2) / (j * e^{sqrt(ln j)}) for j in [lo, hi)."""
    j = np.arange(lo, hi, dtype=np.float64)
    return _DEFAULT_GAMMA_SCALE * np.log(np.maximum(j, 2.0)) / (j * np.exp(np.sqrt(np.log(j))))


def gamma_default(j: int) -> float:
    """Single default-sequence weight; 0 for j <= 0 per the extension rule."""
    if j <= 0:
        return 0.0
    return float(_default_gamma_block(j, j + 1)[0])


def default_gamma_tail_bound(m: int) -> float:
    """Analytic bound on sum_{j > m} gamma_j for the default sequence.

    The summand is decreasing for j >= 2, so the tail is at most the integral
    of 0.0722 ln x / (x e^{sqrt(ln x)}), which substitutes to
    0.0722 * 2 * Gamma(4, sqrt(ln m)) with the upper incomplete gamma in
    closed form for integer shape.
    """
    if m < 2:
        raise ValueError("tail bound needs m >= 2")
    v = math.sqrt(math.log(m))
    upper_inc = (v**3 + 3 * v**2 + 6 * v + 6) * math.exp(-v)
    return _DEFAULT_GAMMA_SCALE * 2.0 * upper_inc


class GammaSequence:
    """Nonincreasing nonnegative weights gamma_1, gamma_2, ... summing to <= 1.

    Weights are memoized in a numpy table that doubles on demand; the same
    table object backs the fast simulation lane, so both lanes read
    bit-identical values. gamma(j) is 0 for j <= 0.
    """

    def __init__(
        self,
        weights: Callable[[np.ndarray], np.ndarray] | None = None,
        normalization: float = 1.0,
        validate_horizon: int = 10_000,
    ):
        self._block = weights if weights is not None else (
            lambda lo, hi: _default_gamma_block(lo, hi)
        )
        self.normalization = float(normalization)
        self._table = np.concatenate([[0.0], self._block(1, 1025)])
        self._validate(validate_horizon)

    def _validate(self, horizon: int) -> None:
        self._ensure(min(horizon, 1 << 22))
        t = self._table[1:]
        if np.any(t < 0):
            raise ValueError("gamma weights must be nonnegative")
        if np.any(np.diff(t) > 0):
            raise ValueError("gamma weights must be nonincreasing")
        if float(t.sum()) > self.normalization + 1e-12:
            raise ValueError("gamma partial sum exceeds the normalization cap")

    def _ensure(self, n: int) -> None:
        cur = len(self._table) - 1
        if n <= cur:
            return
        new = max(n, 2 * cur)
        self._table = np.concatenate([self._table, self._block(cur + 1, new + 1)])

    def __call__(self, j: int) -> float:
        if j <= 0:
            return 0.0
        self._ensure(j)
        return float(self._table[j])

    def table(self, n: int) -> np.ndarray:
        """Read-only view of [gamma_0 .. gamma_n] with gamma_0 = 0."""
        self._ensure(n)
        view = self._table[: n + 1]
        view.flags.writeable = False
        return view

    def partial_sum(self, n: int) -> float:
        self._ensure(n)
        return float(self._table[1 : n + 1].sum())


def default_gamma() -> GammaSequence:
    return GammaSequence()


# ---------------------------------------------------------------------------
# Scheduler state and transitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchedulerState:
    """Value state of the level scheduler at the start of time `time`.

    history holds S_1..S_{time-1}; selection_times are its 1-positions.
    spent/spent_c form a Kahan pair for sum of issued levels.
    """

    alpha: float
    w0: float
    time: int = 1
    selection_times: tuple[int, ...] = ()
    spent: float = 0.0
    spent_c: float = 0.0
    history: tuple[int, ...] = ()
    gamma: GammaSequence = field(default_factory=default_gamma, compare=False, repr=False)

    def snapshot(self) -> dict:
        """JSON-serializable suspend/resume snapshot (levels are a pure
        function of these fields plus the gamma choice)."""
        return {
            "alpha": self.alpha,
            "w0": self.w0,
            "time": self.time,
            "selection_times": list(self.selection_times),
            "spent": self.spent,
        }

    @classmethod
    def restore(cls, snap: dict, gamma: GammaSequence | None = None) -> "SchedulerState":
        times = tuple(int(t) for t in snap["selection_times"])
        time = int(snap["time"])
        sel = set(times)
        history = tuple(1 if i in sel else 0 for i in range(1, time))
        return cls(
            alpha=float(snap["alpha"]),
            w0=float(snap["w0"]),
            time=time,
            selection_times=times,
            spent=float(snap["spent"]),
            spent_c=0.0,
            history=history,
            gamma=gamma if gamma is not None else default_gamma(),
        )


def initial_state(
    alpha: float, w0: float | None = None, gamma: GammaSequence | None = None
) -> SchedulerState:
    """Fresh state; W0 defaults to alpha/2 and must satisfy 0 < W0 < alpha."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if w0 is None:
        w0 = alpha / 2.0
    if not (0.0 < w0 < alpha):
        raise ValueError(f"W0 must lie in (0, alpha), got {w0}")
    return SchedulerState(
        alpha=float(alpha), w0=float(w0), gamma=gamma if gamma is not None else default_gamma()
    )


def _kahan_add(total: float, comp: float, term: float) -> tuple[float, float]:
    y = term - comp
    t = total + y
    comp = (t - total) - y
    return t, comp


def next_level(state: SchedulerState) -> float:
    """The level alpha_i for the current time; the state is not changed."""
    i = state.time
    g = state.gamma
    taus = state.selection_times
    acc = 0.0
    comp = 0.0
    for tau in taus[1:]:
        acc, comp = _kahan_add(acc, comp, g(i - tau))
    first = g(i - taus[0]) if taus else 0.0
    return g(i) * state.w0 + (state.alpha - state.w0) * first + state.alpha * acc


def mem_next_level(state: SchedulerState, decay: float) -> float:
    """Decaying-memory LORD-CI level.

    Every wealth term is discounted by its age: the initial-wealth term by
    decay^{i-1} and each selection credit by decay^{i-tau_k}. With this
    placement the decayed budget invariant

        sum_{i<=T} d^{T-i} alpha_i <= alpha * ((sum d^{T-tau_k}) v d^{T-1})

    holds pathwise, and decay = 1 reproduces next_level exactly.
    """
    if not (0.0 < decay <= 1.0):
        raise ValueError(f"decay must lie in (0, 1], got {decay}")
    i = state.time
    g = state.gamma
    taus = state.selection_times
    acc = 0.0
    comp = 0.0
    for tau in taus[1:]:
        acc, comp = _kahan_add(acc, comp, decay ** (i - tau) * g(i - tau))
    first = decay ** (i - taus[0]) * g(i - taus[0]) if taus else 0.0
    w0_term = decay ** (i - 1) * g(i) * state.w0
    return w0_term + (state.alpha - state.w0) * first + state.alpha * acc


def record_decision(state: SchedulerState, selected: bool) -> SchedulerState:
    """Consume the current time step: append S_i, advance the clock, and add
    the level that was issued for this step to the spent total."""
    level = next_level(state)
    spent, spent_c = _kahan_add(state.spent, state.spent_c, level)
    i = state.time
    return replace(
        state,
        time=i + 1,
        selection_times=state.selection_times + ((i,) if selected else ()),
        spent=spent,
        spent_c=spent_c,
        history=state.history + (1 if selected else 0,),
    )


def alpha_spending_level(j: int, alpha: float, gamma: GammaSequence) -> float:
    """Fixed-sequence level alpha * gamma_j (familywise-miscoverage control)."""
    if j < 1:
        raise ValueError(f"alpha-spending index must be >= 1, got {j}")
    return alpha * gamma(j)


class LordCiScheduler:
    """Stateful convenience wrapper enforcing the peek-then-advance discipline.

    peek() commits the level for the current time; advance(selected) consumes
    it. Advancing without a peek, or advancing twice for the same time index,
    raises - this is the structural form of the predictability contract.
    """

    def __init__(self, alpha: float, w0: float | None = None, gamma: GammaSequence | None = None):
        self.state = initial_state(alpha, w0, gamma)
        self._peeked: float | None = None

    def peek(self) -> float:
        if self._peeked is None:
            self._peeked = next_level(self.state)
        return self._peeked

    def advance(self, selected: bool) -> float:
        if self._peeked is None:
            raise RuntimeError("double advance: level for this time was never committed")
        level = self._peeked
        self._peeked = None
        self.state = record_decision(self.state, selected)
        return level

    def snapshot_json(self) -> str:
        return json.dumps(self.state.snapshot(), sort_keys=True)

    @classmethod
    def from_snapshot_json(
        cls, text: str, gamma: GammaSequence | None = None
    ) -> "LordCiScheduler":
        snap = json.loads(text)
        sched = cls.__new__(cls)
        sched.state = SchedulerState.restore(snap, gamma)
        sched._peeked = None
        return sched
