"""The online CI protocol: commit the level and rules, observe, report.

The API makes the predictability requirement structural: `commit()` returns
a single-use ticket fixing (time, level) before the observation exists, and
`observe(ticket, x)` refuses stale or reused tickets. Levels therefore never
depend on the current observation, and the selection history is the only
channel from past data into future levels.

Two interval modes:

  * lord_ci_marginal    - report the marginal rule at the committed LORD-CI
                          level (the sign-determining procedures report the
                          candidate interval itself);
  * conditional_at_nominal - report the truncated-normal conditional interval
                          at the global nominal level, with the truncation
                          region implied by the committed selection rule
                          (fixed cutoff, or the sign-determination cutoff of
                          the committed level for CI-driven selection).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .interval_rules import (
    Interval,
    MarginalRuleSpec,
    RuleKind,
    TruncationContext,
    TruncationShape,
    conditional_truncated_interval,
    marginal_interval,
    sign_cutoff,
)
from .scheduler import GammaSequence, LordCiScheduler, default_gamma
from .selection import (
    CompositeTest,
    FixedThreshold,
    Localization,
    RuleSpec,
    SignDetermining,
    decide,
    rule_spec_from_dict,
    rule_spec_to_dict,
)

__all__ = [
    "IntervalMode",
    "LORD_CI_MARGINAL",
    "CONDITIONAL_AT_NOMINAL",
    "ProtocolConfig",
    "StepOutcome",
    "RunLog",
    "ProtocolRun",
    "CommitTicket",
    "run_stream",
    "lordpp_testing_run",
    "TestingRun",
]


LORD_CI_MARGINAL = "lord_ci_marginal"
CONDITIONAL_AT_NOMINAL = "conditional_at_nominal"
IntervalMode = str


@dataclass(frozen=True)
class ProtocolConfig:
    alpha: float
    selection: RuleSpec
    w0: float | None = None
    interval_mode: IntervalMode = LORD_CI_MARGINAL
    report_rule: MarginalRuleSpec | None = None
    horizon: int | None = None
    gamma: GammaSequence = field(default_factory=default_gamma, compare=False, repr=False)

    def __post_init__(self):
        if self.interval_mode not in (LORD_CI_MARGINAL, CONDITIONAL_AT_NOMINAL):
            raise ValueError(f"unknown interval mode: {self.interval_mode}")
        if self.interval_mode == CONDITIONAL_AT_NOMINAL:
            if isinstance(self.selection, FixedThreshold):
                pass
            elif isinstance(self.selection, SignDetermining):
                if self.selection.null_value != 0.0:
                    raise ValueError(
                        "conditional law unavailable: sign-determining selection with a "
                        "nonzero null value has no truncated-normal conditional form here"
                    )
            else:
                raise ValueError(
                    "conditional law unavailable for this selection rule; supported: "
                    "fixed threshold, sign-determining about zero"
                )

    def reported_rule(self) -> MarginalRuleSpec:
        if self.report_rule is not None:
            return self.report_rule
        if isinstance(self.selection, (SignDetermining, Localization, CompositeTest)):
            return self.selection.rule
        return MarginalRuleSpec(RuleKind.SYMMETRIC)

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "w0": self.w0,
            "selection": rule_spec_to_dict(self.selection),
            "interval_mode": self.interval_mode,
        }
        if self.report_rule is not None:
            d["report_rule"] = self.report_rule.to_dict()
        if self.horizon is not None:
            d["horizon"] = self.horizon
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        known = {"alpha", "w0", "selection", "interval_mode", "report_rule", "horizon"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown keys in protocol config: {sorted(extra)}")
        return cls(
            alpha=float(d["alpha"]),
            w0=None if d.get("w0") is None else float(d["w0"]),
            selection=rule_spec_from_dict(d["selection"]),
            interval_mode=d.get("interval_mode", LORD_CI_MARGINAL),
            report_rule=(
                MarginalRuleSpec.from_dict(d["report_rule"]) if "report_rule" in d else None
            ),
            horizon=d.get("horizon"),
        )


@dataclass(frozen=True)
class StepOutcome:
    index: int
    level_committed: float
    selected: bool
    interval: Interval | None = None
    sign_decision: int = 0
    localized_index: int | None = None
    strict_negative: bool = False

    def __post_init__(self):
        if self.selected != (self.interval is not None):
            raise ValueError("an interval is reported exactly when selected")

    def to_json_dict(self) -> dict:
        d = {
            "index": self.index,
            "level": self.level_committed,
            "selected": self.selected,
            "sign": self.sign_decision,
        }
        if self.interval is not None:
            d["interval"] = self.interval.to_dict()
        if self.localized_index is not None:
            d["localized_index"] = self.localized_index
        if self.sign_decision == -1:
            d["strict_negative"] = self.strict_negative
        return d

    def csv_row(self) -> list[str]:
        def fmt(v: float) -> str:
            return f"{v:.17g}"

        lo = fmt(self.interval.lo) if self.interval is not None else ""
        hi = fmt(self.interval.hi) if self.interval is not None else ""
        return [
            str(self.index),
            fmt(self.level_committed),
            "1" if self.selected else "0",
            lo,
            hi,
            str(self.sign_decision),
            "" if self.localized_index is None else str(self.localized_index),
        ]


RUNLOG_CSV_HEADER = ["index", "level", "selected", "lo", "hi", "sign", "localized_index"]


@dataclass
class RunLog:
    outcomes: list[StepOutcome]
    final_state: dict

    def write_jsonl(self, fp: IO[str]) -> None:
        for o in self.outcomes:
            fp.write(json.dumps(o.to_json_dict(), sort_keys=True) + "\n")
        fp.write(json.dumps({"final_state": self.final_state}, sort_keys=True) + "\n")

    def write_csv(self, fp: IO[str]) -> None:
        w = csv.writer(fp)
        w.writerow(RUNLOG_CSV_HEADER)
        for o in self.outcomes:
            w.writerow(o.csv_row())

    @property
    def levels(self) -> list[float]:
        return [o.level_committed for o in self.outcomes]

    @property
    def selections(self) -> list[bool]:
        return [o.selected for o in self.outcomes]


@dataclass
class CommitTicket:
    index: int
    level: float
    _consumed: bool = False


class ProtocolRun:
    """One sequential protocol execution. Steps strictly alternate
    commit -> observe; the run owns its scheduler state."""

    def __init__(self, config: ProtocolConfig):
        self.config = config
        self._sched = LordCiScheduler(config.alpha, config.w0, config.gamma)
        self._open_ticket: CommitTicket | None = None
        self.outcomes: list[StepOutcome] = []

    @property
    def time(self) -> int:
        return self._sched.state.time

    def commit(self) -> CommitTicket:
        if self._open_ticket is not None:
            raise RuntimeError("commit called twice without an observation")
        level = self._sched.peek()
        self._open_ticket = CommitTicket(index=self.time, level=level)
        return self._open_ticket

    def observe(self, ticket: CommitTicket, x: float) -> StepOutcome:
        if ticket is not self._open_ticket or ticket._consumed:
            raise RuntimeError("stale or duplicate commit ticket")
        ticket._consumed = True
        self._open_ticket = None
        level = ticket.level
        outcome = decide(self.config.selection, x, level)
        interval: Interval | None = None
        if outcome.selected:
            interval = self._build_interval(x, level, outcome.interval)
        self._sched.advance(outcome.selected)

        sign = interval.sign_class() if interval is not None else 0
        strict_neg = False
        if sign == -1 and interval is not None:
            strict_neg = interval.hi < 0.0 or (interval.hi == 0.0 and interval.hi_open)
        step = StepOutcome(
            index=ticket.index,
            level_committed=level,
            selected=outcome.selected,
            interval=interval,
            sign_decision=sign,
            localized_index=outcome.localized_index,
            strict_negative=strict_neg,
        )
        self.outcomes.append(step)
        return step

    def _build_interval(
        self, x: float, level: float, candidate: Interval | None
    ) -> Interval:
        cfg = self.config
        if cfg.interval_mode == LORD_CI_MARGINAL:
            if candidate is not None and cfg.report_rule is None:
                return candidate
            return marginal_interval(cfg.reported_rule(), x, level)
        ctx = self._truncation_context(level)
        return conditional_truncated_interval(x, ctx, cfg.alpha)

    def _truncation_context(self, level: float) -> TruncationContext:
        sel = self.config.selection
        if isinstance(sel, FixedThreshold):
            shape = TruncationShape.TWO_SIDED if sel.two_sided else TruncationShape.RIGHT_TAIL
            return TruncationContext(shape, sel.threshold)
        assert isinstance(sel, SignDetermining)
        return TruncationContext(TruncationShape.TWO_SIDED, sign_cutoff(sel.rule, level))

    def finish(self) -> RunLog:
        return RunLog(outcomes=list(self.outcomes), final_state=self._sched.state.snapshot())


def run_stream(config: ProtocolConfig, observations: Iterable[float]) -> RunLog:
    """Fold commit/observe over a stream of observations."""
    run = ProtocolRun(config)
    for i, x in enumerate(observations, start=1):
        if config.horizon is not None and i > config.horizon:
            break
        ticket = run.commit()
        run.observe(ticket, float(x))
    return run.finish()


# ---------------------------------------------------------------------------
# LORD++ testing semantics (oracle for the selection equivalences)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestingRun:
    rejections: tuple[bool, ...]
    levels: tuple[float, ...]


def lordpp_testing_run(
    pvalues: Sequence[float],
    alpha: float,
    w0: float | None = None,
    gamma: GammaSequence | None = None,
) -> TestingRun:
    """Standard LORD++ online FDR testing: reject iff P_i <= alpha_i, with
    the same level scheduler driven by the rejection history."""
    sched = LordCiScheduler(alpha, w0, gamma)
    rejections: list[bool] = []
    levels: list[float] = []
    for p in pvalues:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"p-value outside [0, 1]: {p}")
        level = sched.peek()
        reject = p <= level
        sched.advance(reject)
        rejections.append(reject)
        levels.append(level)
    return TestingRun(tuple(rejections), tuple(levels))
