"""Declarative selection rules and the monotonicity audit harness.

A selection rule maps (x, committed level) -> SelectionOutcome. Rules that
look at the candidate interval (sign-determining, localization, composite
testing) are predictable because the interval rule and the level are; rules
must not peek at raw past observations, so nothing here takes a history.

A rule is *monotone* when a coordinatewise-larger selection history never
turns a selection into a non-selection. For level-respecting rules built on
nesting interval families this follows from the scheduler's monotone levels;
the audit below certifies it exhaustively on short histories and produces
witnesses when it fails (e.g. for deliberately non-nesting interval rules).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .interval_rules import (
    Interval,
    IntervalSet,
    MarginalRuleSpec,
    RuleKind,
    marginal_interval,
    sign_cutoff,
)
from ._normal import upper_quantile
from .scheduler import GammaSequence, default_gamma

__all__ = [
    "FixedThreshold",
    "SignDetermining",
    "Localization",
    "CompositeTest",
    "RuleSpec",
    "SelectionOutcome",
    "decide",
    "equivalent_pvalue_threshold",
    "monotonicity_audit",
    "AuditReport",
    "rule_spec_from_dict",
    "rule_spec_to_dict",
]


@dataclass(frozen=True)
class FixedThreshold:
    threshold: float
    two_sided: bool = False


@dataclass(frozen=True)
class SignDetermining:
    rule: MarginalRuleSpec
    null_value: float = 0.0
    # test hook: replaces the interval builder, e.g. with a non-nesting rule
    custom_builder: Callable[[float, float], Interval] | None = None

    def candidate(self, x: float, level: float) -> Interval:
        if self.custom_builder is not None:
            return self.custom_builder(x, level)
        return marginal_interval(self.rule, x, level)


@dataclass(frozen=True)
class Localization:
    targets: tuple[IntervalSet, ...]
    rule: MarginalRuleSpec = MarginalRuleSpec(RuleKind.SYMMETRIC)

    def __post_init__(self):
        for i, a in enumerate(self.targets):
            for b in self.targets[i + 1 :]:
                if not a.is_disjoint_from(b):
                    raise ValueError("localization targets must be pairwise disjoint")


@dataclass(frozen=True)
class CompositeTest:
    null_set: IntervalSet
    rule: MarginalRuleSpec = MarginalRuleSpec(RuleKind.SYMMETRIC)


RuleSpec = FixedThreshold | SignDetermining | Localization | CompositeTest


@dataclass(frozen=True)
class SelectionOutcome:
    selected: bool
    localized_index: int | None = None
    sign: int | None = None
    interval: Interval | None = None

    def __post_init__(self):
        if not self.selected and (self.localized_index is not None or self.sign is not None):
            raise ValueError("localization/sign outputs are only present on selection")


def decide(spec: RuleSpec, x: float, level: float) -> SelectionOutcome:
    """Evaluate the selection rule at the committed level."""
    if isinstance(spec, FixedThreshold):
        sel = abs(x) > spec.threshold if spec.two_sided else x > spec.threshold
        return SelectionOutcome(selected=sel)

    if isinstance(spec, SignDetermining):
        candidate = spec.candidate(x, level)
        shifted = _shift(candidate, -spec.null_value)
        sign = shifted.sign_class()
        if sign == 0:
            return SelectionOutcome(selected=False)
        # a sign call must never leave the null value strictly inside
        assert not (shifted.lo < 0.0 < shifted.hi)
        return SelectionOutcome(selected=True, sign=sign, interval=candidate)

    if isinstance(spec, Localization):
        candidate = marginal_interval(spec.rule, x, level)
        hits = [j for j, target in enumerate(spec.targets, start=1) if target.covers(candidate)]
        if len(hits) == 1:
            return SelectionOutcome(selected=True, localized_index=hits[0], interval=candidate)
        return SelectionOutcome(selected=False)

    if isinstance(spec, CompositeTest):
        candidate = marginal_interval(spec.rule, x, level)
        if not spec.null_set.intersects(candidate):
            return SelectionOutcome(selected=True, interval=candidate)
        return SelectionOutcome(selected=False)

    raise TypeError(f"unknown rule spec: {spec!r}")


def _shift(iv: Interval, offset: float) -> Interval:
    if iv.is_empty or offset == 0.0:
        return iv
    return Interval(iv.lo + offset, iv.hi + offset, iv.lo_open, iv.hi_open)


def equivalent_pvalue_threshold(spec: SignDetermining, level: float) -> float:
    """|x| cutoff with selection <=> |x| > cutoff, for the LORD++ equivalences.

    Only the symmetric (z_{a/2}) and one-sided (z_a) rules have the cutoff in
    closed form here; for MQC use the bisection audit instead.
    """
    if not isinstance(spec, SignDetermining):
        raise TypeError("equivalent_pvalue_threshold expects a SignDetermining spec")
    if spec.rule.kind is RuleKind.SYMMETRIC:
        return upper_quantile(level / 2.0)
    if spec.rule.kind is RuleKind.ONE_SIDED:
        return upper_quantile(level)
    raise ValueError("no closed-form cutoff; use bisection audit")


# ---------------------------------------------------------------------------
# Monotonicity audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditViolation:
    history_small: tuple[int, ...]
    history_large: tuple[int, ...]
    x: float
    level_small: float
    level_large: float


@dataclass(frozen=True)
class AuditReport:
    history_len: int
    rule_nesting: bool
    n_pairs_checked: int
    n_grid_points: int
    violations: tuple[AuditViolation, ...]

    @property
    def passed(self) -> bool:
        return not self.violations


def _levels_for_all_histories(
    length: int, alpha: float, w0: float, gamma: GammaSequence
) -> np.ndarray:
    """alpha_{length+1} for every bitmask history of the given length.

    Vectorized Protocol-1 evaluation: level = gamma_{i} W0
    + (alpha - W0) gamma_{i - tau_1} + alpha * sum_{k>=2} gamma_{i - tau_k}.
    """
    i = length + 1
    n = 1 << length
    if length == 0:
        return np.array([gamma(i) * w0])
    bits = ((np.arange(n)[:, None] >> np.arange(length)[None, :]) & 1).astype(float)
    g = np.array([gamma(i - j) for j in range(1, length + 1)])  # column j -> tau=j
    total = bits @ g
    first_tau = np.argmax(bits, axis=1)  # first selection position (0-based)
    any_sel = bits.sum(axis=1) > 0
    g_first = np.where(any_sel, g[first_tau], 0.0)
    rest = total - g_first
    return gamma(i) * w0 + (alpha - w0) * np.where(any_sel, g_first, 0.0) + alpha * rest


def monotonicity_audit(
    spec: RuleSpec,
    rule_nesting: bool,
    history_len: int,
    alpha: float = 0.1,
    w0: float | None = None,
    gamma: GammaSequence | None = None,
    grid: Sequence[float] | None = None,
    max_witnesses: int = 32,
) -> AuditReport:
    """Exhaustively replay every pair of coordinatewise-ordered selection
    histories up to the given length and assert S_i >= S~_i on a grid of
    observations. Violations are data, not errors.

    Orderedness over equal-length bit histories forms a lattice, and the
    selection indicator is monotone on the lattice iff it is monotone along
    single-bit covers, so only L * 2^L cover pairs per length are checked.
    """
    if history_len > 12:
        raise ValueError("exhaustive audit capped at history length 12")
    if w0 is None:
        w0 = alpha / 2.0
    if gamma is None:
        gamma = default_gamma()
    if grid is None:
        pts = list(np.linspace(-6.0, 6.0, 201))
        if isinstance(spec, FixedThreshold):
            pts += [spec.threshold - 1e-9, spec.threshold + 1e-9, -spec.threshold - 1e-9]
        grid = pts

    violations: list[AuditViolation] = []
    pairs = 0
    for length in range(0, history_len + 1):
        levels = _levels_for_all_histories(length, alpha, w0, gamma)
        n = 1 << length
        sel = np.empty((len(grid), n), dtype=bool)
        # selection depends on the history only through the level
        level_of = {}
        for h in range(n):
            level_of[h] = levels[h]
        uniq: dict[float, list[int]] = {}
        for h, lv in level_of.items():
            uniq.setdefault(lv, []).append(h)
        for gi, x in enumerate(grid):
            for lv, hs in uniq.items():
                s = decide(spec, float(x), float(lv)).selected
                for h in hs:
                    sel[gi, h] = s
        for bit in range(length):
            lower = np.arange(n) & ~(1 << bit)
            upper = lower | (1 << bit)
            mask = np.arange(n) == lower  # enumerate each cover pair once
            lo_idx = np.arange(n)[mask]
            hi_idx = upper[mask]
            pairs += len(lo_idx) * len(grid)
            bad = sel[:, lo_idx] & ~sel[:, hi_idx]
            if bad.any() and len(violations) < max_witnesses:
                gis, ks = np.where(bad)
                for gi, k in zip(gis, ks):
                    if len(violations) >= max_witnesses:
                        break
                    lo_h, hi_h = int(lo_idx[k]), int(hi_idx[k])
                    violations.append(
                        AuditViolation(
                            history_small=_bits(lo_h, length),
                            history_large=_bits(hi_h, length),
                            x=float(grid[gi]),
                            level_small=float(levels[lo_h]),
                            level_large=float(levels[hi_h]),
                        )
                    )
            elif bad.any():
                pass
    return AuditReport(
        history_len=history_len,
        rule_nesting=rule_nesting,
        n_pairs_checked=pairs,
        n_grid_points=len(grid),
        violations=tuple(violations),
    )


def _bits(h: int, length: int) -> tuple[int, ...]:
    return tuple((h >> j) & 1 for j in range(length))


# ---------------------------------------------------------------------------
# Serialization (config file format)
# ---------------------------------------------------------------------------


def rule_spec_to_dict(spec: RuleSpec) -> dict:
    if isinstance(spec, FixedThreshold):
        return {
            "kind": "fixed_threshold",
            "threshold": spec.threshold,
            "two_sided": spec.two_sided,
        }
    if isinstance(spec, SignDetermining):
        return {
            "kind": "sign_determining",
            "rule": spec.rule.to_dict(),
            "null_value": spec.null_value,
        }
    if isinstance(spec, Localization):
        return {
            "kind": "localization",
            "targets": [t.to_list() for t in spec.targets],
            "rule": spec.rule.to_dict(),
        }
    if isinstance(spec, CompositeTest):
        return {
            "kind": "composite_test",
            "null_set": spec.null_set.to_list(),
            "rule": spec.rule.to_dict(),
        }
    raise TypeError(f"unknown rule spec: {spec!r}")


def rule_spec_from_dict(d: dict) -> RuleSpec:
    kind = d.get("kind")
    known = {
        "fixed_threshold": {"kind", "threshold", "two_sided"},
        "sign_determining": {"kind", "rule", "null_value"},
        "localization": {"kind", "targets", "rule"},
        "composite_test": {"kind", "null_set", "rule"},
    }
    if kind not in known:
        raise ValueError(f"unknown selection kind: {kind!r}")
    extra = set(d) - known[kind]
    if extra:
        raise ValueError(f"unknown keys in selection spec: {sorted(extra)}")
    if kind == "fixed_threshold":
        return FixedThreshold(float(d["threshold"]), bool(d.get("two_sided", False)))
    if kind == "sign_determining":
        return SignDetermining(
            MarginalRuleSpec.from_dict(d["rule"]), float(d.get("null_value", 0.0))
        )
    rule = MarginalRuleSpec.from_dict(d["rule"]) if "rule" in d else MarginalRuleSpec(RuleKind.SYMMETRIC)
    if kind == "localization":
        targets = tuple(IntervalSet.from_list(t) for t in d["targets"])
        return Localization(targets, rule)
    return CompositeTest(IntervalSet.from_list(d["null_set"]), rule)
