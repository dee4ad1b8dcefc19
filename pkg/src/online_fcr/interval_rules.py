"""Confidence interval rules for N(theta, 1) observations.

Three marginal rules (symmetric two-sided, one-sided, MQC) plus the
conditional interval obtained by inverting shortest acceptance regions of
the truncated normal, and the CI-derived p-value.

Marginal validity means P_theta{theta not in I(X, a)} <= a for every theta
and every level a. All three marginal rules are *nesting*: I(x, a2) is
contained in I(x, a1) whenever a1 < a2.

The MQC rule here is a contract implementation, not a transcription of a
published formula: it is the intersection of two independently valid
components with a fixed level split,

    core(x, (1-psi)*a)  --  the symmetric interval widened to a constant
                            superset for |x| <= MQC_PIVOT, and
    sign(x, psi*a)      --  (0, inf) if x > z_{psi*a}, (-inf, 0] if
                            x < -z_{psi*a}, the whole line otherwise,

so marginal coverage >= 1-a holds for every theta by a union bound, the
rule is nesting in a (both components are, and the split is fixed), the
sign-determination threshold is z_{psi*a} which lies strictly between
z_a and z_{a/2} for psi in (0.5, 1), the endpoints are constant in a
neighborhood of x = 0, and both endpoints grow linearly for |x| large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from scipy.special import log_ndtr, ndtri_exp

from ._normal import check_level, norm_isf, norm_sf, upper_quantile

__all__ = [
    "Interval",
    "EMPTY",
    "IntervalSet",
    "RuleKind",
    "MarginalRuleSpec",
    "TruncationContext",
    "symmetric_interval",
    "one_sided_interval",
    "mqc_interval",
    "marginal_interval",
    "sign_cutoff",
    "conditional_truncated_interval",
    "truncated_halfwidth",
    "ci_pvalue",
    "ConvergenceError",
    "MQC_PIVOT",
]

# Half-width of the MQC constant-shape zone around x = 0. Any positive value
# below the sign cutoff keeps the contract; it is a shape knob, not a level.
MQC_PIVOT = 0.5

_INF = math.inf


class ConvergenceError(RuntimeError):
    """Numeric inversion failed; carries diagnostic context in args."""


# ---------------------------------------------------------------------------
# Interval values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """A real interval with per-endpoint openness flags.

    Degenerate points require both endpoints closed. The empty set is the
    distinct singleton EMPTY, never an open degenerate pair.
    """

    lo: float
    hi: float
    lo_open: bool = True
    hi_open: bool = True

    def __post_init__(self):
        if self.lo > self.hi and not self._is_canonical_empty():
            raise ValueError(f"interval endpoints out of order: ({self.lo}, {self.hi})")
        if self.lo == self.hi and (self.lo_open or self.hi_open):
            raise ValueError("degenerate interval must be closed on both sides")
        if math.isinf(self.lo) and self.lo < 0 and not self.lo_open and not self._is_canonical_empty():
            raise ValueError("-inf endpoint must be open")
        if math.isinf(self.hi) and self.hi > 0 and not self.hi_open:
            raise ValueError("+inf endpoint must be open")
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoints must not be NaN")

    def _is_canonical_empty(self) -> bool:
        return self.lo == _INF and self.hi == -_INF

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    def contains(self, v: float) -> bool:
        if self.is_empty:
            return False
        if v < self.lo or (v == self.lo and self.lo_open):
            return False
        if v > self.hi or (v == self.hi and self.hi_open):
            return False
        return True

    def is_subset_of(self, other: "Interval") -> bool:
        if self.is_empty:
            return True
        if other.is_empty:
            return False
        if self.lo == self.hi:  # degenerate point
            return other.contains(self.lo)
        lo_ok = self.lo > other.lo or (
            self.lo == other.lo and (self.lo_open or not other.lo_open)
        )
        hi_ok = self.hi < other.hi or (
            self.hi == other.hi and (self.hi_open or not other.hi_open)
        )
        return lo_ok and hi_ok

    def intersect(self, other: "Interval") -> "Interval":
        if self.is_empty or other.is_empty:
            return EMPTY
        if self.lo > other.lo:
            lo, lo_open = self.lo, self.lo_open
        elif self.lo < other.lo:
            lo, lo_open = other.lo, other.lo_open
        else:
            lo, lo_open = self.lo, self.lo_open or other.lo_open
        if self.hi < other.hi:
            hi, hi_open = self.hi, self.hi_open
        elif self.hi > other.hi:
            hi, hi_open = other.hi, other.hi_open
        else:
            hi, hi_open = self.hi, self.hi_open or other.hi_open
        if lo > hi or (lo == hi and (lo_open or hi_open)):
            return EMPTY
        return Interval(lo, hi, lo_open, hi_open)

    def intersects(self, other: "Interval") -> bool:
        return not self.intersect(other).is_empty

    @property
    def width(self) -> float:
        if self.is_empty:
            return 0.0
        return self.hi - self.lo

    def contains_both_signs(self) -> bool:
        """True when the interval has elements on both sides of zero."""
        return (not self.is_empty) and self.lo < 0.0 < self.hi

    def sign_class(self) -> int:
        """+1 if subset of (0, inf), -1 if subset of (-inf, 0], else 0."""
        if self.is_empty:
            return 0
        if self.is_subset_of(POSITIVE_HALF_LINE):
            return 1
        if self.is_subset_of(NONPOSITIVE_HALF_LINE):
            return -1
        return 0

    def to_dict(self) -> dict:
        def enc(v: float):
            if v == _INF:
                return "inf"
            if v == -_INF:
                return "-inf"
            return v

        return {
            "lo": enc(self.lo),
            "hi": enc(self.hi),
            "lo_open": self.lo_open,
            "hi_open": self.hi_open,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Interval":
        def dec(v):
            if v in ("inf", "Infinity"):
                return _INF
            if v in ("-inf", "-Infinity"):
                return -_INF
            if v is None:
                raise ValueError("interval endpoint must not be null; use 'inf'/'-inf'")
            return float(v)

        return cls(dec(d["lo"]), dec(d["hi"]), bool(d["lo_open"]), bool(d["hi_open"]))


EMPTY = Interval(_INF, -_INF, True, True)
REAL_LINE = Interval(-_INF, _INF, True, True)
POSITIVE_HALF_LINE = Interval(0.0, _INF, True, True)
NONPOSITIVE_HALF_LINE = Interval(-_INF, 0.0, True, False)


class IntervalSet:
    """A finite union of intervals, used for localization targets and
    composite null sets. Components are kept as given (no merging)."""

    def __init__(self, components: Iterable[Interval]):
        self.components: tuple[Interval, ...] = tuple(
            c for c in components if not c.is_empty
        )

    def contains(self, v: float) -> bool:
        return any(c.contains(v) for c in self.components)

    def intersects(self, iv: Interval) -> bool:
        return any(c.intersects(iv) for c in self.components)

    def covers(self, iv: Interval) -> bool:
        """Whether iv is a subset of this set.

        An interval is connected, so it is covered iff it fits inside a
        single component (components of one target are assumed non-abutting;
        an interval touching a shared boundary of two components of the same
        target would be missed, which only errs toward non-selection).
        """
        return any(iv.is_subset_of(c) for c in self.components)

    def is_disjoint_from(self, other: "IntervalSet") -> bool:
        return not any(other.intersects(c) for c in self.components)

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.components]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "IntervalSet":
        return cls(Interval.from_dict(d) for d in items)

    def __len__(self) -> int:
        return len(self.components)


# ---------------------------------------------------------------------------
# Marginal rules
# ---------------------------------------------------------------------------


class RuleKind(str, Enum):
    SYMMETRIC = "symmetric"
    ONE_SIDED = "one_sided"
    MQC = "mqc"


@dataclass(frozen=True)
class MarginalRuleSpec:
    kind: RuleKind
    psi: float | None = None

    def __post_init__(self):
        if self.kind is RuleKind.MQC:
            psi = 0.7 if self.psi is None else self.psi
            if not (0.5 < psi < 1.0):
                raise ValueError(f"MQC psi must lie in (0.5, 1), got {psi}")
            object.__setattr__(self, "psi", float(psi))
        elif self.psi is not None:
            raise ValueError(f"psi is only meaningful for the MQC rule, got kind={self.kind}")

    def to_dict(self) -> dict:
        d = {"rule": self.kind.value}
        if self.kind is RuleKind.MQC:
            d["psi"] = self.psi
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalRuleSpec":
        extra = set(d) - {"rule", "psi"}
        if extra:
            raise ValueError(f"unknown keys in rule spec: {sorted(extra)}")
        kind = RuleKind(d["rule"])
        return cls(kind, d.get("psi"))


def _open_or_empty(lo: float, hi: float, lo_open: bool = True, hi_open: bool = True) -> Interval:
    """Interval constructor that collapses inverted/degenerate-open pairs to
    EMPTY instead of raising; needed when quantiles go nonpositive at levels
    >= 1/2 (the p-value bisection probes the whole level range)."""
    if lo > hi or (lo == hi and (lo_open or hi_open)):
        return EMPTY
    return Interval(lo, hi, lo_open, hi_open)


def symmetric_interval(x: float, level: float) -> Interval:
    """The usual open symmetric interval (x - z_{a/2}, x + z_{a/2})."""
    level = check_level(level)
    _check_obs(x)
    z = float(upper_quantile(level / 2.0))
    return Interval(x - z, x + z, True, True)


def one_sided_interval(x: float, level: float) -> Interval:
    """Piecewise one-sided interval.

    Central branch (x - z_a, x + z_a) for |x| < z_a, and the zero-touching
    branches (0, x + z_a) / (x - z_a, 0] outside. Ties |x| == z_a go to the
    central branch, which keeps the rule monotone in the level. For levels
    >= 1/2 the quantile is nonpositive and the interval degenerates to EMPTY,
    the nesting-consistent extension.
    """
    level = check_level(level)
    _check_obs(x)
    z = float(upper_quantile(level))
    if x > z:
        return _open_or_empty(0.0, x + z, True, True)
    if x < -z:
        return _open_or_empty(x - z, 0.0, True, False)
    return _open_or_empty(x - z, x + z, True, True)


def mqc_interval(x: float, level: float, psi: float = 0.7) -> Interval:
    """Contract-based MQC interval; see the module docstring.

    The sign-determination cutoff is z_{psi*level}; the core component pays
    (1-psi)*level split across two tails, so its half-width exceeds the
    plain z_{level/2} - the price of earlier sign determination.
    """
    level = check_level(level)
    _check_obs(x)
    if not (0.5 < psi < 1.0):
        raise ValueError(f"MQC psi must lie in (0.5, 1), got {psi}")
    z_core = float(upper_quantile((1.0 - psi) * level / 2.0))
    # clamp: for psi*level >= 1/2 the component pins at the origin, which
    # keeps the family nested (and remains valid: P_theta(X > 0) <= 1/2
    # for theta <= 0)
    z_sign = max(0.0, float(upper_quantile(psi * level)))
    if abs(x) <= MQC_PIVOT:
        core = Interval(-(MQC_PIVOT + z_core), MQC_PIVOT + z_core, True, True)
    else:
        core = Interval(x - z_core, x + z_core, True, True)
    if x > z_sign:
        sign = POSITIVE_HALF_LINE
    elif x < -z_sign:
        sign = NONPOSITIVE_HALF_LINE
    else:
        sign = REAL_LINE
    return core.intersect(sign)


def marginal_interval(spec: MarginalRuleSpec, x: float, level: float) -> Interval:
    if spec.kind is RuleKind.SYMMETRIC:
        return symmetric_interval(x, level)
    if spec.kind is RuleKind.ONE_SIDED:
        return one_sided_interval(x, level)
    return mqc_interval(x, level, spec.psi)


def sign_cutoff(spec: MarginalRuleSpec, level: float) -> float:
    """|x| threshold at which the rule's interval becomes sign-determining.

    symmetric: z_{a/2} (inclusive: the open interval (0, 2z) at x = z is
    already a subset of (0, inf)); one_sided: z_a (exclusive, ties go to the
    central branch); mqc: z_{psi*a} (exclusive).
    """
    level = check_level(level)
    if spec.kind is RuleKind.SYMMETRIC:
        return upper_quantile(level / 2.0)
    if spec.kind is RuleKind.ONE_SIDED:
        return upper_quantile(level)
    return max(0.0, upper_quantile(spec.psi * level))


def _check_obs(x: float) -> None:
    if not math.isfinite(x):
        raise ValueError(f"observation must be finite, got {x!r}")


# ---------------------------------------------------------------------------
# Conditional (truncated normal) rule
# ---------------------------------------------------------------------------


class TruncationShape(str, Enum):
    RIGHT_TAIL = "right_tail"  # conditioning event {X > c}
    TWO_SIDED = "two_sided"  # conditioning event {|X| > c}


@dataclass(frozen=True)
class TruncationContext:
    shape: TruncationShape
    cutoff: float

    def __post_init__(self):
        if not math.isfinite(self.cutoff):
            raise ValueError("truncation cutoff must be finite")

    def contains(self, x: float) -> bool:
        if self.shape is TruncationShape.RIGHT_TAIL:
            return x > self.cutoff
        return abs(x) > self.cutoff

    def to_dict(self) -> dict:
        return {"shape": self.shape.value, "cutoff": self.cutoff}

    @classmethod
    def from_dict(cls, d: dict) -> "TruncationContext":
        return cls(TruncationShape(d["shape"]), float(d["cutoff"]))


def _isf_chain(log_p: float) -> float:
    """Upper quantile from a log tail probability, safe for tiny tails."""
    return -float(ndtri_exp(log_p))


def _halfwidth_right_tail(theta: float, c: float, level: float) -> float:
    """Half-width s(theta) of the shortest acceptance region
    [theta - s, theta + s] ∩ (c, inf) holding conditional mass 1 - level.

    Two exact regimes: boundary-attached (region (c, theta + s]) solves
    sf(s) = level * P with P = P_theta(X > c); interior (region clear of c)
    solves sf(s) = (1 - (1-level) * P) / 2. The boundary form is taken
    whenever its solution reaches back to the cutoff.
    """
    m = theta - c
    log_P = float(log_ndtr(m))
    s_boundary = _isf_chain(math.log(level) + log_P)
    if s_boundary >= m:
        return s_boundary
    P = math.exp(log_P)
    return norm_isf((1.0 - (1.0 - level) * P) / 2.0)


def _halfwidth_two_sided(theta: float, c: float, level: float) -> float:
    """Same construction for the conditioning event {|X| > c}.

    By symmetry assume theta >= 0. Regimes in increasing s: interior right
    branch, attached to +c, and spilling into the left branch.
    """
    theta = abs(theta)
    log_p_right = float(log_ndtr(theta - c))  # P(X > c)
    log_p_left = float(log_ndtr(-theta - c))  # P(X < -c)
    # log(P_right + P_left), stable for tiny branch masses
    hi, lo = max(log_p_right, log_p_left), min(log_p_right, log_p_left)
    log_P = hi + math.log1p(math.exp(lo - hi))
    P = math.exp(log_P)
    p_right = math.exp(log_p_right)

    if theta > c:
        s1 = norm_isf((1.0 - (1.0 - level) * P) / 2.0)
        if s1 <= theta - c:
            return s1
    # attached to +c: sf(s) = p_right - (1-level) * P
    target = p_right - (1.0 - level) * P
    if target > 0.0:
        s2 = norm_isf(target)
        if s2 <= theta + c:
            return s2
    # both branches: sf(s) = level * P / 2
    return _isf_chain(math.log(level / 2.0) + log_P)


def truncated_halfwidth(theta: float, ctx: TruncationContext, level: float) -> float:
    """Acceptance half-width s(theta); accept x iff |x - theta| <= s(theta)."""
    level = check_level(level)
    if ctx.shape is TruncationShape.RIGHT_TAIL:
        return _halfwidth_right_tail(theta, ctx.cutoff, level)
    return _halfwidth_two_sided(theta, ctx.cutoff, level)


def _accepts(theta: float, x: float, ctx: TruncationContext, level: float) -> bool:
    return abs(x - theta) <= truncated_halfwidth(theta, ctx, level)


_THETA_TOL = 1e-9
_BRACKET_START = 12.0
_BRACKET_MAX = 4.0e6


def conditional_truncated_interval(
    x: float, ctx: TruncationContext, level: float
) -> Interval:
    """Invert the shortest-acceptance-region family in theta.

    The accepted set {theta : x in A(theta)} always contains theta = x (the
    acceptance region contains the conditional mode). Endpoints are located
    by expanding a bracket geometrically until rejection is seen and then
    bisecting to 1e-9. Near the truncation boundary the lower endpoint is
    genuinely far away (for x = c + d it scales like c - log(1/level)/d),
    which is why the bracket must expand rather than stay fixed.
    """
    level = check_level(level)
    _check_obs(x)
    if not ctx.contains(x):
        raise ValueError(
            f"observation inconsistent with selection event: x={x} outside {ctx}"
        )
    if not _accepts(x, x, ctx, level):
        raise ConvergenceError("acceptance region does not contain the observation", x, ctx)

    def find_edge(direction: float) -> float:
        width = _BRACKET_START
        while _accepts(x + direction * width, x, ctx, level):
            width *= 2.0
            if width > _BRACKET_MAX:
                raise ConvergenceError(
                    "endpoint bracket exceeded limit",
                    {"x": x, "ctx": ctx, "level": level, "direction": direction},
                )
        inside, outside = 0.0, width
        while outside - inside > _THETA_TOL:
            mid = 0.5 * (inside + outside)
            if _accepts(x + direction * mid, x, ctx, level):
                inside = mid
            else:
                outside = mid
        return x + direction * 0.5 * (inside + outside)

    lo = find_edge(-1.0)
    hi = find_edge(+1.0)
    return Interval(lo, hi, True, True)


# ---------------------------------------------------------------------------
# CI-derived p-values
# ---------------------------------------------------------------------------

_PVALUE_TOL = 1e-8


def ci_pvalue(rule, x: float, null_set: IntervalSet | Interval) -> float:
    """sup{a : I(x, a) intersects the null set}, by bisection on the level.

    `rule` is either a MarginalRuleSpec or any callable (x, level) -> Interval
    that is monotone (nesting) in the level, which makes the indicator
    a -> 1{I(x, a) ∩ Θ0 != empty} nonincreasing. Monotonicity is audited on
    a coarse level grid; a violation raises rather than returning garbage.
    """
    if isinstance(rule, MarginalRuleSpec):
        spec = rule
        builder = lambda xx, aa: marginal_interval(spec, xx, aa)
    else:
        builder = rule
    if isinstance(null_set, Interval):
        null_set = IntervalSet([null_set])

    def hits(a: float) -> bool:
        return null_set.intersects(builder(x, a))

    grid = [1e-9, 1e-6, 1e-4, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.99, 1 - 1e-9]
    flags = [hits(a) for a in grid]
    if any(b and not a for a, b in zip(flags, flags[1:])):
        raise ValueError("rule violates nesting: null-intersection not monotone in level")

    lo, hi = grid[0], grid[-1]
    if not flags[0]:
        return 0.0
    if flags[-1]:
        return 1.0
    while hi - lo > _PVALUE_TOL:
        mid = 0.5 * (lo + hi)
        if hits(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
