"""Online false coverage rate control for selectively reported intervals.

Library layout mirrors the pipeline: `scheduler` issues predictable levels
(LORD-CI), `interval_rules` builds marginal/conditional intervals,
`selection` decides what gets reported, `protocol` runs the commit ->
observe -> report loop, `metrics` scores traces, `simulation` replicates
experiments, `posthoc` bounds the realized FCP after the fact, and
`conformal` carries the same machinery over to prediction intervals.
"""

from .interval_rules import (
    EMPTY,
    Interval,
    IntervalSet,
    MarginalRuleSpec,
    RuleKind,
    TruncationContext,
    TruncationShape,
    ci_pvalue,
    conditional_truncated_interval,
    marginal_interval,
    mqc_interval,
    one_sided_interval,
    sign_cutoff,
    symmetric_interval,
)
from .metrics import (
    AggregateReport,
    RateReport,
    ReplicationStats,
    StepRecord,
    aggregate_rates,
    estimated_fcp,
    fcp,
    mem_weighted_fcp,
    sign_error_counts,
)
from .protocol import (
    CONDITIONAL_AT_NOMINAL,
    LORD_CI_MARGINAL,
    ProtocolConfig,
    ProtocolRun,
    RunLog,
    StepOutcome,
    lordpp_testing_run,
    run_stream,
)
from .scheduler import (
    GammaSequence,
    LordCiScheduler,
    SchedulerState,
    alpha_spending_level,
    default_gamma,
    gamma_default,
    initial_state,
    mem_next_level,
    next_level,
    record_decision,
)
from .selection import (
    CompositeTest,
    FixedThreshold,
    Localization,
    SelectionOutcome,
    SignDetermining,
    decide,
    equivalent_pvalue_threshold,
    monotonicity_audit,
)

__version__ = "0.1.0"
