"""Replicated synthetic experiments and their aggregation.

Streams follow the two generative setups of the numerical experiments:

  * mixture61: theta = +1e-3 w.p. 0.45, -1e-3 w.p. 0.45, 1 + Poisson(1)
    w.p. 0.1 (near-zero "nulls", rare large effects);
  * mixture62: theta = (-1)^i * 1e-3 w.p. 0.8, and exactly 2 w.p. 0.2.

Observations are X_i ~ N(theta_i, 1). Each replication runs an independent
counter-based substream (numpy Philox keyed by (seed, replication index)),
so results are reproducible regardless of execution order or thread count;
Poisson draws go through inversion of a fixed CDF table.

Three selection schemes mirror the reference experiments: a fixed threshold
|x| > 3, sign-determining selection with the symmetric rule, and
sign-determining selection with the MQC rule (psi = 0.7). Every scheme is
scored under both interval modes at once - LORD-CI marginal intervals at the
committed level, and conditional truncated-normal intervals at the nominal
level with the cutoff implied by the committed rule.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _engine
from .interval_rules import (
    TruncationContext,
    TruncationShape,
    conditional_truncated_interval,
    truncated_halfwidth,
)
from .metrics import AggregateReport, ReplicationStats, aggregate_rates
from .scheduler import GammaSequence, default_gamma
from scipy.special import ndtri

from ._normal import norm_sf

__all__ = [
    "MixtureSpec",
    "MixtureComponent",
    "ExperimentConfig",
    "ReplicationSummary",
    "SchemeResult",
    "IterationReport",
    "SCHEMES",
    "gen_thetas_61",
    "gen_thetas_62",
    "substream",
    "run_experiment",
    "inconsistency_demo",
    "write_outputs",
    "table_rows",
    "INTERVALS_CSV_HEADER",
]


# ---------------------------------------------------------------------------
# Stream generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    kind: str  # "point" | "one_plus_poisson"
    value: float = 0.0
    rate: float = 1.0


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[MixtureComponent, ...]

    def __post_init__(self):
        w = [c.weight for c in self.components]
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to one")

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        cum = np.cumsum([c.weight for c in self.components])
        u = rng.random(m)
        idx = np.searchsorted(cum, u, side="right").clip(max=len(self.components) - 1)
        u_pois = rng.random(m)  # drawn unconditionally: fixed stream layout
        out = np.empty(m)
        for j, comp in enumerate(self.components):
            mask = idx == j
            if comp.kind == "point":
                out[mask] = comp.value
            elif comp.kind == "one_plus_poisson":
                out[mask] = 1.0 + _poisson_inverse(u_pois[mask], comp.rate)
            else:
                raise ValueError(f"unknown mixture component kind: {comp.kind}")
        return out


def _poisson_cdf_table(rate: float, tail: float = 1e-16) -> np.ndarray:
    probs = [math.exp(-rate)]
    k = 0
    while 1.0 - sum(probs) > tail and k < 200:
        k += 1
        probs.append(probs[-1] * rate / k)
    return np.cumsum(probs)


_POIS1_CDF = _poisson_cdf_table(1.0)


def _poisson_inverse(u: np.ndarray, rate: float) -> np.ndarray:
    table = _POIS1_CDF if rate == 1.0 else _poisson_cdf_table(rate)
    return np.searchsorted(table, u, side="right").astype(float)


MIXTURE_61 = MixtureSpec(
    (
        MixtureComponent(0.45, "point", value=+1e-3),
        MixtureComponent(0.45, "point", value=-1e-3),
        MixtureComponent(0.10, "one_plus_poisson", rate=1.0),
    )
)


def gen_thetas_61(m: int, rng: np.random.Generator) -> np.ndarray:
    """Near-null mass at +-1e-3 (0.45 each); signals 1 + Poisson(1) (0.1)."""
    return MIXTURE_61.sample(m, rng)


def gen_thetas_62(m: int, rng: np.random.Generator) -> np.ndarray:
    """theta_i = (-1)^i * 1e-3 w.p. 0.8 (parity of the 1-based index),
    theta_i = 2 w.p. 0.2."""
    u = rng.random(m)
    i = np.arange(1, m + 1)
    base = np.where(i % 2 == 0, 1e-3, -1e-3)
    return np.where(u < 0.8, base, 2.0)


def substream(seed: int, rep: int) -> np.random.Generator:
    """Counter-based substream: Philox keyed by (seed, replication)."""
    key = np.array([np.uint64(seed), np.uint64(rep)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Experiment configuration and per-scheme execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchemeDef:
    name: str
    engine_code: int
    generator: Callable[[int, np.random.Generator], np.ndarray]
    threshold: float = 0.0
    threshold_two_sided: bool = True
    psi: float = 0.7


SCHEMES: dict[str, SchemeDef] = {
    "fixed-threshold": SchemeDef(
        "fixed-threshold", _engine.SCHEME_FIXED, gen_thetas_61, threshold=3.0
    ),
    "sgn-det-symmetric": SchemeDef(
        "sgn-det-symmetric", _engine.SCHEME_SGN_SYM, gen_thetas_61
    ),
    "sgn-det-mqc": SchemeDef("sgn-det-mqc", _engine.SCHEME_SGN_MQC, gen_thetas_61),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scheme_name: str
    m: int = 10_000
    n_reps: int = 2_000
    seed: int = 7
    alpha: float = 0.1
    w0: float | None = None
    psi: float = 0.7
    threads: int | None = None

    def resolved_w0(self) -> float:
        return self.alpha / 2.0 if self.w0 is None else self.w0

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        env = os.environ.get("ONLINE_FCR_THREADS")
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


@dataclass(frozen=True)
class ReplicationSummary:
    """Aggregate for one (scheme, interval mode) cell."""

    aggregate: AggregateReport
    sign_det_fraction: float
    sign_det_fraction_se: float

    def to_dict(self) -> dict:
        d = self.aggregate.to_dict()
        d["sign_det_fraction"] = self.sign_det_fraction
        d["sign_det_fraction_se"] = self.sign_det_fraction_se
        return d


@dataclass
class SchemeResult:
    scheme: str
    config: ExperimentConfig
    lord: ReplicationSummary
    conditional: ReplicationSummary
    # per-replication arrays (lord mode): selections, miscoverages, fcp
    n_selected: np.ndarray = field(repr=False, default=None)
    fcp_lord: np.ndarray = field(repr=False, default=None)
    fcp_cond: np.ndarray = field(repr=False, default=None)
    domination_violations: int = 0
    mqc_not_sign_determining: int = 0
    rep0_rows: list | None = field(repr=False, default=None)


def _rep_inputs(cfg: ExperimentConfig, scheme: SchemeDef, rep: int):
    rng = substream(cfg.seed, rep)
    theta = scheme.generator(cfg.m, rng)
    x = theta + rng.standard_normal(cfg.m)
    return theta, x


def _score_rep(cfg: ExperimentConfig, scheme: SchemeDef, gamma_table: np.ndarray, rep: int):
    theta, x = _rep_inputs(cfg, scheme, rep)
    out = _engine.replication_kernel(
        x,
        theta,
        cfg.alpha,
        cfg.resolved_w0(),
        gamma_table,
        scheme.engine_code,
        cfg.psi,
        scheme.threshold,
        scheme.threshold_two_sided,
        rep == 0,
    )
    (
        nsel,
        sel_idx,
        sel_x,
        sel_theta,
        sel_level,
        sel_cutoff,
        v_lord,
        v_cond,
        sd_lord,
        sd_cond,
        sign_lord,
        levels,
    ) = out

    pos_claim = sign_lord == 1
    neg_claim = sign_lord == -1
    false_signs = int(np.sum(pos_claim & (sel_theta <= 0)) + np.sum(neg_claim & (sel_theta > 0)))
    total_signs = int(np.sum(pos_claim) + np.sum(neg_claim))
    stats_lord = ReplicationStats(
        n_selected=int(nsel),
        n_miscovered=int(v_lord.sum()),
        false_signs=false_signs,
        total_signs=total_signs,
        sum_levels=float(sel_level.sum()),
    )
    sign_cond = np.where(sd_cond == 1, np.sign(sel_x), 0.0)
    false_cond = int(
        np.sum((sign_cond == 1) & (sel_theta <= 0)) + np.sum((sign_cond == -1) & (sel_theta > 0))
    )
    stats_cond = ReplicationStats(
        n_selected=int(nsel),
        n_miscovered=int(v_cond.sum()),
        false_signs=false_cond,
        total_signs=int(np.sum(sign_cond != 0)),
    )
    frac_lord = float(sd_lord.mean()) if nsel else 0.0
    frac_cond = float(sd_cond.mean()) if nsel else 0.0

    # pathwise dominations: a false sign implies a miscoverage, in each mode
    viol = int(np.sum(pos_claim & (sel_theta <= 0) & (v_lord == 0)))
    viol += int(np.sum(neg_claim & (sel_theta > 0) & (v_lord == 0)))
    viol += int(np.sum((sign_cond == 1) & (sel_theta <= 0) & (v_cond == 0)))
    viol += int(np.sum((sign_cond == -1) & (sel_theta > 0) & (v_cond == 0)))
    mqc_not_sd = 0
    if scheme.engine_code in (_engine.SCHEME_SGN_SYM, _engine.SCHEME_SGN_MQC, _engine.SCHEME_SGN_ONE):
        mqc_not_sd = int(np.sum(sd_lord == 0))

    rep0 = None
    if rep == 0:
        rep0 = _rep0_rows(cfg, scheme, theta, x, levels, out)
    return (stats_lord, stats_cond, frac_lord, frac_cond, viol, mqc_not_sd, rep0)


def _rep0_rows(cfg, scheme, theta, x, levels, out):
    (nsel, sel_idx, sel_x, sel_theta, sel_level, sel_cutoff, v_lord, v_cond, *_rest) = out
    selected = np.zeros(cfg.m, dtype=bool)
    selected[sel_idx - 1] = True
    sel_pos = {int(i): k for k, i in enumerate(sel_idx)}
    shape = (
        TruncationShape.TWO_SIDED
        if (scheme.engine_code != _engine.SCHEME_FIXED or scheme.threshold_two_sided)
        else TruncationShape.RIGHT_TAIL
    )
    rows = []
    for i in range(cfg.m):
        if not selected[i]:
            rows.append((i + 1, x[i], theta[i], levels[i], 0, "", "", "", "", "", "", 0))
            continue
        k = sel_pos[i + 1]
        level = sel_level[k]
        if scheme.engine_code == _engine.SCHEME_SGN_MQC:
            from .interval_rules import mqc_interval

            iv = mqc_interval(float(sel_x[k]), float(level), cfg.psi)
        elif scheme.engine_code == _engine.SCHEME_SGN_ONE:
            from .interval_rules import one_sided_interval

            iv = one_sided_interval(float(sel_x[k]), float(level))
        else:
            from .interval_rules import symmetric_interval

            iv = symmetric_interval(float(sel_x[k]), float(level))
        ctx = TruncationContext(shape, float(sel_cutoff[k]))
        cond_iv = conditional_truncated_interval(float(sel_x[k]), ctx, cfg.alpha)
        rows.append(
            (
                i + 1,
                x[i],
                theta[i],
                levels[i],
                1,
                iv.lo,
                iv.hi,
                int(1 - v_lord[k]),
                cond_iv.lo,
                cond_iv.hi,
                int(1 - v_cond[k]),
                iv.sign_class(),
            )
        )
    return rows


INTERVALS_CSV_HEADER = [
    "index",
    "x",
    "theta",
    "level",
    "selected",
    "lo",
    "hi",
    "covered",
    "cond_lo",
    "cond_hi",
    "cond_covered",
    "sign",
]


def run_experiment(config: ExperimentConfig, gamma: GammaSequence | None = None) -> SchemeResult:
    """Run all replications of one scheme, scoring both interval modes."""
    if config.scheme_name not in SCHEMES:
        raise ValueError(
            f"unknown scheme {config.scheme_name!r}; valid: {sorted(SCHEMES)}"
        )
    scheme = SCHEMES[config.scheme_name]
    gamma = gamma if gamma is not None else default_gamma()
    gamma_table = np.asarray(gamma.table(config.m + 1))

    n = config.n_reps
    results = [None] * n
    threads = config.resolved_threads()

    def work(rep: int):
        results[rep] = _score_rep(config, scheme, gamma_table, rep)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, range(n)))
    else:
        for rep in range(n):
            work(rep)

    stats_lord = [r[0] for r in results]
    stats_cond = [r[1] for r in results]
    fr_l = np.array([r[2] for r in results])
    fr_c = np.array([r[3] for r in results])
    viol = sum(r[4] for r in results)
    mqc_not_sd = sum(r[5] for r in results)

    def se(a: np.ndarray) -> float:
        return float(np.std(a, ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0

    lord = ReplicationSummary(aggregate_rates(stats_lord), float(fr_l.mean()), se(fr_l))
    cond = ReplicationSummary(aggregate_rates(stats_cond), float(fr_c.mean()), se(fr_c))
    return SchemeResult(
        scheme=config.scheme_name,
        config=config,
        lord=lord,
        conditional=cond,
        n_selected=np.array([s.n_selected for s in stats_lord]),
        fcp_lord=np.array([s.fcp for s in stats_lord]),
        fcp_cond=np.array([s.fcp for s in stats_cond]),
        domination_violations=viol,
        mqc_not_sign_determining=mqc_not_sd,
        rep0_rows=results[0][6],
    )


# ---------------------------------------------------------------------------
# The conditional-CI inconsistency iteration
# ---------------------------------------------------------------------------


@dataclass
class IterationReport:
    n_reps: int
    counts: np.ndarray  # (n_reps, n_iters) selection counts per iteration
    fcp_adjusted: np.ndarray  # (n_reps, n_iters) FCP of re-adjusted CIs, nan if empty
    fcp_kept_unadjusted: np.ndarray  # (n_reps,) FCP of survivors' original CIs
    baseline_retained: bool  # sign-det LORD-CI keeps all its selections

    @property
    def counts_nonincreasing(self) -> bool:
        d = np.diff(self.counts, axis=1)
        return bool(np.all(d <= 0))

    def mean_counts(self) -> np.ndarray:
        return self.counts.mean(axis=0)

    def mean_fcp_kept(self) -> float:
        return float(np.nanmean(self.fcp_kept_unadjusted))


def inconsistency_demo(
    n_reps: int = 500,
    m: int = 10_000,
    seed: int = 11,
    alpha: float = 0.1,
    w0: float | None = None,
    max_iters: int = 12,
    threads: int | None = None,
) -> IterationReport:
    """Replicate the drop-and-readjust cycle for conditional CIs.

    Selections come from LORD++ on two-sided p-values (equivalently the
    sign-determining symmetric procedure). Iteration 0 builds conditional CIs
    at the selection cutoffs c0_i = z_{alpha_i/2}; each following iteration
    drops the intervals that cross zero and re-adjusts the survivors to the
    implied cutoff c_{k+1} = s0(c_k), where s0(c) solves the zero-crossing
    boundary sf(s0) = alpha * sf(c) for the two-sided truncation - so the
    survivor set is {|x| >= c_{k+1}} and cutoffs grow without bound.
    """
    w0 = alpha / 2.0 if w0 is None else w0
    gamma_table = np.asarray(default_gamma().table(m + 1))
    counts = np.zeros((n_reps, max_iters), dtype=int)
    fcp_adj = np.full((n_reps, max_iters), np.nan)
    fcp_kept = np.full(n_reps, np.nan)
    baseline_ok = True

    for rep in range(n_reps):
        rng = substream(seed, rep)
        theta = gen_thetas_62(m, rng)
        x = theta + rng.standard_normal(m)
        out = _engine.replication_kernel(
            x, theta, alpha, w0, gamma_table, _engine.SCHEME_SGN_SYM, 0.7, 0.0, True, False
        )
        nsel, sel_idx, sel_x, sel_theta, sel_level, sel_cutoff, v_lord, *_ = out
        if int(np.sum(out[8] == 0)) > 0:  # signdet_lord must be all-ones
            baseline_ok = False

        xs = np.asarray(sel_x)
        ths = np.asarray(sel_theta)
        cut = np.asarray(sel_cutoff).copy()
        alive = np.ones(len(xs), dtype=bool)
        first_drop_done = False
        for it in range(max_iters):
            counts[rep, it] = int(alive.sum())
            if not alive.any():
                break
            s_theta = np.array(
                [
                    truncated_halfwidth(
                        float(t), TruncationContext(TruncationShape.TWO_SIDED, float(c)), alpha
                    )
                    for t, c in zip(ths[alive], cut[alive])
                ]
            )
            mis = np.abs(xs[alive] - ths[alive]) > s_theta
            fcp_adj[rep, it] = float(mis.mean())
            # zero-crossing boundary: closed form for theta = 0
            s0 = -ndtri(np.clip(alpha * norm_sf(cut[alive]), 1e-300, None))
            keep = np.abs(xs[alive]) >= s0
            if not first_drop_done:
                fcp_kept[rep] = float(mis[keep].mean()) if keep.any() else np.nan
                first_drop_done = True
            new_alive = alive.copy()
            idx_alive = np.where(alive)[0]
            new_alive[idx_alive[~keep]] = False
            cut[idx_alive[keep]] = s0[keep]
            if new_alive.sum() == alive.sum():
                # no drops this round: cutoffs still advanced, continue
                alive = new_alive
                continue
            alive = new_alive
    return IterationReport(
        n_reps=n_reps,
        counts=counts,
        fcp_adjusted=fcp_adj,
        fcp_kept_unadjusted=fcp_kept,
        baseline_retained=baseline_ok,
    )


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def table_rows(results: Sequence[SchemeResult]) -> tuple[list[str], list[list[str]]]:
    """Table-1 style layout: one column per scheme x interval mode."""
    header = ["metric"]
    for r in results:
        header += [f"{r.scheme}:lord_ci", f"{r.scheme}:conditional"]
    rows = []
    for metric, get in [
        ("fcr", lambda s: s.aggregate.fcr_hat),
        ("mfcr", lambda s: s.aggregate.mfcr_hat),
        ("pfcr", lambda s: s.aggregate.pfcr_hat),
        ("mean_selected", lambda s: s.aggregate.mean_selected),
        ("sign_det_fraction", lambda s: s.sign_det_fraction),
        ("fsr", lambda s: s.aggregate.fsr_hat),
    ]:
        row = [metric]
        for r in results:
            row += [f"{get(r.lord):.17g}", f"{get(r.conditional):.17g}"]
        rows.append(row)
    return header, rows


def write_outputs(results: Sequence[SchemeResult], out_dir: str) -> dict:
    """Write summary.json, table1.csv, intervals_rep0.csv; returns summary."""
    import csv

    os.makedirs(out_dir, exist_ok=True)
    summary = {
        "config": {
            "alpha": results[0].config.alpha,
            "w0": results[0].config.resolved_w0(),
            "m": results[0].config.m,
            "n_reps": results[0].config.n_reps,
            "seed": results[0].config.seed,
        },
        "schemes": {
            r.scheme: {
                "lord_ci": r.lord.to_dict(),
                "conditional": r.conditional.to_dict(),
                "domination_violations": r.domination_violations,
            }
            for r in results
        },
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fp:
        json.dump(summary, fp, indent=2, sort_keys=True)
        fp.write("\n")

    header, rows = table_rows(results)
    with open(os.path.join(out_dir, "table1.csv"), "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(header)
        w.writerows(rows)

    def dump(path: str, rows) -> None:
        with open(path, "w", newline="") as fp:
            w = csv.writer(fp)
            w.writerow(INTERVALS_CSV_HEADER)
            for row in rows:
                w.writerow([_fmt_cell(v) for v in row])

    for k, r in enumerate(results):
        if r.rep0_rows is None:
            continue
        dump(os.path.join(out_dir, f"intervals_rep0_{r.scheme}.csv"), r.rep0_rows)
        if k == 0:
            dump(os.path.join(out_dir, "intervals_rep0.csv"), r.rep0_rows)
    return summary


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)
