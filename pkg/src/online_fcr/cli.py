"""Command-line front end.

Subcommands: simulate (replicated experiments, Table-1 style outputs),
stream (online protocol over piped observations, one JSON line per step,
flushed before the next input line is read), posthoc (time-uniform FCP
bound track), conformal (prediction intervals, fixed-level or FCR-managed),
audit (selection-rule monotonicity), rule-endpoints (interval endpoint
curves on an x grid, consumed by the plotting package), and inconsistency
(the conditional-CI drop-and-readjust iteration).

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Config
files are versioned JSON and unknown keys are rejected. CSV floats carry 17
significant digits (round-trip exact). ONLINE_FCR_THREADS overrides
--threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

__all__ = ["main"]

STREAM_CONFIG_VERSION = 1


class UsageError(Exception):
    pass


def _fmt(v: float) -> str:
    return f"{v:.17g}"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    from .simulation import SCHEMES, ExperimentConfig, run_experiment, table_rows, write_outputs

    schemes = args.scheme or ["all"]
    if "all" in schemes:
        schemes = list(SCHEMES)
    unknown = [s for s in schemes if s not in SCHEMES]
    if unknown:
        raise UsageError(f"unknown scheme(s) {unknown}; valid: {sorted(SCHEMES)} or 'all'")
    n_reps = 10_000 if args.full_scale else args.reps
    results = []
    for name in schemes:
        cfg = ExperimentConfig(
            scheme_name=name,
            m=args.m,
            n_reps=n_reps,
            seed=args.seed,
            alpha=args.alpha,
            psi=args.psi,
            threads=args.threads,
        )
        results.append(run_experiment(cfg))
    write_outputs(results, args.out_dir)
    header, rows = table_rows(results)
    widths = [max(len(h), 12) for h in header]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [
            f"{float(c):.4f}".ljust(w) for c, w in zip(row[1:], widths[1:])
        ]
        print("  ".join(cells))
    print(f"outputs written to {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# stream
# ---------------------------------------------------------------------------


def _load_stream_config(path: str):
    from .protocol import ProtocolConfig

    with open(path) as fp:
        raw = json.load(fp)
    extra = set(raw) - {"version", "protocol"}
    if extra:
        raise UsageError(f"unknown keys in config: {sorted(extra)}")
    if raw.get("version") != STREAM_CONFIG_VERSION:
        raise UsageError(
            f"config version must be {STREAM_CONFIG_VERSION}, got {raw.get('version')!r}"
        )
    try:
        return ProtocolConfig.from_dict(raw["protocol"])
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"bad protocol config: {e}") from e


def _parse_observation(line: str, lineno: int) -> float | None:
    s = line.strip()
    if not s or s.startswith("#"):
        return None
    if "," in s:  # CSV row; accept a column named x via header handled upstream
        s = s.split(",")[0]
    try:
        return float(s)
    except ValueError as e:
        raise UsageError(f"malformed observation on line {lineno}: {line!r}") from e


def _cmd_stream(args) -> int:
    from .protocol import ProtocolRun

    config = _load_stream_config(args.config)
    run = ProtocolRun(config)
    inp = sys.stdin if args.input == "-" else open(args.input)
    out = sys.stdout if args.out == "-" else open(args.out, "w")
    n = 0
    try:
        lineno = 0
        while True:
            line = inp.readline()
            if line == "":
                break
            lineno += 1
            x = _parse_observation(line, lineno)
            if x is None:
                continue
            ticket = run.commit()
            step = run.observe(ticket, x)
            out.write(json.dumps(step.to_json_dict(), sort_keys=True) + "\n")
            out.flush()  # the online contract: emit before the next read
            n += 1
            if config.horizon is not None and n >= config.horizon:
                break
        log = run.finish()
        n_sel = sum(log.selections)
        summary = {
            "summary": {
                "n": n,
                "n_selected": n_sel,
                "est_fcp": (math.fsum(log.levels) / max(n_sel, 1)) if n else 0.0,
                "final_state": log.final_state,
            }
        }
        out.write(json.dumps(summary, sort_keys=True) + "\n")
        out.flush()
    finally:
        if inp is not sys.stdin:
            inp.close()
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# posthoc
# ---------------------------------------------------------------------------


def _load_log_levels(path: str):
    """Accept a stream JSONL log or an intervals_rep0-style CSV."""
    levels, selections, miscovered = [], [], []
    have_oracle = False
    if path.endswith(".csv"):
        with open(path, newline="") as fp:
            reader = csv.DictReader(fp)
            cols = reader.fieldnames or []
            if "level" not in cols or "selected" not in cols:
                raise UsageError(f"{path}: need 'level' and 'selected' columns")
            have_oracle = "covered" in cols
            for row in reader:
                levels.append(float(row["level"]))
                sel = row["selected"] in ("1", "true", "True")
                selections.append(sel)
                if have_oracle:
                    miscovered.append(bool(sel) and row["covered"] == "0")
    else:
        with open(path) as fp:
            for line in fp:
                d = json.loads(line)
                if "summary" in d or "final_state" in d:
                    continue
                levels.append(float(d["level"]))
                selections.append(bool(d["selected"]))
                if "miscovered" in d:
                    have_oracle = True
                    miscovered.append(bool(d["miscovered"]))
    return levels, selections, (miscovered if have_oracle else None)


def _cmd_posthoc(args) -> int:
    from .posthoc import PosthocConfig, track_uniform_bound

    levels, selections, miscovered = _load_log_levels(args.log)
    cfg = PosthocConfig(a=args.a, delta=args.delta)
    bounds = track_uniform_bound(levels, selections, cfg)
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        w = csv.writer(out)
        header = ["n", "bound"] + (["fcp"] if miscovered is not None else [])
        w.writerow(header)
        nsel = 0
        nmis = 0
        for i, b in enumerate(bounds):
            row = [str(i + 1), _fmt(b) if math.isfinite(b) else "inf"]
            if miscovered is not None:
                nsel += int(selections[i])
                nmis += int(miscovered[i])
                row.append(_fmt(nmis / nsel if nsel else 0.0))
            w.writerow(row)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# conformal
# ---------------------------------------------------------------------------


def _parse_selection(text: str):
    from .conformal import ExcludesValue, LocalityBall, WidthBudget

    kind, _, val = text.partition(":")
    if kind == "width":
        return WidthBudget(float(val))
    if kind == "exclude":
        return ExcludesValue(float(val) if val else 0.0)
    if kind == "ball":
        center, _, radius = val.partition(":")
        return LocalityBall(np.array([float(center)]), float(radius))
    raise UsageError(f"unknown selection rule {text!r}; use width:W | exclude:V | ball:C:R")


def _cmd_conformal(args) -> int:
    from .conformal import (
        ConformalConfig,
        KNearestMean,
        RidgeLinear,
        YGrid,
        full_conformal_interval,
        load_training_csv,
        selective_conformal_stream,
        split_conformal_interval,
    )

    train = load_training_csv(args.train)
    with open(args.test, newline="") as fp:
        reader = csv.reader(fp)
        next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    test = np.asarray(rows, dtype=float)
    d = train.x.shape[1]
    if test.shape[1] == d + 1:
        test_x, y_true = test[:, :-1], test[:, -1]
    elif test.shape[1] == d:
        test_x, y_true = test, None
    else:
        raise UsageError(f"test file has {test.shape[1]} columns; expected {d} or {d + 1}")

    predictor = KNearestMean(args.k) if args.predictor == "knn" else RidgeLinear(args.ridge_lambda)
    grid = None
    if args.mode == "full":
        span = float(np.ptp(train.y)) or 1.0
        grid = YGrid(train.y.min() - 2 * span, train.y.max() + 2 * span, args.grid_steps)
    cfg = ConformalConfig(predictor, y_grid=grid, mode=args.mode, train_fraction=args.train_fraction)

    out = sys.stdout if args.out == "-" else open(args.out, "w")
    try:
        if args.fcr_alpha is not None:
            selection = _parse_selection(args.select)
            res = selective_conformal_stream(
                train, test_x, selection, args.fcr_alpha, cfg=cfg, y_true=y_true
            )
            res.log.write_jsonl(out)
            if res.miscovered is not None and len(res.miscovered):
                print(
                    f"selected {len(res.miscovered)}; FCP {res.miscovered.mean():.4f}",
                    file=sys.stderr,
                )
        else:
            build = split_conformal_interval if args.mode == "split" else full_conformal_interval
            for i in range(test_x.shape[0]):
                iv = build(train, test_x[i], args.level, cfg)
                rec = {"index": i + 1, "lo": iv.lo, "hi": iv.hi}
                if y_true is not None:
                    rec["covered"] = bool(iv.contains(float(y_true[i])))
                out.write(json.dumps(rec) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# audit / rule-endpoints / inconsistency
# ---------------------------------------------------------------------------


def _cmd_audit(args) -> int:
    from .selection import monotonicity_audit, rule_spec_from_dict

    with open(args.spec) as fp:
        raw = json.load(fp)
    try:
        spec = rule_spec_from_dict(raw)
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"bad rule spec: {e}") from e
    report = monotonicity_audit(
        spec, rule_nesting=not args.non_nesting, history_len=args.max_history, alpha=args.alpha
    )
    print(
        json.dumps(
            {
                "history_len": report.history_len,
                "n_pairs_checked": report.n_pairs_checked,
                "n_grid_points": report.n_grid_points,
                "n_violations": len(report.violations),
                "passed": report.passed,
                "witnesses": [
                    {
                        "history_small": v.history_small,
                        "history_large": v.history_large,
                        "x": v.x,
                        "level_small": v.level_small,
                        "level_large": v.level_large,
                    }
                    for v in report.violations[:10]
                ],
            },
            indent=2,
        )
    )
    return 0


def _cmd_rule_endpoints(args) -> int:
    from .interval_rules import MarginalRuleSpec, RuleKind, marginal_interval

    kind = RuleKind(args.rule)
    spec = MarginalRuleSpec(kind, args.psi if kind is RuleKind.MQC else None)
    xs = np.linspace(args.lo, args.hi, args.steps)
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(["x", "lo", "hi"])
        for x in xs:
            iv = marginal_interval(spec, float(x), args.level)
            w.writerow([_fmt(float(x)), _fmt(iv.lo), _fmt(iv.hi)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_inconsistency(args) -> int:
    from .simulation import inconsistency_demo

    rep = inconsistency_demo(
        n_reps=args.reps, m=args.m, seed=args.seed, alpha=args.alpha, threads=args.threads
    )
    mean_counts = rep.mean_counts()
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(["iteration", "mean_count", "mean_fcp_adjusted"])
        for it in range(len(mean_counts)):
            col = rep.fcp_adjusted[:, it]
            mean_fcp = float(np.nanmean(col)) if np.any(~np.isnan(col)) else float("nan")
            w.writerow([str(it), _fmt(float(mean_counts[it])), _fmt(mean_fcp)])
    finally:
        if out is not sys.stdout:
            out.close()
    print(
        f"counts nonincreasing: {rep.counts_nonincreasing}; "
        f"mean FCP of kept-unadjusted CIs: {rep.mean_fcp_kept():.4f}",
        file=sys.stderr,
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="online-fcr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="replicated experiments, Table-1 style outputs")
    sim.add_argument("--scheme", action="append", help="scheme name or 'all' (repeatable)")
    sim.add_argument("--alpha", type=float, default=0.1)
    sim.add_argument("--reps", type=int, default=2_000)
    sim.add_argument("--m", type=int, default=10_000)
    sim.add_argument("--seed", type=int, default=7)
    sim.add_argument("--psi", type=float, default=0.7)
    sim.add_argument("--out-dir", default="out")
    sim.add_argument("--full-scale", action="store_true", help="n_reps = 10,000")
    sim.add_argument("--threads", type=int, default=None)
    sim.set_defaults(func=_cmd_simulate)

    st = sub.add_parser("stream", help="run the online protocol over piped observations")
    st.add_argument("--config", required=True)
    st.add_argument("--input", default="-")
    st.add_argument("--out", default="-")
    st.set_defaults(func=_cmd_stream)

    ph = sub.add_parser("posthoc", help="time-uniform FCP bound track")
    ph.add_argument("--log", required=True)
    ph.add_argument("--a", type=float, default=1.0)
    ph.add_argument("--delta", type=float, default=0.05)
    ph.add_argument("--out", default="-")
    ph.set_defaults(func=_cmd_posthoc)

    cf = sub.add_parser("conformal", help="conformal prediction intervals")
    cf.add_argument("--train", required=True)
    cf.add_argument("--test", required=True)
    cf.add_argument("--mode", choices=["split", "full"], default="split")
    cf.add_argument("--level", type=float, default=0.1)
    cf.add_argument("--fcr-alpha", type=float, default=None)
    cf.add_argument("--select", default="exclude:0")
    cf.add_argument("--predictor", choices=["knn", "ridge"], default="ridge")
    cf.add_argument("--k", type=int, default=5)
    cf.add_argument("--ridge-lambda", type=float, default=1e-6)
    cf.add_argument("--train-fraction", type=float, default=0.5)
    cf.add_argument("--grid-steps", type=int, default=201)
    cf.add_argument("--out", default="-")
    cf.set_defaults(func=_cmd_conformal)

    au = sub.add_parser("audit", help="selection-rule monotonicity audit")
    au.add_argument("--spec", required=True)
    au.add_argument("--max-history", type=int, default=8)
    au.add_argument("--alpha", type=float, default=0.1)
    au.add_argument("--non-nesting", action="store_true")
    au.set_defaults(func=_cmd_audit)

    re_ = sub.add_parser("rule-endpoints", help="interval endpoint curves on an x grid")
    re_.add_argument("--rule", choices=["symmetric", "one_sided", "mqc"], required=True)
    re_.add_argument("--psi", type=float, default=0.7)
    re_.add_argument("--level", type=float, default=0.1)
    re_.add_argument("--lo", type=float, default=-6.0)
    re_.add_argument("--hi", type=float, default=6.0)
    re_.add_argument("--steps", type=int, default=481)
    re_.add_argument("--out", default="-")
    re_.set_defaults(func=_cmd_rule_endpoints)

    inc = sub.add_parser("inconsistency", help="conditional-CI drop-and-readjust iteration")
    inc.add_argument("--reps", type=int, default=500)
    inc.add_argument("--m", type=int, default=10_000)
    inc.add_argument("--seed", type=int, default=11)
    inc.add_argument("--alpha", type=float, default=0.1)
    inc.add_argument("--threads", type=int, default=None)
    inc.add_argument("--out", default="-")
    inc.set_defaults(func=_cmd_inconsistency)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
