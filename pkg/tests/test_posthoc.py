"""Post-hoc FCP bound: frozen values, formula cross-check, monotonicities."""

import math

import mpmath
import numpy as np
import pytest

from online_fcr.posthoc import PosthocConfig, fcp_upper_bound, posthoc_factor, track_uniform_bound

mpmath.mp.dps = 40


class TestFactor:
    def test_frozen_example(self):
        cfg = PosthocConfig(a=1.0, delta=0.05)
        assert posthoc_factor(cfg) == pytest.approx(2.16263, abs=1e-5)
        assert posthoc_factor(cfg) == pytest.approx(2.1626293571160797, abs=1e-12)

    def test_against_mpmath_grid(self):
        # independent evaluation at 20 (a, delta) points to 1e-10
        for a in [0.1, 0.5, 1.0, 2.0, 10.0]:
            for delta in [0.01, 0.05, 0.2, 0.5]:
                cfg = PosthocConfig(a=a, delta=delta)
                L = mpmath.log(1 / mpmath.mpf(delta))
                exact = L / (mpmath.mpf(a) * mpmath.log(1 + L / a))
                assert posthoc_factor(cfg) == pytest.approx(float(exact), abs=1e-10)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PosthocConfig(a=0.0)
        with pytest.raises(ValueError):
            PosthocConfig(delta=1.0)


class TestBound:
    def test_frozen_composition(self):
        levels = [0.05] * 10
        sels = [True] * 10
        got = fcp_upper_bound(levels, sels, PosthocConfig(1.0, 0.05), 10)
        assert got == pytest.approx((1.5 / 10) * 2.1626293571160797, abs=1e-12)
        assert got == pytest.approx(0.32439, abs=1e-5)

    def test_vacuous_without_selections(self):
        got = fcp_upper_bound([0.01] * 5, [False] * 5, PosthocConfig(), 5)
        assert math.isinf(got)

    def test_monotone_in_selections_and_levels(self):
        cfg = PosthocConfig()
        base = fcp_upper_bound([0.01] * 10, [True] * 5 + [False] * 5, cfg, 10)
        more_sel = fcp_upper_bound([0.01] * 10, [True] * 6 + [False] * 4, cfg, 10)
        more_spend = fcp_upper_bound([0.02] * 10, [True] * 5 + [False] * 5, cfg, 10)
        assert more_sel < base < more_spend

    def test_track_matches_pointwise(self, rng):
        levels = rng.uniform(0.001, 0.05, size=200)
        sels = rng.random(200) < 0.3
        cfg = PosthocConfig(1.0, 0.05)
        track = track_uniform_bound(levels, sels, cfg)
        for n in (1, 7, 50, 200):
            assert track[n - 1] == pytest.approx(
                fcp_upper_bound(levels, sels, cfg, n), abs=1e-14
            ) or (math.isinf(track[n - 1]) and math.isinf(fcp_upper_bound(levels, sels, cfg, n)))

    def test_prefix_with_no_selection_vacuous_then_finite(self):
        levels = [0.01] * 4
        sels = [False, False, True, False]
        track = track_uniform_bound(levels, sels, PosthocConfig())
        assert math.isinf(track[0]) and math.isinf(track[1])
        assert math.isfinite(track[2]) and math.isfinite(track[3])


class TestHighProbabilityGuarantee:
    def test_uniform_violation_rate_below_delta(self, rng):
        # 20,000 runs of length 500; always-select at constant level 0.1;
        # miscoverage is exactly Bernoulli(0.1) per step (symmetric marginal
        # interval at a fixed level), so the bound's guarantee is exercised
        # on a nontrivial path family
        n_runs, T, alpha = 20_000, 500, 0.1
        cfg = PosthocConfig(1.0, 0.05)
        factor = posthoc_factor(cfg)
        n = np.arange(1, T + 1)
        bound = (cfg.a + alpha * n) / n * factor
        bad = 0
        for start in range(0, n_runs, 2000):
            V = rng.random((2000, T)) < alpha
            fcp = np.cumsum(V, axis=1) / n
            bad += int(np.any(fcp > bound, axis=1).sum())
        frac = bad / n_runs
        sigma = math.sqrt(cfg.delta * (1 - cfg.delta) / n_runs)
        assert frac <= cfg.delta + 3 * sigma
