import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icapm_breaks import breaks as bk
from icapm_breaks.breaks import (
    CRITICAL_VALUES,
    Prefix,
    SegmentationProblem,
    argmax_cdf,
    argmax_quantile,
    bartlett_lrv,
    break_confidence_interval,
    classical_se,
    dp_partition,
    regime_means_hac,
    segment_ssr,
    select_num_breaks,
    seq_test,
    sup_f,
    ud_wd_max,
)
from icapm_breaks.errors import ConfigError, InfeasibleError, NotApplicable, UndefinedIntervalError
from icapm_breaks.simulate import StepSpec, simulate_mean_shift

from oracles import direct_ssr_table, enumerate_partitions


def step(levels, lengths, sigma=0.0, seed=0):
    y = np.repeat(levels, lengths).astype(float)
    return y + sigma * np.random.default_rng(seed).standard_normal(y.size)


class TestSegmentSSR:
    def test_constant(self):
        assert segment_ssr(Prefix([2.0, 2.0, 2.0]), 1, 3) == 0.0

    def test_two_points(self):
        assert segment_ssr(Prefix([0.0, 1.0]), 1, 2) == pytest.approx(0.5, abs=1e-15)

    def test_three_points(self):
        assert segment_ssr(Prefix([1.0, 2.0, 3.0]), 1, 3) == pytest.approx(2.0, abs=1e-14)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            segment_ssr(Prefix([1.0, 2.0]), 0, 2)
        with pytest.raises(IndexError):
            segment_ssr(Prefix([1.0, 2.0]), 2, 3)

    def test_matches_direct(self, rng):
        y = rng.standard_normal(25)
        tab = direct_ssr_table(y)
        p = Prefix(y)
        for i in range(1, 26, 4):
            for j in range(i, 26, 3):
                assert segment_ssr(p, i, j) == pytest.approx(tab[i - 1, j - 1], abs=1e-12)


class TestProblem:
    def test_min_length(self):
        prob = SegmentationProblem(np.zeros(242), 5, 0.10)
        assert prob.h == 24

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            SegmentationProblem(np.zeros(20), 5, 0.2)
        with pytest.raises(InfeasibleError):
            SegmentationProblem(np.zeros(5), 1, 0.1)

    def test_bad_trim(self):
        with pytest.raises(ConfigError):
            SegmentationProblem(np.zeros(50), 1, 0.6)


class TestDPPartition:
    def test_perfect_step(self):
        fit = dp_partition(SegmentationProblem([0, 0, 0, 1, 1, 1], 1, 2 / 6 + 1e-9), 1)
        assert fit.dates == (3,)
        assert fit.ssr == 0.0
        assert fit.regime_means == (0.0, 1.0)

    @pytest.mark.parametrize("value", [0.3, 1.0, -7.25])
    def test_constant_tie_earliest(self, value):
        prob = SegmentationProblem(np.full(20, value), 2, 0.15)
        fit1 = dp_partition(prob, 1)
        assert fit1.ssr == 0.0
        assert fit1.dates == (prob.h,)
        assert dp_partition(prob, 2).dates == (prob.h, 2 * prob.h)

    @pytest.mark.parametrize("seed", range(6))
    def test_against_enumeration(self, seed):
        y = np.random.default_rng(seed).standard_normal(30)
        prob = SegmentationProblem(y, 3, 0.1)
        assert prob.h == 3
        tab = direct_ssr_table(y)
        for m in range(1, 4):
            dates, ssr = enumerate_partitions(y, m, 3, tab)
            fit = dp_partition(prob, m)
            assert fit.dates == dates
            assert fit.ssr == pytest.approx(ssr, abs=1e-10)

    def test_kernels_agree(self, kernels, rng):
        y = rng.standard_normal(60)
        y -= y.mean()
        ssr, brk = kernels.segment_dp(np.ascontiguousarray(y), 4, 6, 0.0)
        ssr_py, brk_py = bk._backend.kernels.segment_dp(np.ascontiguousarray(y), 4, 6, 0.0)
        np.testing.assert_array_equal(brk, brk_py)
        np.testing.assert_allclose(ssr, ssr_py, rtol=1e-13)

    def test_ssr_non_increasing(self, rng):
        prob = SegmentationProblem(rng.standard_normal(100), 5, 0.1)
        ssrs = [dp_partition(prob, m).ssr for m in range(6)]
        assert all(b <= a for a, b in zip(ssrs, ssrs[1:]))
        assert all(b < a for a, b in zip(ssrs, ssrs[1:]))

    def test_trimming_respected(self, rng):
        prob = SegmentationProblem(rng.standard_normal(97), 5, 0.12)
        for m in range(1, 6):
            e = dp_partition(prob, m).edges
            assert all(e[k + 1] - e[k] >= prob.h for k in range(m + 1))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 50), st.floats(-10, 10))
    def test_affine_invariance(self, seed, a, b):
        y = step([0, 1, 0.4], [20, 15, 25], 0.5, seed)
        sign = -1 if seed % 2 else 1
        p1 = SegmentationProblem(y, 3, 0.1)
        p2 = SegmentationProblem(sign * a * y + b, 3, 0.1)
        for k in (1, 2, 3):
            assert dp_partition(p2, k).dates == dp_partition(p1, k).dates
            assert sup_f(p2, k) == pytest.approx(sup_f(p1, k), rel=1e-9)
        assert ud_wd_max(p2) == pytest.approx(ud_wd_max(p1), rel=1e-9)

    def test_calendar_months(self):
        prob = SegmentationProblem(step([0, 1], [30, 30]), 1, 0.1, np.datetime64("1988-01"))
        fit = dp_partition(prob, 1)
        assert fit.dates == (30,)
        assert str(fit.months[0]) == "1990-06"

    def test_infeasible_m(self):
        prob = SegmentationProblem(np.arange(20.0), 1, 0.25)
        with pytest.raises(InfeasibleError):
            dp_partition(prob, 4)


class TestSupF:
    def test_constant_is_zero(self):
        prob = SegmentationProblem(np.full(50, 0.4), 3, 0.1)
        assert all(sup_f(prob, k) == 0.0 for k in (1, 2, 3))

    def test_formula(self, rng):
        y = rng.standard_normal(40)
        prob = SegmentationProblem(y, 2, 0.1)
        tab = direct_ssr_table(y)
        _, ssr1 = enumerate_partitions(y, 1, 4, tab)
        ssr0 = tab[0, -1]
        assert sup_f(prob, 1) == pytest.approx((40 - 2) * (ssr0 - ssr1) / ssr1, rel=1e-10)

    def test_power_against_large_step(self):
        crit = CRITICAL_VALUES[(0.10, 0.05)]["supf"][1]
        hits = 0
        for seed in range(50):
            y = step([0.0, 5.0], [50, 50], 1.0, seed)
            hits += sup_f(SegmentationProblem(y, 1, 0.1), 1) > crit
        assert hits == 50

    def test_size(self):
        crit = CRITICAL_VALUES[(0.10, 0.05)]["supf"][1]
        rng = np.random.default_rng(2024)
        rej = np.mean([sup_f(SegmentationProblem(rng.standard_normal(200), 1, 0.1), 1) > crit for _ in range(500)])
        assert 0.02 <= rej <= 0.09


class TestDoubleMax:
    def test_single_term(self, rng):
        prob = SegmentationProblem(rng.standard_normal(60), 1, 0.1)
        ud, wd = ud_wd_max(prob)
        assert ud == wd == sup_f(prob, 1)

    def test_udmax_is_max(self, rng):
        prob = SegmentationProblem(step([0, 1, 0], [30, 30, 30], 1.0, 3), 5, 0.1)
        ud, wd = ud_wd_max(prob)
        f = [sup_f(prob, k) for k in range(1, 6)]
        assert ud == max(f)
        cv = CRITICAL_VALUES[(0.10, 0.05)]["supf"]
        assert wd == max(cv[1] / cv[k] * f[k - 1] for k in range(1, 6))

    def test_step_significant(self):
        prob = SegmentationProblem(step([0, 0, 0, 1, 1, 1] * 1, [1] * 6) .repeat(10), 5, 0.1)
        ud, _ = ud_wd_max(prob)
        assert ud > CRITICAL_VALUES[(0.10, 0.05)]["udmax"]

    def test_step_with_noise_significant(self):
        hits = 0
        for seed in range(100):
            prob = SegmentationProblem(step([0.0, 1.0], [60, 60], 0.5, seed), 5, 0.1)
            hits += ud_wd_max(prob)[0] > CRITICAL_VALUES[(0.10, 0.05)]["udmax"]
        assert hits >= 99

    def test_unknown_trim_has_no_table(self):
        with pytest.raises(ConfigError, match="no critical values"):
            ud_wd_max(SegmentationProblem(np.arange(100.0), 2, 0.2))


class TestCriticalTable:
    def test_monotone_in_k(self):
        for cv in CRITICAL_VALUES.values():
            s = [cv["supf"][k] for k in sorted(cv["supf"])]
            assert all(b < a for a, b in zip(s, s[1:]))
            q = [cv["seq"][l] for l in sorted(cv["seq"])]
            assert all(b > a for a, b in zip(q, q[1:]))
            assert cv["seq"][0] == cv["supf"][1]
            assert cv["udmax"] >= cv["supf"][1]


class TestSequential:
    def test_three_levels_detects_second_break(self):
        y = step([0.0, 1.0, 2.0], [40, 40, 40], 0.3, 1)
        prob = SegmentationProblem(y, 5, 0.1)
        assert seq_test(prob, 1) > 50

    def test_one_step_no_further_break(self):
        crit = CRITICAL_VALUES[(0.10, 0.05)]["seq"][1]
        rej = 0
        for seed in range(200):
            prob = SegmentationProblem(step([0.0, 1.0], [60, 60], 0.3, seed), 5, 0.1)
            rej += seq_test(prob, 1) > crit
        assert rej / 200 < 0.10

    def test_not_applicable(self):
        # h = 5; two breaks leave three segments of 6-7 points, all < 2h
        prob = SegmentationProblem(step([0.0, 1.0, 0.0], [7, 6, 7]), 2, 0.25)
        assert prob.h == 5
        with pytest.raises(NotApplicable):
            seq_test(prob, 2)

    def test_matches_enumeration(self, rng):
        y = step([0, 1, 1.5], [15, 10, 15], 0.4, 9)
        prob = SegmentationProblem(y, 3, 0.1)
        tab = direct_ssr_table(y)
        (d,), ssr1 = enumerate_partitions(y, 1, 4, tab)
        best = 0.0
        for s, e in ((0, d), (d, 40)):
            for j in range(s + 4, e - 3):
                best = max(best, tab[s, e - 1] - tab[s, j - 1] - tab[j, e - 1])
        assert seq_test(prob, 1) == pytest.approx(best / (ssr1 / (40 - 2)), rel=1e-9)


class TestSelect:
    def test_constant(self):
        assert select_num_breaks(SegmentationProblem(np.full(242, 0.5), 5, 0.1)).m == 0

    def test_single_step(self):
        ms = [select_num_breaks(SegmentationProblem(step([0.4, 0.6], [121, 121], 0.05, s), 5, 0.1)).m for s in range(100)]
        assert np.mean(np.array(ms) == 1) >= 0.9

    def test_two_steps(self):
        prob = SegmentationProblem(step([0.4, 0.6, 0.3], [80, 80, 82], 0.05, 1), 5, 0.1)
        tests = select_num_breaks(prob)
        assert tests.m == 2
        assert tests.any_break
        d = tests.to_dict()
        assert d["selected_m"] == 2
        assert [r["l"] for r in d["sequential"]] == [1, 2]

    def test_cap(self, caplog):
        # six clear regimes but M = 2
        y = step([0, 5, 0, 5, 0, 5], [20] * 6, 0.1)
        tests = select_num_breaks(SegmentationProblem(y, 2, 0.1))
        assert tests.m == 2
        assert tests.cap_reached


class TestArgmaxDistribution:
    def test_cdf_shape(self):
        assert argmax_cdf(0.0) == 0.5
        xs = np.linspace(-40, 40, 81)
        v = [argmax_cdf(x) for x in xs]
        assert all(b >= a for a, b in zip(v, v[1:]))
        assert v[0] < 1e-3 and v[-1] > 1 - 1e-3
        assert argmax_cdf(3.0) + argmax_cdf(-3.0) == pytest.approx(1.0)
        assert argmax_cdf(1e4) == pytest.approx(1.0)

    def test_quantile_inverts(self):
        c = argmax_quantile(0.975)
        assert argmax_cdf(c) == pytest.approx(0.975, abs=1e-10)
        assert 10.5 < c < 11.5
        assert argmax_quantile(0.025) == pytest.approx(-c)

    def test_cdf_against_simulated_brownian_argmax(self):
        # two-sided random walk approximation of W(s) - |s|/2
        rng = np.random.default_rng(5)
        dt, smax, n = 0.02, 60.0, 4000
        k = int(smax / dt)
        out = np.empty(n)
        for r in range(n):
            right = np.cumsum(rng.standard_normal(k) * math.sqrt(dt) - 0.5 * dt)
            left = np.cumsum(rng.standard_normal(k) * math.sqrt(dt) - 0.5 * dt)
            ir, il = int(np.argmax(right)), int(np.argmax(left))
            if max(right[ir], 0.0) >= max(left[il], 0.0):
                out[r] = (ir + 1) * dt if right[ir] > 0 else 0.0
            else:
                out[r] = -(il + 1) * dt
        for x in (1.0, 3.0, 8.0):
            emp = np.mean(out <= x)
            assert emp == pytest.approx(argmax_cdf(x), abs=0.03)


class TestConfidenceInterval:
    def _fit(self, y, m=1):
        return dp_partition(SegmentationProblem(y, 1, 0.1), m)

    def test_noiseless_minimal_width(self):
        y = step([0.0, 1.0], [50, 50])
        fit = self._fit(y)
        assert break_confidence_interval(fit, y, 1) == (49, 51)

    def test_quarter_width_when_shift_doubles(self):
        rng = np.random.default_rng(3)
        noise = 0.3 * rng.standard_normal(200)
        y1 = np.repeat([0.0, 0.2], 100) + noise
        y2 = np.repeat([0.0, 0.4], 100) + noise
        f1 = bk.BreakFit(1, (100,), (0.0, 0.2), 0.0, 200)
        f2 = bk.BreakFit(1, (100,), (0.0, 0.4), 0.0, 200)
        lo1, hi1 = break_confidence_interval(f1, y1, 1)
        lo2, hi2 = break_confidence_interval(f2, y2, 1)
        c = argmax_quantile(0.975)
        lrv = bartlett_lrv(noise)
        assert hi1 - 100 == min(99, math.ceil(c * lrv / 0.04))
        assert hi2 - 100 == math.ceil(c * lrv / 0.16)
        assert abs((hi1 - 100) / (hi2 - 100) - 4) <= 4 / (hi2 - 100)

    def test_zero_shift(self):
        fit = bk.BreakFit(1, (5,), (1.0, 1.0), 0.0, 10)
        with pytest.raises(UndefinedIntervalError):
            break_confidence_interval(fit, np.ones(10), 1)

    def test_coverage(self):
        cover = 0
        for seed in range(500):
            y = simulate_mean_shift(StepSpec((0.5, 0.63), (121,), sigma=0.05, T=242, seed=seed)).values
            fit = dp_partition(SegmentationProblem(y, 5, 0.1), 1)
            lo, hi = break_confidence_interval(fit, y, 1)
            cover += lo <= 121 <= hi
        assert 0.90 <= cover / 500 <= 0.99


class TestHAC:
    def test_bandwidth(self):
        assert bk.auto_bandwidth(100) == 4
        assert bk.auto_bandwidth(500) == math.floor(4 * 5 ** (2 / 9))

    def test_lrv_direct(self, rng):
        u = rng.standard_normal(50)
        L = 3
        g = [np.sum(u[j:] * u[: 50 - j]) / 50 for j in range(L + 1)]
        expect = g[0] + 2 * sum((1 - j / (L + 1)) * g[j] for j in range(1, L + 1))
        assert bartlett_lrv(u, L) == pytest.approx(expect, rel=1e-12)

    def test_iid_matches_classical(self):
        ratios = []
        for seed in range(200):
            y = np.random.default_rng(seed).standard_normal(1000)
            fit = bk.BreakFit(1, (500,), (float(y[:500].mean()), float(y[500:].mean())), 0.0, 1000)
            hac = regime_means_hac(fit, y)
            cl = classical_se(fit, y)
            ratios.append(hac[0][1] / cl[0])
        assert 0.7 <= np.median(ratios) <= 1.4
        assert np.mean((np.array(ratios) >= 0.7) & (np.array(ratios) <= 1.4)) > 0.95

    def test_ar1_exceeds_classical(self):
        bigger = 0
        for seed in range(100):
            y = simulate_mean_shift(StepSpec((0.0, 1.0), (500,), sigma=1.0, T=1000, rho=0.5, seed=seed)).values
            fit = dp_partition(SegmentationProblem(y, 1, 0.1), 1)
            bigger += regime_means_hac(fit, y)[0][1] > classical_se(fit, y)[0]
        assert bigger >= 95

    def test_short_segment(self):
        fit = bk.BreakFit(1, (1,), (0.0, 1.0), 0.0, 5)
        with pytest.raises(ValueError):
            regime_means_hac(fit, np.arange(5.0))


class TestReport:
    def test_table2_shape(self):
        y = step([0.47, 0.6, 0.5], [80, 80, 82], 0.02, 4)
        prob = SegmentationProblem(y, 5, 0.1, np.datetime64("1988-01"))
        fit, tests = bk.analyze(prob)
        rep = bk.table2_report(fit, tests)
        assert rep["m"] == 2
        assert rep["breaks"][0]["month"] == "1994:8"
        assert rep["regimes"][0]["formatted"].count("(") == 1
        lo, hi = rep["breaks"][0]["ci_index"]
        assert lo <= 80 <= hi
