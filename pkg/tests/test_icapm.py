import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icapm_breaks import icapm
from icapm_breaks.data import InfoSets
from icapm_breaks.errors import ConditioningError, SaturationError
from icapm_breaks.estimate import numeric_gradient
from icapm_breaks.icapm import (
    N_PARAMS,
    PENALTY,
    ModelParams,
    QmlObjective,
    c_lower_from_intercept,
    conditional_means,
    garch_step,
    integration_degree,
    neg_loglik,
    price_of_risk,
    run_filter,
    stationarity_report,
    unconditional_covariance,
)
from icapm_breaks.simulate import DgpSpec, reference_params, simulate_icapm

from conftest import random_theta
from oracles import bivariate_normal_loglik

A_TAB = (0.103, 0.133)
B_TAB = (0.597, 0.821)


def params(**kw):
    base = dict(kappa_w=np.zeros(5), kappa_i=np.zeros(4), delta_int=np.zeros(4), c_lower=[1.0, 0.0, 1.0], a=A_TAB, b=B_TAB)
    base.update(kw)
    return ModelParams(**base)


def const_info(T, start="2000-01"):
    one = np.ones((T, 1))
    return InfoSets(np.datetime64(start), np.hstack([one, np.zeros((T, 4))]), np.hstack([one, np.zeros((T, 3))]), np.hstack([one, np.zeros((T, 3))]))


def random_psd(rng):
    L = rng.standard_normal((2, 2))
    return L @ L.T


class TestModelParams:
    def test_round_trip(self, rng):
        th = rng.standard_normal(N_PARAMS)
        np.testing.assert_array_equal(ModelParams.from_vector(th).to_vector(), th)
        p = ModelParams.from_vector(th)
        assert ModelParams.from_dict(p.to_dict()) == p

    def test_ordering(self):
        th = np.arange(20.0)
        p = ModelParams.from_vector(th)
        assert list(p.kappa_w) == [0, 1, 2, 3, 4]
        assert list(p.kappa_i) == [5, 6, 7, 8]
        assert list(p.delta_int) == [9, 10, 11, 12]
        assert list(p.c_lower) == [13, 14, 15]
        assert list(p.a) == [16, 17] and list(p.b) == [18, 19]

    def test_rejects_non_finite(self):
        th = np.zeros(20)
        th[3] = np.nan
        with pytest.raises(ValueError):
            ModelParams.from_vector(th)
        with pytest.raises(ValueError):
            ModelParams.from_vector(np.zeros(19))

    def test_intercept_cholesky(self, rng):
        M = random_psd(rng) + 0.1 * np.eye(2)
        c = c_lower_from_intercept(M)
        np.testing.assert_allclose(params(c_lower=c).intercept, M, rtol=1e-12)


class TestPriceOfRisk:
    def test_zero(self):
        assert price_of_risk([0.3, -1.0], [0.0, 0.0]) == 1.0

    def test_table_constant(self):
        k = [0.354, 1.012, -0.655, 0.679, -0.867]
        assert price_of_risk(k, [1, 0, 0, 0, 0]) == pytest.approx(1.42475, abs=1e-5)

    def test_average_price(self):
        assert price_of_risk([math.log(3.47), 0, 0, 0, 0], [1, 0, 0, 0, 0]) == pytest.approx(3.47, rel=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            price_of_risk([1.0, 2.0], [1.0])

    def test_saturation(self):
        with pytest.raises(SaturationError):
            price_of_risk([800.0], [1.0])
        with pytest.raises(OverflowError):
            price_of_risk([-701.0], [1.0])

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
    def test_positive(self, k):
        assert price_of_risk(k, np.ones(len(k))) > 0


class TestIntegrationDegree:
    def test_zero(self):
        assert integration_degree([0.0, 1.0], [1.0, 0.0]) == 0.0

    def test_one(self):
        assert integration_degree([1.0], [1.0]) == pytest.approx(1 - math.exp(-1), abs=1e-12)

    @given(st.floats(-30, 30))
    def test_even_and_bounded(self, x):
        v = integration_degree([x], [1.0])
        assert v == integration_degree([-x], [1.0])
        assert 0.0 <= v <= 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            integration_degree([1.0], [1.0, 2.0])

    def test_constant_floor(self):
        # with only the constant active the floor is 1 - exp(-d0^2)
        assert integration_degree([0.201, 0.5, 0.5, 0.5], [1, 0, 0, 0]) == pytest.approx(1 - math.exp(-(0.201**2)))


class TestGarchStep:
    def test_base(self):
        p = params(c_lower=[0.5, 0.2, 0.7])
        np.testing.assert_array_equal(garch_step(p, [0, 0], np.zeros((2, 2))), p.intercept)

    def test_off_diagonal(self):
        p = params(c_lower=[1.0, 0.0, 1.0])
        H = garch_step(p, [1.0, 1.0], np.array([[1.0, 1.0], [1.0, 1.0]]))
        assert H[0, 1] == pytest.approx(0.503836, abs=1e-12)
        assert H[1, 0] == H[0, 1]

    def test_non_symmetric(self):
        with pytest.raises(ValueError):
            garch_step(params(), [0, 0], np.array([[1.0, 0.2], [0.1, 1.0]]))

    def test_psd(self, rng):
        for _ in range(200):
            th = rng.standard_normal(20)
            p = ModelParams.from_vector(th)
            H = garch_step(p, rng.standard_normal(2) * 3, random_psd(rng))
            assert np.linalg.eigvalsh(H)[0] >= -1e-12
            np.testing.assert_array_equal(H, H.T)

    def test_superposition(self, rng):
        p = ModelParams.from_vector(rng.standard_normal(20))
        CC = p.intercept
        e1, e2 = rng.standard_normal(2), rng.standard_normal(2)
        H1, H2 = random_psd(rng), random_psd(rng)
        aa, bb = np.outer(p.a, p.a), np.outer(p.b, p.b)
        # linear in the outer product of the residuals
        lhs = garch_step(p, e1, H1) - CC - bb * H1
        np.testing.assert_allclose(lhs, aa * np.outer(e1, e1), atol=1e-12)
        # linear in h_prev with eps fixed
        s = garch_step(p, e2, H1 + H2) - garch_step(p, e2, H1) - garch_step(p, e2, H2) + garch_step(p, e2, np.zeros((2, 2)))
        np.testing.assert_allclose(s, 0.0, atol=1e-12)


class TestConditionalMeans:
    def test_integrated(self):
        H = np.array([[0.4, 0.3], [0.3, 0.5]])
        mu = conditional_means(2.0, 1.0, 1.0, H)
        assert mu[0] == 2.0 * 0.3 and mu[1] == 2.0 * 0.5

    def test_segmented(self):
        H = np.array([[0.4, 0.3], [0.3, 0.5]])
        assert conditional_means(2.0, 1.5, 0.0, H)[0] == pytest.approx(1.5 * 0.4)

    def test_arithmetic(self):
        H = np.array([[0.4, 0.3], [0.3, 0.9]])
        assert conditional_means(2.0, 1.0, 0.5, H)[0] == pytest.approx(0.5, abs=1e-15)

    def test_equal_prices_and_full_integration(self):
        # same kappa and information for both prices, phi = 1: mu_m = dw h_mw
        T = 30
        rng = np.random.default_rng(0)
        z = np.hstack([np.ones((T, 1)), rng.standard_normal((T, 3))])
        info = InfoSets(np.datetime64("2000-01"), np.hstack([z, np.zeros((T, 1))]), z, np.hstack([np.ones((T, 1)), np.zeros((T, 3))]))
        k = np.array([0.2, 0.1, -0.1, 0.3])
        p = params(kappa_w=np.r_[k, 0.0], kappa_i=k, delta_int=[40.0, 0, 0, 0])
        R = rng.standard_normal((T, 2))
        out = run_filter(p, R, info)
        np.testing.assert_allclose(out.price_world, out.price_local, rtol=1e-15)
        assert np.all(out.phi == 1.0)
        mu_m = R[:, 0] - out.eps[:, 0]
        np.testing.assert_allclose(mu_m, out.price_world * out.h_mw, rtol=1e-12, atol=1e-14)


class TestFilter:
    def test_identity_zero_residual(self):
        # C = I, a = b = 0, zero returns and zero prices -> H = I, eps = 0
        p = params(kappa_w=[-60.0, 0, 0, 0, 0], kappa_i=[-60.0, 0, 0, 0], a=[0, 0], b=[0, 0])
        out = run_filter(p, np.zeros((5, 2)), const_info(5), init="unconditional")
        np.testing.assert_allclose(out.ll, -math.log(2 * math.pi), atol=1e-12)

    def test_identity_unit_residual(self):
        p = params(kappa_w=[-60.0, 0, 0, 0, 0], kappa_i=[-60.0, 0, 0, 0], a=[0, 0], b=[0, 0])
        R = np.tile([1.0, 0.0], (4, 1))
        out = run_filter(p, R, const_info(4), init="unconditional")
        np.testing.assert_allclose(out.ll, -math.log(2 * math.pi) - 0.5, atol=1e-12)
        assert out.n_clamped > 0

    def test_brute_force_density(self, rng):
        done = seed = 0
        while done < 50:
            seed += 1
            T = int(rng.integers(20, 80))
            R, info, _ = simulate_icapm(DgpSpec(T=T, seed=seed))
            th = random_theta(rng)
            try:
                out = run_filter(ModelParams.from_vector(th), R, info)
            except ConditioningError:
                continue  # explosive in-mean feedback; no density to compare
            if np.max(np.abs(out.H)) > 1e4:
                continue  # same, not yet singular: scipy rejects such H, and 1e-10 is below float resolution
            done += 1
            assert out.loglik == pytest.approx(bivariate_normal_loglik(out.eps, out.H), abs=1e-10)
            assert out.loglik == pytest.approx(-neg_loglik(th, R, info), rel=1e-14)
            assert np.min(np.linalg.eigvalsh(out.H)) >= -1e-12
            assert np.all((out.phi >= 0) & (out.phi <= 1))
            assert np.all(out.price_world > 0) and np.all(out.price_local > 0)

    def test_recursion_by_hand(self):
        R, info, _ = simulate_icapm(DgpSpec(T=12, seed=3))
        p = reference_params()
        out = run_filter(p, R, info)
        H = np.cov(R, rowvar=False)
        for t in range(12):
            if t:
                H = garch_step(p, out.eps[t - 1], H)
            np.testing.assert_allclose(out.H[t], H, rtol=1e-12)
            dw = price_of_risk(p.kappa_w, info.global_z[t])
            di = price_of_risk(p.kappa_i, info.local_z[t])
            phi = integration_degree(p.delta_int, info.integration_z[t])
            np.testing.assert_allclose(out.eps[t], R[t] - conditional_means(dw, di, phi, H), rtol=1e-11, atol=1e-14)

    def test_unconditional_init(self):
        R, info, _ = simulate_icapm(DgpSpec(T=50, seed=1))
        p = reference_params()
        out = run_filter(p, R, info, init="unconditional")
        np.testing.assert_allclose(out.H[0], unconditional_covariance(p), rtol=1e-12)
        with pytest.raises(ValueError):
            run_filter(p, R, info, init="bogus")

    def test_singular(self):
        p = params(c_lower=[0, 0, 0], a=[0, 0], b=[0, 0])
        with pytest.raises(ConditioningError) as err:
            run_filter(p, np.random.default_rng(0).standard_normal((6, 2)), const_info(6))
        assert err.value.t == 1

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            run_filter(params(), np.zeros((5, 2)), const_info(6))

    def test_export_columns(self, tmp_path):
        R, info, _ = simulate_icapm(DgpSpec(T=20, seed=0))
        out = run_filter(reference_params(), R, info)
        out.write_csv(tmp_path / "phi.csv")
        header = (tmp_path / "phi.csv").read_text().splitlines()[0]
        assert header == "month,phi,price_world,price_local,h_m,h_w,h_mw,eps_m,eps_w,ll"

    def test_immutable(self):
        R, info, _ = simulate_icapm(DgpSpec(T=20, seed=0))
        out = run_filter(reference_params(), R, info)
        with pytest.raises(ValueError):
            out.phi[0] = 0.5


class TestObjective:
    def test_deterministic(self):
        R, info, _ = simulate_icapm(DgpSpec(T=200, seed=0))
        th = reference_params().to_vector()
        assert neg_loglik(th, R, info) == neg_loglik(th, R, info)

    def test_penalty(self):
        R, info, _ = simulate_icapm(DgpSpec(T=50, seed=0))
        obj = QmlObjective(R, info)
        th = np.zeros(20)
        assert obj(th) == PENALTY
        assert obj(np.full(20, np.nan)) == PENALTY
        assert obj.penalty_hits == 2
        assert math.isfinite(obj(reference_params().to_vector()))
        assert obj.penalty_hits == 2

    def test_landscape(self):
        R, info, _ = simulate_icapm(DgpSpec(T=2000, seed=11))
        obj = QmlObjective(R, info)
        th0 = reference_params().to_vector()
        f0 = obj(th0)
        for k in range(N_PARAMS):
            e = np.zeros(N_PARAMS)
            e[k] = 0.5
            assert f0 < obj(th0 + e), icapm.PARAM_NAMES[k]

    def test_gradient_schemes_agree(self, rng):
        R, info, _ = simulate_icapm(DgpSpec(T=400, seed=5))
        obj = QmlObjective(R, info)
        for _ in range(5):
            th = reference_params().to_vector() + rng.normal(0, 0.05, 20)
            g1 = numeric_gradient(obj, th, 1e-5)
            g2 = numeric_gradient(obj, th, 1e-6)
            scale = np.max(np.abs(g1))
            np.testing.assert_allclose(g1, g2, rtol=1e-3, atol=1e-3 * scale)


class TestStationarity:
    def test_table_values(self):
        rep = stationarity_report(params())
        # 0.133^2 + 0.821^2 = 0.017689 + 0.674041
        assert rep["ww"]["persistence"] == pytest.approx(0.69173, abs=1e-12)
        assert all(v["stationary"] for v in rep.values())

    def test_explosive(self):
        rep = stationarity_report(params(b=[1.0, 0.5]))
        assert not rep["mm"]["stationary"]
        assert unconditional_covariance(params(b=[1.0, 0.5])) is None
