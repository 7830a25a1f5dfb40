import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from cqsim.analytics import (
    AnalyticScenario,
    OverflowMode,
    UnstableScenarioError,
    exponent_cq_lqf,
    exponent_oq,
    exponent_pcq,
    lambda_star,
    mc_variance_lb_distance,
    mc_variance_time,
    mean_cumulative_arrivals,
    mean_lb_distance,
    onoff_transition_power,
    pool_simul_arrival_prob,
    predicted_critical_utilization,
    variance_lb_distance,
    variance_time_onoff,
)
from cqsim.core import ConfigError, derive_stream
from cqsim.traffic import OnOffModel

CHAIN = OnOffModel(p00=389 / 390, p01=1 / 390, p10=0.1, p11=0.9)


# --- independent oracles ------------------------------------------------------

def conjugate_numeric(x, lam):
    """sup_theta (theta x - log(1 - lam + lam e^theta)) by scalar optimization."""
    def neg(theta):
        return -(theta * x - math.log(1.0 - lam + lam * math.exp(theta)))

    res = minimize_scalar(neg, bounds=(-60.0, 60.0), method="bounded",
                          options={"xatol": 1e-14})
    return -res.fun


def oq_exponent_grid(N, C, lam):
    """Two-level numeric search over (gamma, theta), no closed-form conjugate."""
    lo = 1.0 / (N - C)
    gammas = np.geomspace(lo * (1 + 1e-12), lo * 4096, 3000)
    vals = np.array([g * conjugate_numeric((C + 1.0 / g) / N, lam) for g in gammas])
    k = int(vals.argmin())
    a = gammas[max(k - 1, 0)]
    b = gammas[min(k + 1, len(gammas) - 1)]
    res = minimize_scalar(
        lambda g: g * conjugate_numeric((C + 1.0 / g) / N, lam),
        bounds=(a, b), method="bounded", options={"xatol": 1e-14},
    )
    return N * N * min(res.fun, vals[k])


class TestLambdaStar:
    def test_vanishes_at_mean(self):
        assert lambda_star(0.25, 0.25) == 0.0

    def test_boundary_value(self):
        assert lambda_star(1.0, 0.5) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_closed_form_point(self):
        assert lambda_star(0.5, 0.25) == pytest.approx(0.143841, abs=1e-6)

    def test_outside_unit_interval_infinite(self):
        assert lambda_star(1.2, 0.5) == math.inf
        assert lambda_star(-0.1, 0.5) == math.inf

    def test_rejects_bad_lam(self):
        with pytest.raises(ConfigError):
            lambda_star(0.5, 0.0)

    def test_matches_numeric_conjugate(self):
        for x in (0.05, 0.3, 0.7, 0.99):
            for lam in (0.02, 0.25, 0.6):
                assert lambda_star(x, lam) == pytest.approx(
                    conjugate_numeric(x, lam), abs=1e-9
                )


class TestExponentOq:
    def test_vanishes_at_capacity(self):
        for n in (2, 8):
            e, _ = exponent_oq(n, 1.0, 1.0 / n - 1e-6)
            assert e < 1e-3

    def test_monotone_decreasing_in_lam(self):
        e1, _ = exponent_oq(32, 1.0, 0.01)
        e2, _ = exponent_oq(32, 1.0, 0.02)
        assert e1 > e2

    def test_grid_search_agreement(self):
        for n, lam in [(2, 0.1), (8, 0.05), (32, 0.02), (32, 0.028)]:
            e, _ = exponent_oq(n, 1.0, lam)
            ref = oq_exponent_grid(n, 1.0, lam)
            assert e == pytest.approx(ref, rel=1e-6)

    def test_rejects_unstable(self):
        with pytest.raises(UnstableScenarioError):
            exponent_oq(4, 1.0, 0.3)

    def test_gamma_probe_guard(self):
        # returned infimum is <= objective at random feasible gammas
        rng = derive_stream(5, "probe")
        for n, lam in [(2, 0.2), (32, 0.025)]:
            e, g_star = exponent_oq(n, 1.0, lam)
            lo = 1.0 / (n - 1.0)
            for u in rng.uniform(64):
                g = lo * (1.0 + 1000.0 * u)
                probe = n * n * g * lambda_star((1.0 + 1.0 / g) / n, lam)
                assert e <= probe + 1e-9 * max(probe, 1.0)


class TestExponentCqLqf:
    def test_dominant_mode_high_load(self):
        _, mode = exponent_cq_lqf(32, 1.0, 0.9 / 32)
        assert mode.n_star == 32

    def test_dominant_mode_low_load(self):
        _, mode = exponent_cq_lqf(32, 1.0, 0.5 / 32)
        assert mode.n_star == 2

    def test_never_exceeds_oq(self):
        for mu in np.linspace(0.05, 0.95, 19):
            e_cq, _ = exponent_cq_lqf(32, 1.0, mu / 32)
            e_oq, _ = exponent_oq(32, 1.0, mu / 32)
            assert e_cq <= e_oq + 1e-12

    def test_mode_tuple_contents(self):
        e, mode = exponent_cq_lqf(16, 1.0, 0.4 / 16)
        assert mode.lam_d == 0.4 / 16
        assert mode.C_d == 1.0
        assert mode.B_d == mode.n_star
        assert mode.gamma_star > 0


class TestExponentPcq:
    def test_degenerate_pooling_equals_cq(self):
        for mu in (0.3, 0.7, 0.9):
            e_p, m_p = exponent_pcq(32, 1.0, mu / 32, 1, 1)
            e_c, m_c = exponent_cq_lqf(32, 1.0, mu / 32)
            assert e_p == pytest.approx(e_c, rel=1e-12)
            assert m_p.n_star == m_c.n_star

    def test_w4_low_load_mode(self):
        _, mode = exponent_pcq(32, 1.0, 0.7 / 32, 4, 1)
        assert mode.n_star == 4

    def test_1xm_scaling_with_r_prime_one(self):
        for mu in (0.1, 0.5, 0.9):
            e_p, mode = exponent_pcq(32, 1.0, mu / 32, 1, 4)
            e_c, _ = exponent_cq_lqf(32, 1.0, mu / 32)
            assert e_p == pytest.approx(4.0 * e_c, rel=1e-9)
            assert mode.lam_d == pytest.approx(mu / 32)  # r' = 1

    def test_mode_buffer_multiple(self):
        _, mode = exponent_pcq(32, 1.0, 0.9 / 32, 2, 2)
        assert mode.B_d == mode.n_star * 2


class TestPredictedCriticalUtilization:
    def test_all_full(self):
        mode = OverflowMode(n_star=32, lam_d=0.028, C_d=1.0, B_d=32, gamma_star=5.0)
        assert predicted_critical_utilization(mode, 32, 40) == 1.0

    def test_low_mode_limit(self):
        mode = OverflowMode(n_star=2, lam_d=1e-9, C_d=1.0, B_d=2, gamma_star=1.0)
        assert predicted_critical_utilization(mode, 32, 40) == pytest.approx(2 / 32, abs=1e-6)

    def test_between_zero_and_one(self):
        _, mode = exponent_cq_lqf(32, 1.0, 0.5 / 32)
        eta = predicted_critical_utilization(mode, 32, 40)
        assert 0.0 < eta <= 1.0


class TestPoolSimulArrival:
    def test_k_zero_lam_zero(self):
        assert pool_simul_arrival_prob(4, 2, 0.0, 0) == 1.0

    def test_binomial_point(self):
        assert pool_simul_arrival_prob(4, 2, 0.1, 2) == pytest.approx(0.1536)

    def test_normalization(self):
        total = sum(pool_simul_arrival_prob(6, 3, 0.05, k) for k in range(7))
        assert total == pytest.approx(1.0, rel=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(ConfigError):
            pool_simul_arrival_prob(4, 2, 0.6, 1)
        with pytest.raises(ConfigError):
            pool_simul_arrival_prob(4, 2, 0.1, 5)


# --- variance-time forms --------------------------------------------------------

def recursion_variance_time(model, t):
    """Exact per-slot recursion for Var(Y(t)) from a stationary start."""
    p01, p10, p00, p11 = model.p01, model.p10, model.p00, model.p11
    ey1, ey0 = 1.0, 0.0
    ey1sq, ey0sq = 1.0, 0.0
    for _ in range(t - 1):
        n_ey1 = p11 * (1 + ey1) + p10 * (1 + ey0)
        n_ey0 = p01 * ey1 + p00 * ey0
        n_ey1sq = p11 * (1 + 2 * ey1 + ey1sq) + p10 * (1 + 2 * ey0 + ey0sq)
        n_ey0sq = p01 * ey1sq + p00 * ey0sq
        ey1, ey0, ey1sq, ey0sq = n_ey1, n_ey0, n_ey1sq, n_ey0sq
    d = p01 + p10
    mean = (p01 * ey1 + p10 * ey0) / d
    second = (p01 * ey1sq + p10 * ey0sq) / d
    return second - mean * mean


def recursion_lb_distance(model, N, k, t):
    """Exact cycle recursion for the per-flow k-distance second moment."""
    pk = onoff_transition_power(model, k)
    pnk = onoff_transition_power(model, N - k)
    e = {0: 0.0, 1: 0.0}
    s = {0: 0.0, 1: 0.0}
    for _ in range(t):
        ne, ns = {}, {}
        for u in (0, 1):
            acc_e = acc_s = 0.0
            for v in (0, 1):
                for w_ in (0, 1):
                    p = pk[u, v] * pnk[v, w_]
                    inc = v - u
                    acc_e += p * (inc + e[w_])
                    acc_s += p * (inc * inc + 2 * inc * e[w_] + s[w_])
            ne[u], ns[u] = acc_e, acc_s
        e, s = ne, ns
    d = model.p01 + model.p10
    mean = (model.p01 * e[1] + model.p10 * e[0]) / d
    second = (model.p01 * s[1] + model.p10 * s[0]) / d
    return second - mean * mean


class TestVarianceTime:
    def test_single_slot_is_bernoulli_variance(self):
        lam = CHAIN.rate
        assert variance_time_onoff(CHAIN, 1) == pytest.approx(lam * (1 - lam), rel=1e-12)

    def test_mean_at_example_point(self):
        assert mean_cumulative_arrivals(CHAIN, 40) == pytest.approx(1.0, rel=1e-12)

    def test_matches_recursion(self):
        for t in (2, 3, 10, 40, 137, 1000):
            assert variance_time_onoff(CHAIN, t) == pytest.approx(
                recursion_variance_time(CHAIN, t), rel=1e-9
            )

    def test_matches_recursion_other_chain(self):
        model = OnOffModel(p00=0.6, p01=0.4, p10=0.3, p11=0.7)
        for t in (1, 2, 7, 50):
            assert variance_time_onoff(model, t) == pytest.approx(
                recursion_variance_time(model, t), rel=1e-9
            )

    def test_monte_carlo_quick(self):
        rng = derive_stream(11, "mc")
        for t in (10, 100):
            closed = variance_time_onoff(CHAIN, t)
            est = mc_variance_time(CHAIN, t, 200_000, rng)
            assert abs(est - closed) / closed < 0.05

    def test_rejects_degenerate(self):
        frozen = OnOffModel(p00=1.0, p01=0.0, p10=0.0, p11=1.0)
        with pytest.raises(ConfigError):
            variance_time_onoff(frozen, 10)


class TestTransitionPower:
    def test_rows_sum_to_one(self):
        for k in (0, 1, 5, 400):
            p = onoff_transition_power(CHAIN, k)
            assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_repeated_multiplication(self):
        m = np.array([[CHAIN.p00, CHAIN.p01], [CHAIN.p10, CHAIN.p11]])
        acc = np.eye(2)
        for k in range(1, 40):
            acc = acc @ m
            assert np.allclose(onoff_transition_power(CHAIN, k), acc, atol=1e-12)

    def test_converges_to_stationary(self):
        p = onoff_transition_power(CHAIN, 10**6)
        lam = CHAIN.rate
        assert np.allclose(p, [[1 - lam, lam], [1 - lam, lam]], atol=1e-9)


class TestLbDistance:
    def test_mean_is_zero(self):
        for k in (1, 7, 16):
            assert mean_lb_distance(CHAIN, 32, k, 10) == 0.0

    def test_symmetric_about_half(self):
        for t in (1, 10, 100):
            for k in range(1, 32):
                a, _ = variance_lb_distance(CHAIN, 32, k, t)
                b, _ = variance_lb_distance(CHAIN, 32, 32 - k, t)
                assert a == pytest.approx(b, rel=1e-12)

    def test_unimodal_peak_at_half(self):
        vals = [variance_lb_distance(CHAIN, 32, k, 10)[0] for k in range(1, 32)]
        assert int(np.argmax(vals)) + 1 == 16
        assert all(vals[i] <= vals[i + 1] + 1e-12 for i in range(15))

    def test_matches_recursion(self):
        for k in (1, 5, 16, 29):
            for t in (1, 3, 12, 60):
                lb, _ = variance_lb_distance(CHAIN, 32, k, t)
                ref = (32 - k) * recursion_lb_distance(CHAIN, 32, k, t) + k * recursion_lb_distance(
                    CHAIN, 32, 32 - k, t
                )
                assert lb == pytest.approx(ref, rel=1e-9)

    def test_balanced_below_original(self):
        for t in (1, 10, 100):
            for k in (1, 8, 16, 24):
                lb, orig = variance_lb_distance(CHAIN, 32, k, t)
                assert lb <= orig + 1e-9

    def test_monte_carlo_quick(self):
        rng = derive_stream(12, "mc")
        lb, _ = variance_lb_distance(CHAIN, 32, 16, 10)
        est = mc_variance_lb_distance(CHAIN, 32, 16, 10, 200_000, rng)
        assert abs(est - lb) / lb < 0.05


def test_analytic_scenario_mu():
    sc = AnalyticScenario(N=32, lam=0.025)
    assert sc.mu == pytest.approx(0.8)
    with pytest.raises(ConfigError):
        AnalyticScenario(N=32, lam=0.0)
