import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from mectwin import phy
from mectwin.params import RadioConfig

CFG = RadioConfig()


def mp_q(x):
    return mp.erfc(mp.mpf(x) / mp.sqrt(2)) / 2


def mp_q_inverse(p):
    # plain bisection on the high-precision tail function
    with mp.workdps(40):
        lo, hi = mp.mpf(-40), mp.mpf(40)
        for _ in range(200):
            mid = (lo + hi) / 2
            if mp_q(mid) > p:
                lo = mid
            else:
                hi = mid
        return (lo + hi) / 2


def mp_urllc_rate(N, g, P, alpha, cfg, eps):
    with mp.workdps(40):
        snr = mp.mpf(alpha) * g * P / (mp.mpf(cfg.Phi) * N * cfg.W * cfg.N0)
        v = 1 - 1 / (1 + snr) ** 2
        nw = mp.mpf(N) * cfg.W
        return nw / mp.log(2) * (mp.log(1 + snr) - mp.sqrt(v / (cfg.Ts * nw)) * mp_q_inverse(eps))


def mp_varrho(N, alpha, cfg, b, eps):
    with mp.workdps(40):
        tnw = mp.mpf(cfg.Ts) * N * cfg.W
        e = mp_q_inverse(eps) / mp.sqrt(tnw) + b * mp.log(2) / tnw
        return mp.mpf(cfg.Phi) * N * cfg.W * cfg.N0 / alpha * mp.expm1(e)


def quad_capacity(N, P, alpha, cfg):
    s = alpha * P / (N * cfg.W * cfg.N0)
    val, _ = integrate.quad(lambda g: math.log1p(s * g) * math.exp(-g), 0, np.inf,
                            epsabs=0, epsrel=1e-13, limit=400)
    return N * cfg.W / math.log(2) * val


class TestPathLoss:
    def test_unit_distance(self):
        assert phy.path_loss_gain(1.0) == pytest.approx(10 ** -3.53, rel=1e-14)

    def test_hundred_metres(self):
        assert phy.path_loss_db(100.0) == pytest.approx(110.5, abs=1e-12)

    def test_shadowing_adds(self):
        assert phy.path_loss_db(10.0, 8.0) == pytest.approx(80.9, abs=1e-12)

    @pytest.mark.parametrize("d", [0.0, -3.0])
    def test_rejects_nonpositive_distance(self, d):
        with pytest.raises(ValueError):
            phy.path_loss_gain(d)

    def test_link_carries_provenance(self):
        link = phy.link_from_geometry(50.0, -2.0)
        assert link.alpha == phy.path_loss_gain(50.0, -2.0)
        assert (link.distance_m, link.shadowing_db) == (50.0, -2.0)
        with pytest.raises(ValueError):
            phy.LinkGain(0.0)


class TestQInverse:
    def test_half_is_zero(self):
        assert phy.q_inverse(0.5) == pytest.approx(0.0, abs=1e-15)

    def test_tail_value(self):
        assert phy.q_inverse(5e-8) == pytest.approx(float(mp_q_inverse(5e-8)), rel=1e-10)
        assert phy.q_inverse(5e-8) == pytest.approx(5.326, abs=1e-3)

    @pytest.mark.parametrize("p", [1e-3, 1e-5, 1e-7, 1e-12, 0.3, 0.9])
    def test_round_trip(self, p):
        x = phy.q_inverse(p)
        assert float(mp_q(x)) == pytest.approx(p, rel=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 2.0])
    def test_domain(self, p):
        with pytest.raises(ValueError):
            phy.q_inverse(p)


class TestUrllcRate:
    def test_zero_power_clamps(self):
        assert phy.urllc_rate(4, 1.0, 0.0, 1e-10, CFG, 5e-8) == 0.0

    def test_half_error_is_shannon(self):
        N, g, P, a = 4, 0.7, 0.05, 1e-10
        snr = a * g * P / (N * CFG.W * CFG.N0)
        assert phy.urllc_rate(N, g, P, a, CFG, 0.5) == pytest.approx(N * CFG.W * math.log2(1 + snr), rel=1e-12)

    def test_against_high_precision(self):
        N, snr = 4, 100.0
        alpha = 1e-10
        P = snr * N * CFG.W * CFG.N0 / alpha
        ref = mp_urllc_rate(N, 1.0, P, alpha, CFG, 5e-8)
        assert phy.urllc_rate(N, 1.0, P, alpha, CFG, 5e-8) == pytest.approx(float(ref), rel=1e-10)

    def test_monotone_in_power_and_gain(self):
        grid = np.linspace(1e-4, 0.2, 120)
        rates = [phy.urllc_rate(6, 1.0, p, 1e-11, CFG, 5e-8) for p in grid]
        assert np.all(np.diff(rates) >= 0)
        gains = np.linspace(1e-3, 5.0, 120)
        rates = [phy.urllc_rate(6, g, 0.1, 1e-11, CFG, 5e-8) for g in gains]
        assert np.all(np.diff(rates) >= 0)


class TestPowerCoefficient:
    def test_no_data_no_power(self):
        assert phy.urllc_power_coefficient(8, 1e-10, CFG, 1e-300, 0.5) == pytest.approx(0.0, abs=1e-300)

    def test_against_high_precision(self):
        ref = mp_varrho(8, 1e-10, CFG, 256, 5e-8)
        assert phy.urllc_power_coefficient(8, 1e-10, CFG, 256, 5e-8) == pytest.approx(float(ref), rel=1e-10)

    def test_inverse_in_alpha(self):
        a = phy.urllc_power_coefficient(8, 1e-10, CFG, 256, 5e-8)
        b = phy.urllc_power_coefficient(8, 2e-10, CFG, 256, 5e-8)
        assert b == pytest.approx(a / 2, rel=1e-14)

    def test_decreasing_up_to_stationary_point(self):
        n_tilde = phy.urllc_stationary_subcarriers(CFG, 256, 5e-8)
        grid = np.linspace(0.5, n_tilde, 200)
        vals = [phy.urllc_power_coefficient(n, 1e-10, CFG, 256, 5e-8) for n in grid]
        assert np.all(np.diff(vals) < 0)

    def test_stationary_point_against_dense_scan(self):
        # independent oracle: mpmath evaluation on a fine grid around the optimum
        n_tilde = phy.urllc_stationary_subcarriers(CFG, 256, 5e-8)
        grid = np.linspace(30, 55, 2501)
        vals = [mp_varrho(float(n), 1.0, CFG, 256, 5e-8) for n in grid]
        best = grid[int(np.argmin(vals))]
        assert abs(n_tilde - best) <= 0.02


class TestErgodicCapacity:
    def test_zero_power(self):
        assert phy.ergodic_capacity(16, 0.0, 1e-11, CFG) == 0.0

    def test_increasing_in_power(self):
        caps = [phy.ergodic_capacity(16, p, 1e-11, CFG) for p in np.linspace(0, 0.2, 100)]
        assert np.all(np.diff(caps) > 0)

    def test_against_adaptive_quadrature(self, rng):
        for _ in range(20):
            N = rng.uniform(0.1, 128)
            P = rng.uniform(1e-4, 0.2)
            alpha = 10 ** rng.uniform(-14, -8)
            ref = quad_capacity(N, P, alpha, CFG)
            assert phy.ergodic_capacity(N, P, alpha, CFG) == pytest.approx(ref, rel=1e-8)

    def test_extreme_snr_against_mpmath(self):
        for s in (1e-6, 1e-2, 1.0, 1e3, 1e8):
            ref = mp.quad(lambda g: mp.log(1 + s * g) * mp.exp(-g), [0, 1, 10, mp.inf])
            assert phy.mean_log_gain(s) == pytest.approx(float(ref), rel=1e-12)

    def test_monte_carlo(self):
        rng = np.random.default_rng(7)
        N, alpha, P = 16, 1e-11, 0.2
        g = rng.exponential(size=10 ** 7)
        samples = N * CFG.W * np.log2(1 + alpha * g * P / (N * CFG.W * CFG.N0))
        se = samples.std(ddof=1) / math.sqrt(samples.size)
        assert abs(phy.ergodic_capacity(N, P, alpha, CFG) - samples.mean()) < 3 * se

    def test_slope_matches_finite_difference(self):
        for s in (1e-3, 0.5, 20.0, 1e5):
            h = s * 1e-6
            fd = (phy.mean_log_gain(s + h) - phy.mean_log_gain(s - h)) / (2 * h)
            assert phy.mean_log_gain_slope(s) == pytest.approx(fd, rel=1e-6)

    @pytest.mark.parametrize("s", [1e-9, 1e-3, 1.0, 37.0, 1e6, 1e12])
    def test_inverse_round_trip(self, s):
        assert phy.inverse_mean_log_gain(phy.mean_log_gain(s)) == pytest.approx(s, rel=1e-11)


class TestRequiredPower:
    def test_zero_target(self):
        assert phy.required_power_dt(0.0, 8, 1e-11, CFG) == 0.0

    def test_round_trip(self, rng):
        for _ in range(20):
            N, P, alpha = rng.uniform(0.5, 64), rng.uniform(1e-3, 0.19), 10 ** rng.uniform(-13, -9)
            r = phy.ergodic_capacity(N, P, alpha, CFG)
            assert phy.required_power_dt(r, N, alpha, CFG) == pytest.approx(P, rel=1e-6)

    def test_monotone(self):
        targets = np.linspace(1e3, 4e6, 100)
        ps = [phy.required_power_dt(t, 8, 1e-10, CFG) for t in targets]
        assert np.all(np.diff(ps) >= 0)

    def test_unreachable_is_inf(self):
        cap = phy.ergodic_capacity(4, CFG.Pmax, 1e-12, CFG)
        assert phy.required_power_dt(cap * 1.01, 4, 1e-12, CFG) == math.inf
        assert phy.required_power_dt(1e300, 4, 1e-12, CFG) == math.inf
