import math

import numpy as np
import pytest
from conftest import make_cfg

from mimo_energy import analytics
from mimo_energy.analytics import (
    MomentPair,
    ThetaConvergenceError,
    battery_requirement,
    inverse_gain_moment,
    mean_energy,
    moments,
    outage_probability,
    saturation_integral,
    theta,
    variance_fading,
    variance_mobility,
)
from mimo_energy.cell_model import CellGeometry, MobilityParams, radial_modes, sample_uniform_disk
from mimo_energy.special_math import ZeroKind, gaussian_q_inv, integrate


class TestInverseGainMoments:
    def test_first_moment(self, geom):
        assert inverse_gain_moment(1, geom) == pytest.approx(1 / 3 + 1e-4, rel=1e-15)

    @pytest.mark.parametrize("beta,r0", [(4.0, 0.1), (2.5, 0.3), (6.0, 0.0)])
    def test_second_moment_sampling_oracle(self, beta, r0):
        geom = CellGeometry(1.3, r0, beta)
        rng = np.random.default_rng(31)
        p = sample_uniform_disk(rng, geom.radius_R, 1_000_000)
        inv = np.sum(p**2, axis=-1) ** (beta / 2) + r0**beta
        sq = inv**2
        se = sq.std(ddof=1) / math.sqrt(sq.size)
        assert abs(sq.mean() - inverse_gain_moment(2, geom)) <= 3 * se
        assert abs(inv.mean() - inverse_gain_moment(1, geom)) <= 3 * inv.std(ddof=1) / math.sqrt(inv.size)

    def test_bad_order(self, geom):
        with pytest.raises(ValueError):
            inverse_gain_moment(3, geom)


class TestMean:
    def test_short_horizon(self):
        assert mean_energy(make_cfg(horizon_T=2.0)) == pytest.approx(0.66687, abs=1e-5)

    def test_large_beta_limit(self):
        for beta in (20.0, 60.0):
            cfg = make_cfg(geom=CellGeometry(0.9, 0.0, beta))
            assert mean_energy(cfg) == pytest.approx(10 * 2 * 0.9**beta / (beta + 2), rel=1e-14)
        assert mean_energy(make_cfg(geom=CellGeometry(0.9, 0.0, 300.0))) < 1e-14

    def test_linear_in_horizon_and_rho(self, cfg):
        m = mean_energy(cfg)
        assert mean_energy(cfg.with_(horizon_T=20.0)) == pytest.approx(2 * m, rel=1e-14)
        assert mean_energy(cfg.with_(rho=3.0)) == pytest.approx(3 * m, rel=1e-14)


class TestSaturationIntegral:
    @pytest.mark.parametrize("a", [1e-6, 0.1, 0.5, 0.999, 1.0, 10.0, 1e4])
    def test_against_quadrature(self, a):
        q = integrate(lambda t: (-np.expm1(-a * t)) ** 2, 0.0, 1.0)
        assert saturation_integral(a) == pytest.approx(q, rel=1e-10, abs=1e-300)

    def test_known_value(self):
        assert saturation_integral(1.0) == pytest.approx(0.168091240724578, abs=1e-14)

    def test_limits(self):
        assert saturation_integral(0.0) == 0.0
        assert saturation_integral(1e-3) == pytest.approx(1e-6 / 3, rel=1e-3)
        assert saturation_integral(1e9) == pytest.approx(1.0, abs=2e-9)
        with pytest.raises(ValueError):
            saturation_integral(-1.0)


class TestTheta:
    def test_reference_config(self, cfg):
        s = theta(cfg)
        assert s.total == pytest.approx(0.00890707671, rel=1e-7)
        assert s.zero_kind is ZeroKind.J1
        assert s.truncation_bound <= 1e-8 * s.total
        assert len(s.table()) == len(s.terms)

    def test_slow_motion_limit(self):
        # sum_i w_i k_i^2 = mean |grad r^beta|^2 = beta, so Theta ~ (2 beta / 3) s^2 as s -> 0
        ratios, totals = [], []
        for s in (1e-1, 1e-2, 1e-3):
            cfg = make_cfg(mob=MobilityParams.from_diffusion(s / 10.0, 0.01))
            totals.append(theta(cfg).total)
            ratios.append(totals[-1] / (2 * 4.0 * s * s / 3))
        assert totals[0] > totals[1] > totals[2] > 0
        assert ratios[0] < ratios[1] < ratios[2] < 1
        assert 1 - ratios[2] < 0.25

    def test_gradient_identity(self):
        m = radial_modes(ZeroKind.J1, 400, 4.0)
        assert np.sum(m.weights * m.k**2) == pytest.approx(4.0, rel=5e-3)

    def test_extreme_slow_motion_reports_non_convergence(self):
        cfg = make_cfg(mob=MobilityParams(1e-7, 1.0))
        with pytest.raises(ThetaConvergenceError) as info:
            theta(cfg)
        partial = info.value.partial
        assert len(partial.terms) == analytics.MAX_THETA_TERMS
        assert 0 < partial.total < 1e-20

    def test_short_horizon_vanishes(self):
        totals = [theta(make_cfg(horizon_T=T)).total for T in (10.0, 1.0, 0.1, 0.04)]
        assert totals == sorted(totals, reverse=True)
        assert totals[-1] < 0.02 * totals[0]

    def test_saturated_limit(self):
        cfg = make_cfg(horizon_T=1e7)
        s = theta(cfg, rel_tol=1e-7)
        modes = radial_modes(ZeroKind.J1, len(s.terms), 4.0)
        bare = np.sum(2 * modes.weights / modes.k**2)
        assert s.total == pytest.approx(bare, rel=1e-6)

    def test_other_zero_kind_fails_to_converge(self, cfg):
        with pytest.raises(ThetaConvergenceError) as info:
            theta(cfg, zero_kind=ZeroKind.J1_PRIME, max_terms=30)
        assert len(info.value.partial.terms) == 30
        assert "did not converge" in str(info.value)

    def test_bad_tolerance(self, cfg):
        with pytest.raises(ValueError):
            theta(cfg, rel_tol=0.0)


class TestVariances:
    def test_mobility_reference_value(self, cfg):
        assert variance_mobility(cfg) == pytest.approx(0.0222676918, rel=1e-7)

    def test_mobility_scales_as_inverse_k(self, cfg):
        a = variance_mobility(cfg.with_(K=16, N=32))
        b = variance_mobility(cfg.with_(K=64, N=128))
        assert b == pytest.approx(a / 4, rel=1e-10)

    def test_mobility_quadratic_in_rho(self, cfg):
        s = theta(cfg)
        assert variance_mobility(cfg.with_(rho=2.0), s) == pytest.approx(4 * variance_mobility(cfg, s), rel=1e-14)

    def test_fading_zero_without_coherence_time(self, cfg):
        assert variance_fading(cfg) == 0.0

    def test_fading_formula(self, cfg):
        c = cfg.with_(tau_d=0.01)
        expected = 10 * 0.01 * 1.0 * 0.5**3 / 0.5**3 / 16**2 * inverse_gain_moment(2, cfg.geom)
        assert variance_fading(c) == pytest.approx(expected, rel=1e-14)
        big = c.with_(K=64, N=128)
        assert variance_fading(big) == pytest.approx(variance_fading(c) / 16, rel=1e-14)

    def test_moments_sum(self, cfg):
        m = moments(cfg.with_(tau_d=0.01))
        assert m.variance_total == pytest.approx(m.variance_mobility + m.variance_fading, rel=1e-15)

    def test_horizon_linearity(self):
        a = moments(make_cfg(horizon_T=10.0))
        b = moments(make_cfg(horizon_T=20.0))
        assert b.mean_energy / a.mean_energy == pytest.approx(2.0, rel=1e-12)
        assert b.variance_mobility / a.variance_mobility == pytest.approx(2.0, rel=0.02)


class TestMomentPair:
    def test_from_mean_variance(self):
        m = MomentPair.from_mean_variance(1.73e3, 5.65e4)
        assert m.variance_total == 5.65e4
        assert m.std == pytest.approx(math.sqrt(5.65e4))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            MomentPair(1.0, -1.0)


class TestOutageAndBattery:
    m = MomentPair.from_mean_variance(1.73e3, 5.65e4)

    def test_outage_at_mean(self):
        assert outage_probability(1.73e3, self.m) == pytest.approx(0.5, abs=1e-15)

    def test_outage_at_quantile(self):
        eta = 1.73e3 + 2.3263 * self.m.std
        assert outage_probability(eta, self.m) == pytest.approx(0.01, rel=1e-3)

    def test_battery_worked_example(self):
        eta = battery_requirement(0.01, self.m)
        assert eta == pytest.approx(2.28e3, rel=0.005)
        assert eta == pytest.approx(1.73e3 + gaussian_q_inv(0.01) * math.sqrt(5.65e4), rel=1e-15)

    def test_battery_median(self):
        assert battery_requirement(0.5, self.m) == pytest.approx(1.73e3, abs=1e-12)

    def test_battery_monotone(self):
        assert battery_requirement(0.001, self.m) > battery_requirement(0.01, self.m)

    @pytest.mark.parametrize("eps", [1e-6, 1e-3, 0.05, 0.3, 0.7])
    def test_round_trip(self, eps):
        assert outage_probability(battery_requirement(eps, self.m), self.m) == pytest.approx(eps, rel=1e-9)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            outage_probability(1.0, MomentPair(1.0, 0.0))


class TestReports:
    def test_theory_report(self, cfg):
        rep = analytics.theory_report(cfg)
        assert rep["mean_energy"] == pytest.approx(mean_energy(cfg))
        assert rep["theta"]["zero_kind"] == "ZerosOfJ1"
        assert rep["achievable_rate_bits_per_hz"] == 1.0
        assert any("does not converge" in n for n in rep["notes"])

    def test_reference_comparison(self, cfg):
        rows = analytics.reference_comparison(cfg)
        assert len(rows) == len(analytics.REFERENCE_TABLE)
        first = rows[0]
        assert first["theory_mean"] == pytest.approx(0.66687, abs=1e-5)
        assert first["reference_mean"] == 1.33
