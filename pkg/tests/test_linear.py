"""Tests for the per-mode linear dynamics and its closed-form statistics.

Reference values were frozen from direct numerical integration (matrix
exponentials, adaptive double quadrature) and Monte Carlo, computed
independently of the package code.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pespec.linear import (
    OUMode,
    decay_sq_integral,
    exact_norm_sum,
    expected_norm_order,
    expected_time_energy,
    mode_energy_mean,
    mode_energy_variance,
    ou_exact_step,
    ou_mean_factor,
    strand_noise_chol,
    variance_time_energy,
)
from pespec.modes import ALL, BAROCLINIC, BAROTROPIC, ModeIndex, ModeSelector
from pespec.params import ModelParams

DEFAULTS = ModelParams()


def implied_cov(lam, f0, amp, zeta, dt):
    s11, s21, s22 = strand_noise_chol(lam, f0, amp, zeta, dt)
    return np.array([[s11 * s11, s11 * s21], [s11 * s21, s21 * s21 + s22 * s22]])


class TestModeSetup:
    def test_damping_splits_horizontal_and_vertical(self):
        p = ModelParams(nu_h=2.0, nu_z=0.25)
        m = OUMode.from_params(ModeIndex(1, 2, 3), p)
        assert m.lam == pytest.approx(2.0 * 5 + 0.25 * 9)

    def test_rotation_only_on_baroclinic(self):
        p = ModelParams(f0=3.0)
        assert OUMode.from_params(ModeIndex(1, 1, 0), p).f0 == 0.0
        assert OUMode.from_params(ModeIndex(1, 1, 2), p).f0 == 3.0

    def test_amplitude_power_law(self):
        m = OUMode.from_params(ModeIndex(1, 2, 3), ModelParams(sigma0=2.0, gamma=3.0))
        assert m.amp == pytest.approx(2.0 * 14.0 ** -1.5)


class TestMeanEvolution:
    def test_pure_decay(self):
        m = OUMode(ModeIndex(1, 0, 0), lam=2.0, f0=0.0, amp=0.0)
        assert ou_mean_factor(m, 0.5) == pytest.approx(np.exp(-1.0))

    def test_quarter_period_rotation_is_clockwise(self):
        # with positive rotation frequency the deterministic flow turns
        # (1, 0) into (0, -1) after a quarter period
        m = OUMode(ModeIndex(1, 0, 1), lam=0.0, f0=1.0, amp=0.0)
        state = np.array([1.0, 0.0])
        out = ou_exact_step(m, state, np.pi / 2, np.random.default_rng(0))
        np.testing.assert_allclose(out, [0.0, -1.0], atol=1e-12)

    def test_decay_and_rotation_commute(self):
        m = OUMode(ModeIndex(1, 0, 1), lam=1.0, f0=2.0, amp=0.0)
        out = ou_exact_step(m, np.array([0.3, -0.4]), 0.7, np.random.default_rng(0))
        rot = -2.0 * 0.7
        R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
        np.testing.assert_allclose(out, np.exp(-0.7) * R @ np.array([0.3, -0.4]), atol=1e-12)


class TestNoiseCovariance:
    """One-step noise covariance against matrix-exponential quadrature."""

    CASES = [
        (1.0, 0.0, 0.3, [[0.081213905503, 0.108285207337], [0.108285207337, 0.144380276450]]),
        (1.0, 1.7, 0.3, [[0.131571201037, 0.106413699305], [0.106413699305, 0.094022980916]]),
        (1.0, 0.0, 1.0, [[0.155639649017, 0.207519532023], [0.207519532023, 0.276692709364]]),
        (2.5, 1.0, 1.0, [[0.107750661000, 0.092727849011], [0.092727849011, 0.090901749600]]),
        (0.0, 1.0, 0.5, [[0.301424477655, 0.234131874943], [0.234131874943, 0.198575522345]]),
    ]

    @pytest.mark.parametrize("lam,f0,dt,ref", CASES)
    def test_matches_reference(self, lam, f0, dt, ref):
        zeta = complex(0.6, 0.8)
        np.testing.assert_allclose(implied_cov(lam, f0, 1.0, zeta, dt), ref, atol=2e-10)

    def test_no_rotation_noise_is_rank_one(self):
        s11, s21, s22 = strand_noise_chol(1.0, 0.0, 1.0, complex(0.6, 0.8), 0.3)
        assert s22 == 0.0
        assert s21 / s11 == pytest.approx(0.8 / 0.6)

    def test_no_rotation_pure_imaginary_direction_keeps_noise(self):
        # modes with k' on the first axis have direction (0, 1); the whole
        # noise mass must land on the second component, not get suppressed
        s11, s21, s22 = strand_noise_chol(1.0, 0.0, 1.0, complex(0.0, 1.0), 0.3)
        assert s11 == 0.0 and s22 == 0.0
        assert s21 * s21 == pytest.approx(decay_sq_integral(1.0, 0.3).real, rel=1e-12)

    def test_no_rotation_negative_direction_same_law(self):
        cov_pos = implied_cov(1.0, 0.0, 1.0, complex(0.6, 0.8), 0.3)
        cov_neg = implied_cov(1.0, 0.0, 1.0, complex(-0.6, -0.8), 0.3)
        np.testing.assert_allclose(cov_neg, cov_pos, rtol=1e-12)

    def test_trace_is_rotation_invariant(self):
        a = implied_cov(1.3, 0.0, 1.0, complex(1.0, 0.0), 0.4)
        b = implied_cov(1.3, 5.7, 1.0, complex(0.6, 0.8), 0.4)
        assert np.trace(a) == pytest.approx(np.trace(b), rel=1e-12)
        assert np.trace(a) == pytest.approx(decay_sq_integral(1.3, 0.4).real, rel=1e-12)

    def test_step_sampling_moments(self):
        """Monte Carlo second moments of the exact step."""
        m = OUMode(ModeIndex(1, 0, 1), lam=1.0, f0=1.7, amp=1.0, direction=(0.6, 0.8))
        rng = np.random.default_rng(99)
        n = 60_000
        out = np.empty((n, 2))
        for i in range(n):
            out[i] = ou_exact_step(m, np.zeros(2), 0.3, rng)
        emp = out.T @ out / n
        ref = np.asarray(self.CASES[1][3])
        np.testing.assert_allclose(emp, ref, atol=5 * 0.15 / np.sqrt(n))

    def test_zero_step_rejected(self):
        m = OUMode(ModeIndex(1, 0, 0), lam=1.0, f0=0.0, amp=1.0)
        with pytest.raises(ValueError, match="dt"):
            ou_exact_step(m, np.zeros(2), 0.0, np.random.default_rng(0))


class TestTimeEnergyMean:
    FROZEN = [(1.0, 0.2838338208), (0.5, 0.3678794412), (1.5, 0.2277541187), (96.5, 0.0051545008)]

    @pytest.mark.parametrize("lam,ref", FROZEN)
    def test_from_rest(self, lam, ref):
        m = OUMode(ModeIndex(1, 0, 0), lam=lam, f0=0.0, amp=1.0)
        assert expected_time_energy(m, 1.0) == pytest.approx(ref, abs=1e-9)

    def test_stationary_start(self):
        m = OUMode(ModeIndex(1, 0, 0), lam=2.0, f0=0.0, amp=3.0)
        assert expected_time_energy(m, 5.0, from_zero=False) == pytest.approx(9.0 * 5.0 / 4.0)

    def test_rotation_does_not_change_energy(self):
        a = OUMode(ModeIndex(1, 0, 1), lam=1.0, f0=0.0, amp=1.0)
        b = OUMode(ModeIndex(1, 0, 1), lam=1.0, f0=7.0, amp=1.0)
        assert expected_time_energy(a, 1.0) == expected_time_energy(b, 1.0)

    def test_small_damping_series_is_continuous(self):
        lo = OUMode(ModeIndex(1, 0, 0), lam=0.99e-4, f0=0.0, amp=1.0)
        hi = OUMode(ModeIndex(1, 0, 0), lam=1.01e-4, f0=0.0, amp=1.0)
        ratio = expected_time_energy(hi, 1.0) / expected_time_energy(lo, 1.0)
        # the exact ratio is 1 - 2/3 (hi - lo) + O(lam^2); both branches must
        # agree with it to well under a part per billion
        assert ratio == pytest.approx(1.0 - (2.0 / 3.0) * 0.02e-4, abs=2e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(min_value=0.1, max_value=4.0), st.floats(min_value=0.1, max_value=4.0))
    def test_monotone_in_horizon(self, t1, dt):
        m = OUMode(ModeIndex(1, 0, 0), lam=0.8, f0=0.0, amp=1.0)
        assert expected_time_energy(m, t1 + dt) > expected_time_energy(m, t1)


class TestTimeEnergyVariance:
    FROZEN = [
        (1.0, 0.0, 1.0, 8.029237971601e-02),
        (1.5, 1.0, 1.0, 4.241523238939e-02),
        (0.5, 10.0, 1.0, 8.118134935443e-02),
        (0.0, 3.0, 1.0, 2.220992910082e-01),
        (100.0, 1.0, 1.0, 4.937255649185e-07),
        (64.5, 1.0, 1.0, 1.827007433091e-06),
        (2.0, 0.0, 2.0, 8.603184974328e-02),
    ]

    @pytest.mark.parametrize("lam,f0,T,ref", FROZEN)
    def test_against_double_quadrature(self, lam, f0, T, ref):
        m = OUMode(ModeIndex(1, 0, 1), lam=lam, f0=f0, amp=1.0)
        assert variance_time_energy(m, T) == pytest.approx(ref, rel=1e-8)

    def test_zero_damping_limit(self):
        m = OUMode(ModeIndex(1, 0, 1), lam=0.0, f0=0.0, amp=1.0)
        assert variance_time_energy(m, 1.0) == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_heavy_damping_scaling(self):
        # lam^3 Var / amp^4 approaches T/2 once lam T is large
        m = OUMode(ModeIndex(1, 0, 1), lam=80.0, f0=0.0, amp=1.3)
        scaled = variance_time_energy(m, 1.0) * 80.0**3 / 1.3**4
        assert scaled == pytest.approx(0.5, rel=0.02)

    def test_amplitude_enters_fourth_power(self):
        a = OUMode(ModeIndex(1, 0, 1), lam=1.0, f0=1.0, amp=1.0)
        b = OUMode(ModeIndex(1, 0, 1), lam=1.0, f0=1.0, amp=2.0)
        assert variance_time_energy(b, 1.0) == pytest.approx(16.0 * variance_time_energy(a, 1.0))

    def test_branches_agree_at_crossover(self):
        """Quadrature and closed form must meet smoothly at weak damping."""
        lo = OUMode(ModeIndex(1, 0, 1), lam=0.0499, f0=2.0, amp=1.0)
        hi = OUMode(ModeIndex(1, 0, 1), lam=0.0501, f0=2.0, amp=1.0)
        vlo, vhi = variance_time_energy(lo, 1.0), variance_time_energy(hi, 1.0)
        assert 0 < (vlo - vhi) / vlo < 1e-3
        mid_quad = variance_time_energy(OUMode(ModeIndex(1, 0, 1), lam=0.05 - 1e-12, f0=2.0, amp=1.0), 1.0)
        mid_form = variance_time_energy(OUMode(ModeIndex(1, 0, 1), lam=0.05 + 1e-12, f0=2.0, amp=1.0), 1.0)
        assert mid_quad == pytest.approx(mid_form, rel=1e-9)


class TestStoredModeStatistics:
    def test_paired_mode_mean_counts_both_sites(self):
        k = ModeIndex(1, 0, 0)
        single = OUMode.from_params(k, DEFAULTS)
        assert mode_energy_mean(k, DEFAULTS, 1.0) == pytest.approx(expected_time_energy(single, 1.0))

    def test_paired_variance_is_halved(self):
        """Two independent half-power strands give half the fluctuation."""
        k = ModeIndex(1, 0, 1)
        m = OUMode.from_params(k, DEFAULTS)
        assert mode_energy_variance(k, DEFAULTS, 1.0) == pytest.approx(
            0.5 * variance_time_energy(m, 1.0), rel=1e-12
        )

    def test_self_paired_variance_is_full(self):
        k = ModeIndex(0, 0, 1)
        m = OUMode.from_params(k, DEFAULTS)
        assert mode_energy_variance(k, DEFAULTS, 1.0) == pytest.approx(
            variance_time_energy(m, 1.0), rel=1e-12
        )


class TestNormOrders:
    BETA = DEFAULTS.gamma / 2 + 1  # keeps 4 beta - 2 gamma = 4

    def test_rejects_non_divergent_exponent(self):
        with pytest.raises(ValueError, match="beta"):
            expected_norm_order(2.0, BAROTROPIC, DEFAULTS, 64)

    def test_barotropic_formula_value(self):
        val = expected_norm_order(self.BETA, BAROTROPIC, DEFAULTS, 64)
        ref = 0.5 * np.pi / 2.0 * 64.0**4
        assert val == pytest.approx(ref, rel=1e-12)

    def test_resonant_to_barotropic_ratio(self):
        r = expected_norm_order(self.BETA, ModeSelector.resonant(1), DEFAULTS, 32) / expected_norm_order(
            self.BETA, BAROTROPIC, DEFAULTS, 32
        )
        assert r == pytest.approx(4.0 / 3.0, rel=1e-12)

    def test_all_is_sum_of_parts(self):
        tot = expected_norm_order(self.BETA, ALL, DEFAULTS, 16)
        parts = expected_norm_order(self.BETA, BAROTROPIC, DEFAULTS, 16) + expected_norm_order(
            self.BETA, BAROCLINIC, DEFAULTS, 16
        )
        assert tot == pytest.approx(parts)

    def test_barotropic_lattice_sum_matches_formula(self):
        exact = exact_norm_sum(self.BETA, BAROTROPIC, DEFAULTS, 32)
        assert exact == pytest.approx(8.186982e05, rel=1e-5)
        ratio = exact / expected_norm_order(self.BETA, BAROTROPIC, DEFAULTS, 32)
        assert abs(ratio - 1.0) < 0.1

    def test_baroclinic_doubling_exponent(self):
        lo = exact_norm_sum(self.BETA, BAROCLINIC, DEFAULTS, 16)
        hi = exact_norm_sum(self.BETA, BAROCLINIC, DEFAULTS, 32)
        assert lo == pytest.approx(1.571860e06, rel=1e-5)
        # growth exponent 4 beta - 2 gamma + 1 = 5, so doubling gains 2^5
        assert hi / lo == pytest.approx(32.0, rel=0.05)

    def test_lattice_sum_matches_bruteforce(self):
        """Vectorized lattice sum against a tiny hand loop."""
        p = DEFAULTS
        acc = 0.0
        for k1 in range(-2, 3):
            for k2 in range(-2, 3):
                for k3 in range(-2, 3):
                    ksq = k1 * k1 + k2 * k2 + k3 * k3
                    if ksq == 0 or ksq > 4 or k3 == 0:
                        continue
                    lam = p.nu_h * (k1 * k1 + k2 * k2) + p.nu_z * k3 * k3
                    g0 = (1 - np.exp(-2 * lam)) / (2 * lam)
                    acc += ksq ** (2 * self.BETA) * ksq ** (-p.gamma) * (1.0 - g0) / (2 * lam)
        assert exact_norm_sum(self.BETA, BAROCLINIC, p, 2) == pytest.approx(acc, rel=1e-12)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
