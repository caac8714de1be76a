import numpy as np
import pytest

from frecas.grid import LatentGrid
from frecas.schedule import (
    NoiseSchedule,
    ScheduleKind,
    alpha_at,
    alpha_inverse,
    diffuse,
    flow_schedule,
    shift_timestep_flow,
    shift_timestep_vp,
    snr,
    vp_default,
)

from conftest import rand_grid

SCHED = vp_default()


def brute_force_alpha(t: int, T: int = 1000) -> float:
    """Cumulative-product oracle for integer timesteps."""
    betas = np.linspace(1e-4, 0.02, T)
    acc = 1.0
    for k in range(t):
        acc *= 1.0 - betas[k]
    return acc


class TestAlpha:
    def test_endpoints(self):
        assert alpha_at(SCHED, 0) == 1.0
        assert 0.0 < alpha_at(SCHED, 1000) < 1e-4

    def test_matches_cumprod_oracle(self):
        for t in (1, 137, 500, 999, 1000):
            assert alpha_at(SCHED, t) == pytest.approx(brute_force_alpha(t), rel=1e-12)

    def test_interpolates_between_integers(self):
        a0, a1 = alpha_at(SCHED, 500), alpha_at(SCHED, 501)
        assert alpha_at(SCHED, 500.25) == pytest.approx(a0 + 0.25 * (a1 - a0), rel=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            alpha_at(SCHED, -1)
        with pytest.raises(ValueError):
            alpha_at(SCHED, 1001)
        with pytest.raises(ValueError):
            alpha_at(flow_schedule(), 0.5)

    def test_custom_curve_validation(self):
        with pytest.raises(ValueError):
            NoiseSchedule(ScheduleKind.VARIANCE_PRESERVING, 3, alpha=np.array([1.0, 0.5, 0.6, 0.1]))
        with pytest.raises(ValueError):
            NoiseSchedule(ScheduleKind.VARIANCE_PRESERVING, 2, alpha=np.array([0.9, 0.5, 0.1]))


class TestAlphaInverse:
    def test_inverts_alpha(self, rng):
        for t in rng.uniform(0.0, 1000.0, 50):
            a = alpha_at(SCHED, t)
            assert alpha_inverse(SCHED, a) == pytest.approx(t, abs=1e-6)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            alpha_inverse(SCHED, 1e-9)
        with pytest.raises(ValueError):
            alpha_inverse(SCHED, 1.5)


class TestSnr:
    def test_half_alpha_gives_one(self):
        t = alpha_inverse(SCHED, 0.5)
        assert snr(SCHED, t) == pytest.approx(1.0, rel=1e-8)

    def test_alpha_08_gives_four(self):
        t = alpha_inverse(SCHED, 0.8)
        assert snr(SCHED, t) == pytest.approx(0.8 / 0.2, rel=1e-8)

    def test_strictly_decreasing(self, rng):
        ts = np.sort(rng.uniform(1.0, 1000.0, 30))
        values = [snr(SCHED, t) for t in ts]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_diverges_at_zero(self):
        with pytest.raises(ValueError):
            snr(SCHED, 0)


class TestDiffuse:
    def test_t0_returns_z0(self, rng):
        z0, noise = rand_grid(rng), rand_grid(rng)
        out = diffuse(z0, 0, noise, SCHED)
        np.testing.assert_array_equal(out.data, z0.data)

    def test_alpha_zero_limit_returns_noise(self, rng):
        z0, noise = rand_grid(rng), rand_grid(rng)
        curve = np.concatenate([[1.0], np.geomspace(0.5, 1e-12, 10)])
        sched = NoiseSchedule(ScheduleKind.VARIANCE_PRESERVING, 10, alpha=curve)
        out = diffuse(z0, 10, noise, sched)
        np.testing.assert_allclose(out.data, noise.data, atol=1e-5)

    def test_zero_signal_scales_noise(self, rng):
        noise = rand_grid(rng)
        z0 = LatentGrid(np.zeros(noise.shape))
        t = 400
        out = diffuse(z0, t, noise, SCHED)
        expected = np.sqrt(1 - alpha_at(SCHED, t)) * noise.data
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_exact_inverse_recovers_z0(self, rng):
        z0, noise = rand_grid(rng), rand_grid(rng)
        t = 635.5
        a = alpha_at(SCHED, t)
        z_t = diffuse(z0, t, noise, SCHED)
        rec = (z_t.data - np.sqrt(1 - a) * noise.data) / np.sqrt(a)
        np.testing.assert_allclose(rec, z0.data, rtol=1e-6, atol=1e-9)

    def test_flow_interpolation(self, rng):
        z0, noise = rand_grid(rng), rand_grid(rng)
        fs = flow_schedule()
        out = diffuse(z0, 0.25, noise, fs)
        np.testing.assert_allclose(out.data, 0.75 * z0.data + 0.25 * noise.data, rtol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            diffuse(rand_grid(rng, side=4), 10, rand_grid(rng, side=8), SCHED)


class TestShiftVp:
    def test_same_resolution_is_identity(self):
        assert shift_timestep_vp(300.0, 1.0, 2.0, SCHED) == pytest.approx(300.0, abs=1e-6)

    def test_gamma_zero_is_identity(self):
        assert shift_timestep_vp(300.0, 0.5, 0.0, SCHED) == pytest.approx(300.0, abs=1e-6)

    def test_worked_case_alpha_08_half_gamma2(self):
        # target alpha = (0.25 * 0.8) / (1 + (0.25 - 1) * 0.8) = 0.5
        L = alpha_inverse(SCHED, 0.8)
        F = shift_timestep_vp(L, 0.5, 2.0, SCHED)
        assert alpha_at(SCHED, F) == pytest.approx(0.5, abs=1e-8)

    def test_snr_matching_property(self, rng):
        for _ in range(100):
            L = float(rng.uniform(10.0, 600.0))
            ratio = float(rng.uniform(0.25, 1.0))
            gamma = float(rng.uniform(0.0, 3.0))
            F = shift_timestep_vp(L, ratio, gamma, SCHED)
            target = snr(SCHED, L) * ratio**gamma
            assert abs(snr(SCHED, F) - target) <= 1e-6 * target
            if ratio < 1.0 and gamma > 0.0:
                assert F >= L

    def test_monotone_in_L(self):
        Fs = [shift_timestep_vp(L, 0.5, 2.0, SCHED) for L in (50, 150, 300, 500)]
        assert all(a < b for a, b in zip(Fs, Fs[1:]))

    def test_target_outside_schedule_range_raises(self):
        with pytest.raises(ValueError):
            shift_timestep_vp(990.0, 0.25, 3.0, SCHED)


class TestShiftFlow:
    def test_scale_one_identity(self):
        assert shift_timestep_flow(0.37, 1.0) == pytest.approx(0.37, rel=1e-12)

    def test_fixed_points(self):
        assert shift_timestep_flow(0.0, 4.0) == 0.0
        assert shift_timestep_flow(1.0, 4.0) == pytest.approx(1.0, rel=1e-12)

    def test_worked_case_half_scale4(self):
        assert shift_timestep_flow(0.5, 4.0) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_moebius_involution(self, rng):
        for L in rng.uniform(0.0, 1.0, 25):
            for k in (2.0, 4.0, 9.0):
                back = shift_timestep_flow(shift_timestep_flow(float(L), k), 1.0 / k)
                assert back == pytest.approx(float(L), abs=1e-12)

    def test_monotone_in_L(self, rng):
        Ls = np.sort(rng.uniform(0.0, 1.0, 20))
        Fs = [shift_timestep_flow(float(L), 4.0) for L in Ls]
        assert all(a <= b for a, b in zip(Fs, Fs[1:]))

    def test_domain_error(self):
        with pytest.raises(ValueError):
            shift_timestep_flow(1.5, 4.0)
