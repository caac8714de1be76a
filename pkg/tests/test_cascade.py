import numpy as np
import pytest

from frecas.bank import CAMap, LatentBank, bank_resample, predict
from frecas.cascade import (
    PRESETS,
    StagePlan,
    StageSpec,
    average_ca_maps,
    compute_cost,
    direct_plan,
    fuse_ca_maps,
    plan_from_preset,
    resample_ca_map,
    run_cascade,
    run_stage,
    transition,
)
from frecas.codec import HAAR1, IDENTITY, decode, encode
from frecas.grid import LatentGrid, Resolution, resample_bilinear, seeded_gaussian, subseed
from frecas.sampler import GuidanceWeights, cfg_combine, ddim_step, predict_z0
from frecas.schedule import alpha_at, diffuse, flow_schedule, snr, vp_default

SCHED = vp_default()


def toy_bank(rng, side=16, channels=2, n_items=8, n_classes=3) -> LatentBank:
    stack = rng.standard_normal((n_items, channels, side, side))
    ids = np.arange(n_items) % n_classes
    return LatentBank(stack, ids, np.full(n_items, 1.0 / n_items))


def toy_plan(side0=8, side1=16, steps=(4, 3), L=200.0, w=(7.5, 35.0), w_c=0.6,
             gamma=2.0, sched=SCHED) -> StagePlan:
    return StagePlan(
        stages=(
            StageSpec(Resolution(side0), steps[0], L,
                      GuidanceWeights(w[0], w[1], Resolution(side0)), w_c),
            StageSpec(Resolution(side1), steps[1], 0.0,
                      GuidanceWeights(w[0], w[1], Resolution(side0)), w_c),
        ),
        gamma=gamma,
        schedule=sched,
    )


def uniform_map(rows_h, rows_w, classes) -> CAMap:
    n = len(classes)
    return CAMap(np.full((rows_h * rows_w, n), 1.0 / n), rows_h, rows_w, classes)


class TestCaMapAlgebra:
    def test_fuse_endpoints_exact(self, rng):
        a = _random_map(rng, 4, 4, (0, 1, 2))
        b = _random_map(rng, 4, 4, (0, 1, 2))
        np.testing.assert_array_equal(fuse_ca_maps(a, b, 0.0).values, a.values)
        np.testing.assert_array_equal(fuse_ca_maps(a, b, 1.0).values, b.values)

    def test_fuse_preserves_row_sums(self, rng):
        a = _random_map(rng, 4, 4, (0, 1))
        b = _random_map(rng, 4, 4, (0, 1))
        fused = fuse_ca_maps(a, b, 0.6)
        np.testing.assert_allclose(fused.values.sum(axis=1), 1.0, atol=1e-12)

    def test_fuse_domain(self, rng):
        a = _random_map(rng, 2, 2, (0,))
        with pytest.raises(ValueError):
            fuse_ca_maps(a, a, 1.5)

    def test_average_of_equal_maps_is_identity(self, rng):
        m = _random_map(rng, 3, 3, (0, 1))
        avg = average_ca_maps([m, m, m])
        np.testing.assert_allclose(avg.values, m.values, rtol=1e-12)

    def test_average_two_maps_rows_sum_one(self, rng):
        a = _random_map(rng, 3, 3, (0, 1))
        b = _random_map(rng, 3, 3, (0, 1))
        avg = average_ca_maps([a, b])
        np.testing.assert_allclose(avg.values, (a.values + b.values) / 2, rtol=1e-12)
        np.testing.assert_allclose(avg.values.sum(axis=1), 1.0, atol=1e-12)

    def test_average_rejects_empty_and_mismatched(self, rng):
        with pytest.raises(ValueError):
            average_ca_maps([])
        with pytest.raises(ValueError):
            average_ca_maps([_random_map(rng, 2, 2, (0,)), _random_map(rng, 3, 3, (0,))])

    def test_resampled_uniform_stays_uniform(self):
        m = uniform_map(4, 4, (0, 1, 2))
        out = resample_ca_map(m, 8, 8)
        np.testing.assert_allclose(out.values, 1.0 / 3.0, rtol=1e-12)
        np.testing.assert_allclose(out.values.sum(axis=1), 1.0, atol=1e-12)

    def test_resample_renormalizes_rows(self, rng):
        m = _random_map(rng, 4, 4, (0, 1))
        out = resample_ca_map(m, 6, 6)
        np.testing.assert_allclose(out.values.sum(axis=1), 1.0, atol=1e-12)


def _random_map(rng, rows_h, rows_w, classes) -> CAMap:
    raw = rng.random((rows_h * rows_w, len(classes))) + 0.1
    return CAMap(raw / raw.sum(axis=1, keepdims=True), rows_h, rows_w, classes)


class TestTransition:
    def test_equal_resolution_identity_codec_is_pure_renoise(self, rng):
        bank = toy_bank(rng, side=8)
        plan = toy_plan()
        spec = plan.stages[0]
        z_L = LatentGrid(rng.standard_normal((2, 8, 8)))
        seed = 99
        z_F, F = transition(z_L, spec, spec, plan, IDENTITY, bank, 1, seed)
        assert F == pytest.approx(spec.last_timestep, abs=1e-6)
        eps, _ = predict(bank, z_L, spec.last_timestep, 1, SCHED)
        z0 = predict_z0(z_L, eps, spec.last_timestep, SCHED)
        manual = diffuse(z0, F, seeded_gaussian(z0.shape, seed), SCHED)
        np.testing.assert_array_equal(z_F.data, manual.data)

    def test_snr_matched_entry_timestep(self, rng):
        bank = toy_bank(rng, side=16)
        plan = toy_plan()
        z_L = LatentGrid(rng.standard_normal((2, 8, 8)))
        _, F = transition(z_L, plan.stages[0], plan.stages[1], plan, IDENTITY,
                          bank_resample(bank, Resolution(8)), 0, 5)
        target = snr(SCHED, 200.0) * 0.5**2.0
        assert abs(snr(SCHED, F) - target) <= 1e-6 * target

    def test_sdxl_x4_entry_alpha_from_closed_form(self):
        # L = 200, side ratio 1/2, gamma = 1.5
        a_l = alpha_at(SCHED, 200.0)
        r = 0.5**1.5
        target_alpha = r * a_l / (1 + (r - 1) * a_l)
        rng = np.random.default_rng(0)
        bank = toy_bank(rng, side=16)
        preset_plan = toy_plan(L=200.0, gamma=1.5)
        z_L = LatentGrid(rng.standard_normal((2, 8, 8)))
        _, F = transition(z_L, preset_plan.stages[0], preset_plan.stages[1],
                          preset_plan, IDENTITY, bank_resample(bank, Resolution(8)), 0, 5)
        assert alpha_at(SCHED, F) == pytest.approx(target_alpha, abs=1e-8)

    def test_haar_chain_lossless_without_interpolation(self, rng):
        # equal resolutions: decode -> encode round-trips exactly, so the
        # transition equals plain re-noising of the clean estimate
        bank = toy_bank(rng, side=8, channels=4)
        plan = toy_plan()
        spec = plan.stages[0]
        z_L = LatentGrid(rng.standard_normal((4, 8, 8)))
        z_F, F = transition(z_L, spec, spec, plan, HAAR1, bank, 1, 42)
        eps, _ = predict(bank, z_L, spec.last_timestep, 1, SCHED)
        z0 = predict_z0(z_L, eps, spec.last_timestep, SCHED)
        roundtrip = encode(HAAR1, decode(HAAR1, z0))
        np.testing.assert_allclose(roundtrip.data, z0.data, rtol=1e-12, atol=1e-12)
        manual = diffuse(roundtrip, F, seeded_gaussian(z0.shape, 42), SCHED)
        np.testing.assert_allclose(z_F.data, manual.data, rtol=1e-12, atol=1e-12)

    def test_haar_chain_with_interpolation_differs_only_by_resample(self, rng):
        bank = toy_bank(rng, side=8, channels=4)
        plan = toy_plan()
        z_L = LatentGrid(rng.standard_normal((4, 8, 8)))
        z_F, F = transition(z_L, plan.stages[0], plan.stages[1], plan, HAAR1, bank, 1, 42)
        eps, _ = predict(bank, z_L, 200.0, 1, SCHED)
        z0 = predict_z0(z_L, eps, 200.0, SCHED)
        image = decode(HAAR1, z0)
        up = resample_bilinear(image, Resolution(32))  # 16 latent * factor 2
        z0_up = encode(HAAR1, up)
        manual = diffuse(z0_up, F, seeded_gaussian(z0_up.shape, 42), SCHED)
        np.testing.assert_array_equal(z_F.data, manual.data)


class TestRunStage:
    def test_single_step_stage(self, rng):
        bank = toy_bank(rng, side=8)
        plan = toy_plan(steps=(1, 1))
        z = LatentGrid(rng.standard_normal((2, 8, 8)))
        out, avg = run_stage(plan.stages[0], z, 1000.0, bank_resample(bank, Resolution(8)),
                             1, plan, 0)
        assert out.shape == z.shape
        np.testing.assert_allclose(avg.values.sum(axis=1), 1.0, atol=1e-12)

    def test_bitwise_deterministic(self, rng):
        bank = toy_bank(rng, side=8)
        plan = toy_plan()
        z = LatentGrid(rng.standard_normal((2, 8, 8)))
        small = bank_resample(bank, Resolution(8))
        a, _ = run_stage(plan.stages[0], z, 1000.0, small, 1, plan, 0)
        b, _ = run_stage(plan.stages[0], z, 1000.0, small, 1, plan, 0)
        assert np.array_equal(a.data, b.data)

    def test_stage0_with_w1_depends_only_on_conditional(self, rng):
        # w = 1 makes guidance return the conditional score exactly
        bank = toy_bank(rng, side=8, n_items=6, n_classes=2)
        plan = toy_plan(w=(1.0, 1.0))
        z = LatentGrid(rng.standard_normal((2, 8, 8)))
        out, _ = run_stage(plan.stages[0], z, 1000.0, bank, 1, plan, 0)
        grid = np.linspace(1000.0, 200.0, 5)
        manual = z
        for t, t_next in zip(grid[:-1], grid[1:]):
            eps_c, _ = predict(bank, manual, t, 1, SCHED)
            manual = ddim_step(manual, eps_c, t, t_next, SCHED)
        np.testing.assert_array_equal(out.data, manual.data)

    def test_reused_maps_change_trajectory(self, rng):
        bank = toy_bank(rng, side=8, n_items=6, n_classes=2)
        plan = toy_plan(w_c=1.0)
        z = LatentGrid(rng.standard_normal((2, 8, 8)))
        skewed = CAMap(np.tile([0.9, 0.1], (64, 1)), 8, 8, (0, 1))
        with_maps, _ = run_stage(plan.stages[1], z, 500.0, toy_bank(rng, side=8, n_items=6, n_classes=2),
                                 1, plan, 1, reused_maps=skewed)
        assert with_maps.shape == z.shape


class TestRunCascade:
    def test_deterministic_end_to_end(self, rng):
        bank = toy_bank(rng)
        plan = toy_plan()
        a, ra = run_cascade(plan, IDENTITY, bank, 1, seed=7)
        b, rb = run_cascade(plan, IDENTITY, bank, 1, seed=7)
        assert np.array_equal(a.data, b.data)
        assert ra == rb

    def test_seed_changes_output(self, rng):
        bank = toy_bank(rng)
        plan = toy_plan()
        a, _ = run_cascade(plan, IDENTITY, bank, 1, seed=7)
        b, _ = run_cascade(plan, IDENTITY, bank, 1, seed=8)
        assert not np.array_equal(a.data, b.data)

    def test_one_stage_plan_equals_standalone_cfg_ddim(self, rng):
        bank = toy_bank(rng, side=8)
        w = 7.5
        plan = StagePlan(
            stages=(StageSpec(Resolution(8), 6, 0.0,
                              GuidanceWeights(w, 99.0, Resolution(8)), 0.0),),
            gamma=2.0,
            schedule=SCHED,
        )
        image, report = run_cascade(plan, IDENTITY, bank, 2, seed=11)
        z = seeded_gaussian((2, 8, 8), subseed(11, 0))
        grid = np.linspace(1000.0, 0.0, 7)
        for t, t_next in zip(grid[:-1], grid[1:]):
            eps_unc, _ = predict(bank, z, t, None, SCHED)
            eps_c, _ = predict(bank, z, t, 2, SCHED)
            z = ddim_step(z, cfg_combine(eps_unc, eps_c, w), t, t_next, SCHED)
        assert np.abs(image.data - z.data).max() <= 1e-6
        assert report.cost_units == 6.0

    def test_equal_band_weights_degenerate_to_plain_cfg_cascade(self, rng):
        # manual two-stage cascade with plain guidance at both stages must
        # bit-match the frequency-aware path when w_l == w_h
        bank = toy_bank(rng, side=16)
        w = 5.0
        plan = toy_plan(w=(w, w), w_c=0.4)
        image, _ = run_cascade(plan, IDENTITY, bank, 1, seed=3)

        from frecas.cascade import fuse_ca_maps as fuse

        banks = [bank_resample(bank, Resolution(8)), bank]
        z = seeded_gaussian((2, 8, 8), subseed(3, 0))
        grid = np.linspace(1000.0, 200.0, 5)
        maps = []
        for t, t_next in zip(grid[:-1], grid[1:]):
            eps_unc, m = predict(banks[0], z, t, None, SCHED)
            eps_c, _ = predict(banks[0], z, t, 1, SCHED)
            maps.append(m)
            z = ddim_step(z, cfg_combine(eps_unc, eps_c, w), t, t_next, SCHED)
        avg = average_ca_maps(maps)
        z, F = transition(z, plan.stages[0], plan.stages[1], plan, IDENTITY,
                          banks[0], 1, subseed(3, 1, 0))
        grid = np.linspace(F, 0.0, 4)
        for t, t_next in zip(grid[:-1], grid[1:]):
            eps_unc, m = predict(banks[1], z, t, None, SCHED)
            fused = fuse(m, avg, 0.4)
            eps_c, _ = predict(banks[1], z, t, 1, SCHED, ca_mixture=fused)
            z = ddim_step(z, cfg_combine(eps_unc, eps_c, w), t, t_next, SCHED)
        np.testing.assert_allclose(image.data, z.data, atol=1e-9)

    def test_verify_mode_passes_clean_run(self, rng):
        bank = toy_bank(rng)
        plan = toy_plan()
        run_cascade(plan, IDENTITY, bank, 0, seed=2, verify=True)

    def test_report_cost_additivity(self, rng):
        bank = toy_bank(rng)
        plan = toy_plan()
        _, report = run_cascade(plan, IDENTITY, bank, 1, seed=7)
        assert report.cost_units == sum(r.cost_units for r in report.stages)
        assert report.cost_units == compute_cost(plan)

    def test_stage_timesteps_strictly_decreasing(self, rng):
        bank = toy_bank(rng)
        plan = toy_plan()
        _, report = run_cascade(plan, IDENTITY, bank, 1, seed=7)
        for rec in report.stages:
            assert rec.first_timestep > rec.last_timestep

    def test_report_entry_timesteps_satisfy_snr_matching(self, rng):
        bank = toy_bank(rng)
        plan = toy_plan()
        _, report = run_cascade(plan, IDENTITY, bank, 1, seed=7)
        for prev, nxt in zip(report.stages, report.stages[1:]):
            ratio = prev.resolution / nxt.resolution
            target = snr(SCHED, prev.last_timestep) * ratio**plan.gamma
            assert abs(snr(SCHED, nxt.first_timestep) - target) <= 1e-6 * target

    def test_flow_cascade_runs(self, rng):
        fs = flow_schedule()
        bank = toy_bank(rng, side=16)
        plan = toy_plan(L=0.05, sched=fs)
        image, report = run_cascade(plan, IDENTITY, bank, 0, seed=1, verify=True)
        assert image.shape == (2, 16, 16)

    def test_three_stage_cascade_with_map_regridding(self, rng):
        # sides 10 -> 20 -> 40 move the attention grid from 10x10 to 8x8,
        # exercising the resample-renormalize path between stages
        gw01 = GuidanceWeights(7.5, 35.0, Resolution(10))
        gw12 = GuidanceWeights(7.5, 35.0, Resolution(20))
        plan = StagePlan(
            stages=(StageSpec(Resolution(10), 3, 300.0, gw01, 0.5),
                    StageSpec(Resolution(20), 2, 150.0, gw01, 0.5),
                    StageSpec(Resolution(40), 2, 0.0, gw12, 0.5)),
            gamma=2.0,
            schedule=SCHED,
        )
        bank = toy_bank(rng, side=40, n_items=6, n_classes=2)
        image, report = run_cascade(plan, IDENTITY, bank, 1, seed=9, verify=True)
        assert image.shape == (2, 40, 40)
        assert len(report.stages) == 3
        for prev, nxt in zip(report.stages, report.stages[1:]):
            ratio = prev.resolution / nxt.resolution
            target = snr(SCHED, prev.last_timestep) * ratio**plan.gamma
            assert abs(snr(SCHED, nxt.first_timestep) - target) <= 1e-6 * target


class TestPlansAndCost:
    def test_plan_validation(self):
        gw = GuidanceWeights(7.5, 35.0, Resolution(8))
        with pytest.raises(ValueError):  # non-increasing resolutions
            StagePlan(stages=(StageSpec(Resolution(16), 4, 200.0, gw),
                              StageSpec(Resolution(8), 4, 0.0, gw)),
                      gamma=2.0, schedule=SCHED)
        with pytest.raises(ValueError):  # final stage must reach 0
            StagePlan(stages=(StageSpec(Resolution(8), 4, 100.0, gw),),
                      gamma=2.0, schedule=SCHED)
        with pytest.raises(ValueError):  # earlier stages need L > 0
            StagePlan(stages=(StageSpec(Resolution(8), 4, 0.0, gw),
                              StageSpec(Resolution(16), 4, 0.0, gw)),
                      gamma=2.0, schedule=SCHED)

    def test_n_additional(self):
        plan = toy_plan()
        assert plan.n_additional == 1
        assert len(plan.stages) == plan.n_additional + 1

    def test_compute_cost_examples(self):
        sched = SCHED
        single = StagePlan(
            stages=(StageSpec(Resolution(32), 50, 0.0,
                              GuidanceWeights(7.5, 35.0, Resolution(32))),),
            gamma=2.0, schedule=sched,
        )
        assert compute_cost(single) == 50.0

        sdxl4 = plan_from_preset(PRESETS["sdxl-x4"], 32, sched)
        assert compute_cost(sdxl4) == 80.0
        assert compute_cost(direct_plan(PRESETS["sdxl-x4"], 32, sched)) == 200.0

        sdxl16 = plan_from_preset(PRESETS["sdxl-x16"], 32, sched)
        assert compute_cost(sdxl16) == 290.0
        assert compute_cost(direct_plan(PRESETS["sdxl-x16"], 32, sched)) == 800.0

    def test_preset_consistency(self):
        for name, preset in PRESETS.items():
            assert len(preset.steps) == len(preset.scale_per_stage)
            assert len(preset.last_timesteps) == len(preset.steps) - 1

    def test_flow_preset_normalizes_L(self):
        fs = flow_schedule()
        plan = plan_from_preset(PRESETS["sd3-x4"], 16, fs)
        assert plan.stages[0].last_timestep == pytest.approx(0.05)
