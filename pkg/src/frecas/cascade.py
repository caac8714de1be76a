"""Cascade orchestration: stage plans, the five-step transition between
resolutions (denoise, decode, interpolate, encode, diffuse), attention-map
averaging and fusion across stages, stage execution, and the analytic
denoiser-evaluation cost accountant.

A run starts from pure noise at the base resolution and the top of the
schedule, alternates stage sampling with transitions, and decodes the final
latent. Stage entry timesteps are chosen so the signal-to-noise ratio is
preserved across each resolution change (scaled by ratio**gamma), computed
through the closed-form shifts in :mod:`frecas.schedule`.

Cost model: one denoiser evaluation at side s costs (s / s0)**2 units, so a
plan costs sum(steps_i * (s_i / s0)**2). Guidance's two evaluations per step
are a constant factor and excluded.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bank import CAMap, LatentBank, bank_resample, default_patch_size, predict
from .codec import LatentCodec, decode, encode
from .grid import LatentGrid, Resolution, resample_bilinear_rect, seeded_gaussian, subseed
from .sampler import (
    GuidanceWeights,
    cfg_combine,
    ddim_step,
    euler_flow_step,
    facfg_combine,
    predict_z0,
)
from .schedule import (
    NoiseSchedule,
    ScheduleKind,
    diffuse,
    shift_timestep_flow,
    shift_timestep_vp,
    snr,
)

_SUBSEED_INIT = 0
_SUBSEED_TRANSITION = 1


@dataclass(frozen=True)
class StageSpec:
    resolution: Resolution
    steps: int
    last_timestep: float  # L; 0 for the final stage
    guidance: GuidanceWeights
    ca_fusion: float = 0.0  # w_c

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("each stage needs at least one step")
        if self.last_timestep < 0:
            raise ValueError("last timestep must be non-negative")
        if not 0.0 <= self.ca_fusion <= 1.0:
            raise ValueError("ca fusion weight must lie in [0, 1]")


@dataclass(frozen=True)
class StagePlan:
    stages: tuple
    gamma: float
    schedule: NoiseSchedule
    train_side: int | None = None  # cost reference s0; stage-0 side by default

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages:
            raise ValueError("plan needs at least one stage")
        sides = [s.resolution.side for s in stages]
        if any(b <= a for a, b in zip(sides, sides[1:])):
            raise ValueError("stage resolutions must be strictly increasing")
        if stages[-1].last_timestep != 0:
            raise ValueError("final stage must run to timestep 0")
        if any(s.last_timestep <= 0 for s in stages[:-1]):
            raise ValueError("non-final stages must stop at a positive timestep")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        object.__setattr__(self, "stages", stages)
        if self.train_side is None:
            object.__setattr__(self, "train_side", stages[0].resolution.side)

    @property
    def n_additional(self) -> int:
        return len(self.stages) - 1

    @property
    def base_side(self) -> int:
        return self.stages[0].resolution.side


@dataclass(frozen=True)
class StageRecord:
    resolution: int
    steps: int
    first_timestep: float  # F (T or 1.0 for stage 0)
    last_timestep: float  # L
    cost_units: float


@dataclass(frozen=True)
class RunReport:
    seed: int
    cost_units: float
    stages: tuple
    outputs: tuple = field(default=())


def compute_cost(plan: StagePlan) -> float:
    s0 = plan.train_side
    return float(
        sum(s.steps * (s.resolution.side / s0) ** 2 for s in plan.stages)
    )


# ---------------------------------------------------------------------------
# attention-map algebra
# ---------------------------------------------------------------------------

def average_ca_maps(maps) -> CAMap:
    """Elementwise arithmetic mean of same-shape row-stochastic maps."""
    maps = list(maps)
    if not maps:
        raise ValueError("cannot average zero maps")
    first = maps[0]
    for m in maps[1:]:
        if m.values.shape != first.values.shape or m.classes != first.classes:
            raise ValueError("maps must share shape and classes")
    mean = np.mean([m.values for m in maps], axis=0)
    return CAMap(mean, first.rows_h, first.rows_w, first.classes)


def fuse_ca_maps(current: CAMap, averaged: CAMap, w_c: float) -> CAMap:
    """Convex combination (1 - w_c) * current + w_c * averaged."""
    if not 0.0 <= w_c <= 1.0:
        raise ValueError(f"w_c must lie in [0, 1], got {w_c}")
    if current.values.shape != averaged.values.shape or current.classes != averaged.classes:
        raise ValueError("maps must share shape and classes")
    fused = (1.0 - w_c) * current.values + w_c * averaged.values
    return CAMap(fused, current.rows_h, current.rows_w, current.classes)


def resample_ca_map(m: CAMap, rows_h: int, rows_w: int) -> CAMap:
    """Bilinear resample over the patch grid, then renormalize each row."""
    if (m.rows_h, m.rows_w) == (rows_h, rows_w):
        return m
    grid = np.ascontiguousarray(m.values.T.reshape(len(m.classes), m.rows_h, m.rows_w))
    out = _kernels.bilinear_resample(grid, rows_h, rows_w)
    values = out.reshape(len(m.classes), rows_h * rows_w).T
    values = values / values.sum(axis=1, keepdims=True)
    return CAMap(values, rows_h, rows_w, m.classes)


# ---------------------------------------------------------------------------
# stage execution
# ---------------------------------------------------------------------------

def _stage_time_grid(first: float, last: float, steps: int) -> np.ndarray:
    """Evaluation times and landing points: steps+1 evenly spaced values from
    first down to last; the denoiser runs at grid[:-1]."""
    if first <= last:
        raise ValueError(f"stage must move down in time: {first} -> {last}")
    return np.linspace(first, last, steps + 1)


def _verify_row_stochastic(m: CAMap, where: str):
    err = np.max(np.abs(m.values.sum(axis=1) - 1.0))
    if err > 1e-12:
        raise AssertionError(f"{where}: attention rows deviate from 1 by {err:.3e}")


def run_stage(
    spec: StageSpec,
    z: LatentGrid,
    first_timestep: float,
    bank: LatentBank,
    condition: int | None,
    plan: StagePlan,
    stage_index: int,
    reused_maps: CAMap | None = None,
    verify: bool = False,
):
    """Run one stage from first_timestep down to its last timestep.

    Stage 0 combines scores with plain guidance; later stages use the
    frequency-aware combination cut at the previous stage's resolution. When
    an averaged map from the previous stage is supplied, it is fused with
    each step's own map and steers the conditional prediction patchwise.
    Returns the stage's final latent and the step-averaged attention map.
    """
    sched = plan.schedule
    vp = sched.kind is ScheduleKind.VARIANCE_PRESERVING
    grid = _stage_time_grid(first_timestep, spec.last_timestep, spec.steps)
    step_maps = []
    for idx in range(spec.steps):
        t, t_next = float(grid[idx]), float(grid[idx + 1])
        eps_unc, step_map = predict(bank, z, t, None, sched)
        if reused_maps is not None:
            fused = fuse_ca_maps(step_map, reused_maps, spec.ca_fusion)
            if verify:
                _verify_row_stochastic(fused, f"stage {stage_index} step {idx}")
            eps_c, _ = predict(bank, z, t, condition, sched, ca_mixture=fused)
            step_maps.append(fused)
        else:
            eps_c, _ = predict(bank, z, t, condition, sched)
            step_maps.append(step_map)
        if stage_index == 0:
            eps_hat = cfg_combine(eps_unc, eps_c, spec.guidance.w_l)
        else:
            eps_hat = facfg_combine(eps_unc, eps_c, spec.guidance)
        if vp:
            z = ddim_step(z, eps_hat, t, t_next, sched)
        else:
            z = euler_flow_step(z, eps_hat, t, t_next)
    avg = average_ca_maps(step_maps)
    if verify:
        _verify_row_stochastic(avg, f"stage {stage_index} average")
    return z, avg


def transition(
    z_last: LatentGrid,
    from_spec: StageSpec,
    to_spec: StageSpec,
    plan: StagePlan,
    codec: LatentCodec,
    bank: LatentBank,
    condition: int | None,
    noise_seed: int,
):
    """The five-step hop to the next stage: denoise the last latent to a
    clean estimate, decode, bilinearly interpolate to the next pixel
    resolution, encode, and diffuse to the SNR-matched entry timestep.

    The denoise step is a single conditional evaluation. Returns (z_F, F).
    """
    sched = plan.schedule
    L = from_spec.last_timestep
    field, _ = predict(bank, z_last, L, condition, sched)
    z0 = predict_z0(z_last, field, L, sched)
    image = decode(codec, z0)
    pixel_side = to_spec.resolution.side * codec.spatial_factor
    image_up = resample_bilinear_rect(image, pixel_side, pixel_side)
    z0_up = encode(codec, image_up)
    if sched.kind is ScheduleKind.VARIANCE_PRESERVING:
        ratio = from_spec.resolution.side / to_spec.resolution.side
        F = shift_timestep_vp(L, ratio, plan.gamma, sched)
    else:
        scale = to_spec.resolution.side / from_spec.resolution.side
        F = shift_timestep_flow(L, scale)
    noise = seeded_gaussian(z0_up.shape, noise_seed)
    z_f = diffuse(z0_up, F, noise, sched)
    return z_f, F


def run_cascade(
    plan: StagePlan,
    codec: LatentCodec,
    bank: LatentBank,
    condition: int | None,
    seed: int,
    verify: bool = False,
    stage_callback=None,
):
    """Full cascaded run; returns (image, report).

    The run is a pure function of its arguments: initial noise and every
    transition noise derive from sub-seeds of the run seed.
    """
    sched = plan.schedule
    vp = sched.kind is ScheduleKind.VARIANCE_PRESERVING
    banks = [bank_resample(bank, s.resolution) for s in plan.stages]

    first = float(sched.T) if vp else 1.0
    shape = (bank.channels, plan.stages[0].resolution.side, plan.stages[0].resolution.side)
    z = seeded_gaussian(shape, subseed(seed, _SUBSEED_INIT))

    records = []
    avg_map = None
    for i, spec in enumerate(plan.stages):
        z, avg_map_new = run_stage(
            spec,
            z,
            first,
            banks[i],
            condition,
            plan,
            i,
            reused_maps=avg_map,
            verify=verify,
        )
        cost = spec.steps * (spec.resolution.side / plan.train_side) ** 2
        records.append(
            StageRecord(spec.resolution.side, spec.steps, first, spec.last_timestep, cost)
        )
        if stage_callback is not None:
            stage_callback(i, z)
        if i + 1 < len(plan.stages):
            nxt = plan.stages[i + 1]
            z, first = transition(
                z, spec, nxt, plan, codec, banks[i], condition,
                subseed(seed, _SUBSEED_TRANSITION, i),
            )
            if verify and vp:
                ratio = spec.resolution.side / nxt.resolution.side
                target = snr(sched, spec.last_timestep) * ratio**plan.gamma
                if abs(snr(sched, first) - target) > 1e-6 * target:
                    raise AssertionError(f"transition {i}: SNR mismatch")
            p = default_patch_size(nxt.resolution.side)
            grid_side = nxt.resolution.side // p
            avg_map = resample_ca_map(avg_map_new, grid_side, grid_side)
        else:
            avg_map = avg_map_new

    image = decode(codec, z)
    report = RunReport(
        seed=int(seed),
        cost_units=float(sum(r.cost_units for r in records)),
        stages=tuple(records),
    )
    return image, report


# ---------------------------------------------------------------------------
# presets: the shipped cascade configurations (base latent side s0 scales the
# whole ladder; defaults keep runs desk-sized)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    name: str
    schedule_kind: ScheduleKind
    scale_per_stage: tuple  # resolution multipliers relative to s0
    steps: tuple
    last_timesteps: tuple  # L per non-final stage, in training-timestep units
    gamma: float
    w_l: float
    w_h: float
    w_c: float
    direct_steps: int  # single-stage baseline step count at the target size


PRESETS = {
    p.name: p
    for p in [
        Preset("sd21-x4", ScheduleKind.VARIANCE_PRESERVING, (1, 2), (40, 10), (100,), 3.0, 7.5, 45.0, 0.6, 50),
        Preset("sd21-x16", ScheduleKind.VARIANCE_PRESERVING, (1, 2, 4), (30, 10, 10), (200, 200), 3.0, 7.5, 35.0, 0.4, 50),
        Preset("sdxl-x4", ScheduleKind.VARIANCE_PRESERVING, (1, 2), (40, 10), (200,), 1.5, 7.5, 35.0, 0.6, 50),
        Preset("sdxl-x16", ScheduleKind.VARIANCE_PRESERVING, (1, 2, 4), (30, 5, 15), (400, 200), 2.0, 7.5, 35.0, 0.6, 50),
        Preset("sd3-x4", ScheduleKind.FLOW_MATCHING, (1, 2), (20, 8), (50,), 2.0, 7.0, 35.0, 0.5, 28),
    ]
}


def plan_from_preset(preset: Preset, base_side: int, sched: NoiseSchedule) -> StagePlan:
    """Materialize a preset at a concrete base latent side.

    For flow schedules the tabulated L values are training-timestep indices
    and are normalized by the schedule's T into [0, 1].
    """
    if sched.kind is not preset.schedule_kind:
        raise ValueError(f"preset {preset.name} needs a {preset.schedule_kind.value} schedule")
    stages = []
    flow = sched.kind is ScheduleKind.FLOW_MATCHING
    for i, mult in enumerate(preset.scale_per_stage):
        side = base_side * mult
        prev_side = base_side * preset.scale_per_stage[max(i - 1, 0)]
        if i < len(preset.scale_per_stage) - 1:
            last = preset.last_timesteps[i]
            last = last / sched.T if flow else float(last)
        else:
            last = 0.0
        stages.append(
            StageSpec(
                resolution=Resolution(side),
                steps=preset.steps[i],
                last_timestep=last,
                guidance=GuidanceWeights(preset.w_l, preset.w_h, Resolution(prev_side)),
                ca_fusion=preset.w_c,
            )
        )
    return StagePlan(stages=tuple(stages), gamma=preset.gamma, schedule=sched)


def direct_plan(preset: Preset, base_side: int, sched: NoiseSchedule) -> StagePlan:
    """Single-stage baseline at the preset's target resolution; cost units
    stay relative to the training side."""
    target = base_side * preset.scale_per_stage[-1]
    spec = StageSpec(
        resolution=Resolution(target),
        steps=preset.direct_steps,
        last_timestep=0.0,
        guidance=GuidanceWeights(preset.w_l, preset.w_h, Resolution(target)),
        ca_fusion=0.0,
    )
    return StagePlan(stages=(spec,), gamma=preset.gamma, schedule=sched, train_side=base_side)
