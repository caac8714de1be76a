"""Run configuration: a flat key/value text format plus the logic that turns
a config into a stage plan, codec, and latent bank.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Dotted keys group related settings (``bank.kind = value_noise``). Command
line flags override file values, which override the defaults below.

Recognized keys:

    preset          one of the shipped cascade presets (see `frecas presets`)
    stages          explicit plan: comma list of side:steps:L triples
                    (final L must be 0); overrides the preset ladder
    base_side       latent side of stage 0 when materializing a preset (32)
    schedule        vp | flow (presets pick their own)
    T               training timesteps of the schedule (1000)
    gamma           SNR exponent for transition shifts
    w_l, w_h        guidance strengths for the low/high frequency bands
    w_c             attention-map fusion weight in [0, 1]
    condition       class id to condition on (0)
    codec           identity | haar1
    seed            run seed (0)
    out             output directory
    verify          true/false: in-run invariant assertions
    dump_stages     true/false: dump each stage's final latent
    parallel        true/false: run independent seeds concurrently
    bank.path       directory with a serialized bank (wins over procedural)
    bank.kind       value_noise | white
    bank.seed       procedural generator seed (0)
    bank.items      item count (100)
    bank.classes    class count (4)
    bank.channels   image channels, 1 or 3 (3)
"""

from dataclasses import dataclass, replace

import numpy as np

from .bank import LatentBank, load_bank, make_bank
from .cascade import (
    PRESETS,
    Preset,
    StagePlan,
    StageSpec,
    direct_plan,
    plan_from_preset,
)
from .codec import HAAR1, IDENTITY, LatentCodec, encode
from .grid import Resolution
from .sampler import GuidanceWeights
from .schedule import NoiseSchedule, ScheduleKind, flow_schedule, vp_default


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    preset: str | None = "sdxl-x4"
    stages: str | None = None
    base_side: int = 32
    schedule: str | None = None
    T: int = 1000
    gamma: float | None = None
    w_l: float | None = None
    w_h: float | None = None
    w_c: float | None = None
    condition: int = 0
    codec: str = "identity"
    seed: int = 0
    out: str = "out"
    verify: bool = False
    dump_stages: bool = False
    parallel: bool = False
    bank_path: str | None = None
    bank_kind: str = "value_noise"
    bank_seed: int = 0
    bank_items: int = 100
    bank_classes: int = 4
    bank_channels: int = 3


_KEY_TO_FIELD = {
    "preset": "preset",
    "stages": "stages",
    "base_side": "base_side",
    "schedule": "schedule",
    "t": "T",
    "gamma": "gamma",
    "w_l": "w_l",
    "w_h": "w_h",
    "w_c": "w_c",
    "condition": "condition",
    "codec": "codec",
    "seed": "seed",
    "out": "out",
    "verify": "verify",
    "dump_stages": "dump_stages",
    "parallel": "parallel",
    "bank.path": "bank_path",
    "bank.kind": "bank_kind",
    "bank.seed": "bank_seed",
    "bank.items": "bank_items",
    "bank.classes": "bank_classes",
    "bank.channels": "bank_channels",
}

_BOOL_FIELDS = {"verify", "dump_stages", "parallel"}
_INT_FIELDS = {"base_side", "T", "condition", "seed", "bank_seed", "bank_items",
               "bank_classes", "bank_channels"}
_FLOAT_FIELDS = {"gamma", "w_l", "w_h", "w_c"}


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines into a field dict."""
    values = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        fname = _KEY_TO_FIELD.get(key.lower())
        if fname is None:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[fname] = _coerce(fname, value)
    return values


def _coerce(fname: str, value: str):
    if fname in _BOOL_FIELDS:
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{fname}: expected a boolean, got {value!r}")
    try:
        if fname in _INT_FIELDS:
            return int(value)
        if fname in _FLOAT_FIELDS:
            return float(value)
    except ValueError as e:
        raise ConfigError(f"{fname}: {e}") from e
    return value


def merge_config(base: RunConfig, overrides: dict) -> RunConfig:
    unknown = set(overrides) - {f for f in RunConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return replace(base, **overrides)


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    kind = cfg.schedule
    if kind is None:
        if cfg.preset and cfg.stages is None:
            preset = _preset(cfg)
            kind = "flow" if preset.schedule_kind is ScheduleKind.FLOW_MATCHING else "vp"
        else:
            kind = "vp"
    if kind == "vp":
        return vp_default(cfg.T)
    if kind == "flow":
        return flow_schedule(cfg.T)
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _preset(cfg: RunConfig) -> Preset:
    if cfg.preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {cfg.preset!r}; available: {', '.join(sorted(PRESETS))}"
        )
    return PRESETS[cfg.preset]


def _preset_with_overrides(cfg: RunConfig) -> Preset:
    preset = _preset(cfg)
    updates = {}
    for name in ("gamma", "w_l", "w_h", "w_c"):
        value = getattr(cfg, name)
        if value is not None:
            updates[name] = value
    return replace(preset, **updates) if updates else preset


def _parse_stage_triples(cfg: RunConfig, sched: NoiseSchedule) -> StagePlan:
    triples = []
    for part in cfg.stages.split(","):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ConfigError(f"stage {part!r}: expected side:steps:last_timestep")
        try:
            triples.append((int(bits[0]), int(bits[1]), float(bits[2])))
        except ValueError as e:
            raise ConfigError(f"stage {part!r}: {e}") from e
    w_l = cfg.w_l if cfg.w_l is not None else 7.5
    w_h = cfg.w_h if cfg.w_h is not None else 35.0
    w_c = cfg.w_c if cfg.w_c is not None else 0.6
    gamma = cfg.gamma if cfg.gamma is not None else 2.0
    flow = sched.kind is ScheduleKind.FLOW_MATCHING
    stages = []
    for i, (side, steps, last) in enumerate(triples):
        prev_side = triples[max(i - 1, 0)][0]
        if flow and last > 1.0:
            last = last / sched.T
        stages.append(
            StageSpec(
                resolution=Resolution(side),
                steps=steps,
                last_timestep=last,
                guidance=GuidanceWeights(w_l, w_h, Resolution(prev_side)),
                ca_fusion=w_c,
            )
        )
    try:
        return StagePlan(stages=tuple(stages), gamma=gamma, schedule=sched)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_plan(cfg: RunConfig, sched: NoiseSchedule) -> StagePlan:
    if cfg.stages is not None:
        return _parse_stage_triples(cfg, sched)
    preset = _preset_with_overrides(cfg)
    try:
        return plan_from_preset(preset, cfg.base_side, sched)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_direct_plan(cfg: RunConfig, plan: StagePlan, sched: NoiseSchedule) -> StagePlan:
    """Single-stage baseline at the plan's target resolution, same step
    budget semantics as the preset (or the plan's total steps for explicit
    stage lists)."""
    if cfg.stages is None and cfg.preset:
        return direct_plan(_preset_with_overrides(cfg), cfg.base_side, sched)
    target = plan.stages[-1].resolution
    total_steps = sum(s.steps for s in plan.stages)
    spec = StageSpec(
        resolution=target,
        steps=total_steps,
        last_timestep=0.0,
        guidance=plan.stages[-1].guidance,
        ca_fusion=0.0,
    )
    return StagePlan(stages=(spec,), gamma=plan.gamma, schedule=sched,
                     train_side=plan.train_side)


def build_codec(cfg: RunConfig) -> LatentCodec:
    if cfg.codec == "identity":
        return IDENTITY
    if cfg.codec == "haar1":
        return HAAR1
    raise ConfigError(f"unknown codec {cfg.codec!r}")


def build_bank(cfg: RunConfig, plan: StagePlan, codec: LatentCodec) -> LatentBank:
    """Latent bank at the plan's highest stage resolution.

    Procedural banks are generated as image-space textures at the target
    pixel resolution and pushed through the codec's encoder, so they are
    valid latents for any codec.
    """
    if cfg.bank_path:
        bank = load_bank(cfg.bank_path)
        if bank.resolution().side != plan.stages[-1].resolution.side:
            raise ConfigError(
                f"bank resolution {bank.resolution().side} does not match the "
                f"plan's target side {plan.stages[-1].resolution.side}"
            )
        return bank
    latent_side = plan.stages[-1].resolution.side
    pixel_side = latent_side * codec.spatial_factor
    images = make_bank(
        cfg.bank_kind,
        pixel_side,
        channels=cfg.bank_channels,
        n_items=cfg.bank_items,
        n_classes=cfg.bank_classes,
        seed=cfg.bank_seed,
    )
    if codec is IDENTITY:
        return images
    stack = np.stack(
        [encode(codec, images.item(k)).data for k in range(images.size)]
    )
    return LatentBank(stack, images.class_ids, images.weights)
