"""Command-line surface: cascade runs, PSD curve extraction, parameter
ablations, the cost/latency bench, and the preset listing.

Exit codes: 0 success, 1 usage/config error, 2 runtime/domain error, 3 IO
error. Every command is fully reproducible for a fixed seed; outputs carry
no timestamps.
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .bank import LatentBank
from .cascade import (
    PRESETS,
    StagePlan,
    StageSpec,
    compute_cost,
    direct_plan,
    run_cascade,
)
from .codec import decode
from .config import (
    ConfigError,
    RunConfig,
    build_bank,
    build_codec,
    build_direct_plan,
    build_plan,
    build_schedule,
    merge_config,
    parse_config_file,
)
from .freq import PsdCurve, band_energy_fractions, psd_decomposition, radial_psd, write_psd_csv
from .grid import LatentGrid, Resolution, seeded_gaussian, subseed, write_grid
from .sampler import GuidanceWeights
from .schedule import ScheduleKind

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_IO = 3

_SUBSEED_PSD_NOISE = 2


def _threads_cap() -> int:
    raw = os.environ.get("FRECAS_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"FRECAS_THREADS must be an integer, got {raw!r}")
    return max(n, 1)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def write_image(path, g: LatentGrid) -> str | None:
    """Write a portable graymap (1 channel) or pixmap (3 channels).

    Values are min-max normalized to [0, 255] per image; a constant image
    maps to 0. Returns the path, or None for unsupported channel counts.
    """
    if g.channels not in (1, 3):
        return None
    lo = float(g.data.min())
    hi = float(g.data.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    quant = np.clip(np.rint((g.data - lo) * scale), 0, 255).astype(np.uint8)
    magic = b"P5" if g.channels == 1 else b"P6"
    body = quant[0] if g.channels == 1 else np.transpose(quant, (1, 2, 0))
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (g.width, g.height))
        f.write(body.tobytes())
    return path


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_manifest(path, entries) -> None:
    with open(path, "w") as f:
        for key, value in entries:
            f.write(f"{key} = {_fmt(value)}\n")


def _manifest_entries(cfg: RunConfig, plan, report, direct_cost, outputs):
    entries = [
        ("seed", cfg.seed),
        ("preset", cfg.preset if cfg.stages is None else "custom"),
        ("schedule", plan.schedule.kind.value),
        ("codec", cfg.codec),
        ("condition", cfg.condition),
        ("train_side", plan.train_side),
        ("cost_units", report.cost_units),
        ("direct_cost_units", direct_cost),
        ("proxy_speedup", direct_cost / report.cost_units),
        ("bank.kind", cfg.bank_kind if not cfg.bank_path else "path"),
        ("bank.path", cfg.bank_path or ""),
        ("bank.seed", cfg.bank_seed),
        ("bank.items", cfg.bank_items),
        ("bank.classes", cfg.bank_classes),
        ("bank.channels", cfg.bank_channels),
    ]
    for i, rec in enumerate(report.stages):
        entries.append((f"stage.{i}.resolution", rec.resolution))
        entries.append((f"stage.{i}.steps", rec.steps))
        entries.append((f"stage.{i}.first_timestep", rec.first_timestep))
        entries.append((f"stage.{i}.last_timestep", rec.last_timestep))
        entries.append((f"stage.{i}.cost_units", rec.cost_units))
    for key, value in outputs:
        entries.append((f"output.{key}", value))
    return entries


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_sample(cfg: RunConfig) -> int:
    sched = build_schedule(cfg)
    plan = build_plan(cfg, sched)
    codec = build_codec(cfg)
    bank = build_bank(cfg, plan, codec)
    os.makedirs(cfg.out, exist_ok=True)

    dumps = []

    def dump_stage(i, z):
        if cfg.dump_stages:
            name = f"stage_{i}.frcg"
            write_grid(os.path.join(cfg.out, name), z)
            dumps.append((f"stage_{i}", name))

    image, report = run_cascade(
        plan, codec, bank, cfg.condition, cfg.seed,
        verify=cfg.verify, stage_callback=dump_stage,
    )
    direct_cost = compute_cost(build_direct_plan(cfg, plan, sched))

    outputs = []
    img_name = "image.pgm" if image.channels == 1 else "image.ppm"
    if write_image(os.path.join(cfg.out, img_name), image):
        outputs.append(("image", img_name))
    write_grid(os.path.join(cfg.out, "image.frcg"), image)
    outputs.append(("grid", "image.frcg"))
    outputs.extend(dumps)
    report = replace(report, outputs=tuple(name for _, name in outputs))
    write_manifest(
        os.path.join(cfg.out, "manifest.txt"),
        _manifest_entries(cfg, plan, report, direct_cost, outputs),
    )
    print(f"cost_units = {_fmt(report.cost_units)}")
    print(f"proxy_speedup = {_fmt(direct_cost / report.cost_units)} "
          f"(direct {_fmt(direct_cost)} at target resolution)")
    print(f"wrote {cfg.out}/manifest.txt")
    return EXIT_OK


def cmd_psd(cfg: RunConfig, timesteps) -> int:
    sched = build_schedule(cfg)
    if sched.kind is not ScheduleKind.VARIANCE_PRESERVING:
        raise ValueError("psd analysis requires a variance-preserving schedule")
    plan = build_plan(cfg, sched)
    codec = build_codec(cfg)
    bank = build_bank(cfg, plan, codec)
    os.makedirs(cfg.out, exist_ok=True)

    noises = [
        seeded_gaussian(bank.data.shape[1:], subseed(cfg.seed, _SUBSEED_PSD_NOISE, k))
        for k in range(bank.size)
    ]
    summary = ["t,low_band_signal_fraction,high_band_signal_fraction"]
    for t in timesteps:
        acc = None
        for k in range(bank.size):
            triplet = psd_decomposition(bank.item(k), noises[k], t, sched)
            if acc is None:
                acc = [c.power.copy() for c in triplet]
                freqs, res = triplet[0].freqs, triplet[0].resolution
            else:
                for a, c in zip(acc, triplet):
                    a += c.power
        curves = [PsdCurve(freqs, a / bank.size, res) for a in acc]
        write_psd_csv(os.path.join(cfg.out, f"psd_t{t:g}.csv"), *curves)
        low, high = band_energy_fractions(curves[2])
        summary.append(f"{t:g},{low:.17g},{high:.17g}")
    with open(os.path.join(cfg.out, "psd_summary.csv"), "w") as f:
        f.write("\n".join(summary) + "\n")
    print(f"wrote {len(timesteps)} PSD curves and psd_summary.csv to {cfg.out}/")
    return EXIT_OK


def _plan_for_n(cfg: RunConfig, n: int, sched) -> StagePlan:
    """Cascade with n additional stages interpolating the preset's ladder."""
    if cfg.stages is not None:
        raise ValueError("the N ablation needs a preset, not an explicit stage list")
    preset = PRESETS[cfg.preset]
    for name in ("gamma", "w_l", "w_h", "w_c"):
        if getattr(cfg, name) is not None:
            preset = replace(preset, **{name: getattr(cfg, name)})
    if n == 0:
        return direct_plan(preset, cfg.base_side, sched)
    target_mult = preset.scale_per_stage[-1]
    sides = [
        int(round(cfg.base_side * target_mult ** (i / n))) for i in range(n + 1)
    ]
    if any(b <= a for a, b in zip(sides, sides[1:])):
        raise ValueError(f"N={n} collapses the resolution ladder {sides}")
    budget = sum(preset.steps[1:])
    if budget < n:
        raise ValueError(f"preset step budget {budget} too small for N={n}")
    extra = [budget // n] * n
    for i in range(budget % n):
        extra[-1 - i] += 1
    L = float(preset.last_timesteps[0])
    flow = sched.kind is ScheduleKind.FLOW_MATCHING
    if flow:
        L = L / sched.T
    stages = []
    steps = [preset.steps[0]] + extra
    for i, side in enumerate(sides):
        prev = sides[max(i - 1, 0)]
        stages.append(
            StageSpec(
                resolution=Resolution(side),
                steps=steps[i],
                last_timestep=0.0 if i == n else L,
                guidance=GuidanceWeights(preset.w_l, preset.w_h, Resolution(prev)),
                ca_fusion=preset.w_c,
            )
        )
    return StagePlan(stages=tuple(stages), gamma=preset.gamma, schedule=sched,
                     train_side=cfg.base_side)


def _ablation_plan(cfg: RunConfig, param: str, value: float, sched) -> StagePlan:
    if param == "N":
        if value != int(value) or value < 0:
            raise ValueError(f"N must be a non-negative integer, got {value}")
        return _plan_for_n(cfg, int(value), sched)
    if param in ("w_l", "w_h"):
        if value < 0:
            raise ValueError(f"{param} must be non-negative, got {value}")
        return build_plan(replace(cfg, **{param: value}), sched)
    if param == "w_c":
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"w_c must lie in [0, 1], got {value}")
        return build_plan(replace(cfg, w_c=value), sched)
    if param == "L":
        if not 0.0 < value < sched.t_max:
            raise ValueError(f"L must lie in (0, {sched.t_max}), got {value}")
        plan = build_plan(cfg, sched)
        stages = tuple(
            spec if i == len(plan.stages) - 1 else replace(spec, last_timestep=value)
            for i, spec in enumerate(plan.stages)
        )
        return StagePlan(stages=stages, gamma=plan.gamma, schedule=sched,
                         train_side=plan.train_side)
    raise ConfigError(f"unknown ablation parameter {param!r}; "
                      "choose from w_h, w_l, w_c, N, L")


def _bank_mean_psd(bank: LatentBank, codec) -> np.ndarray:
    acc = None
    for k in range(bank.size):
        curve = radial_psd(decode(codec, bank.item(k)))
        acc = curve.power.copy() if acc is None else acc + curve.power
    return acc / bank.size


def cmd_ablate(cfg: RunConfig, param: str, values) -> int:
    sched = build_schedule(cfg)
    plans = [_ablation_plan(cfg, param, v, sched) for v in values]
    base_plan = build_plan(cfg, sched)
    codec = build_codec(cfg)
    bank = build_bank(cfg, base_plan, codec)
    bank_psd = _bank_mean_psd(bank, codec)
    os.makedirs(cfg.out, exist_ok=True)

    def one(plan):
        # every variant ends at the same target resolution, so one bank and
        # one reference spectrum serve the whole sweep
        image, report = run_cascade(plan, codec, bank, cfg.condition,
                                    cfg.seed, verify=cfg.verify)
        curve = radial_psd(image)
        cut = curve.n_bins // 4
        low, high = curve.power[:cut].sum(), curve.power[cut:].sum()
        dist = float(np.sqrt(np.sum((curve.power - bank_psd) ** 2)))
        return report.cost_units, float(high), float(low), dist

    if cfg.parallel and len(plans) > 1:
        with ThreadPoolExecutor(max_workers=_threads_cap()) as pool:
            rows = list(pool.map(one, plans))
    else:
        rows = [one(p) for p in plans]

    lines = ["value,cost_units,high_band_energy,low_band_energy,bank_psd_distance"]
    for v, (cost, high, low, dist) in zip(values, rows):
        lines.append(f"{v:g},{cost:.17g},{high:.17g},{low:.17g},{dist:.17g}")
    path = os.path.join(cfg.out, f"ablate_{param}.csv")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    sched = build_schedule(cfg)
    plan = build_plan(cfg, sched)
    codec = build_codec(cfg)
    bank = build_bank(cfg, plan, codec)

    def one(i):
        start = time.perf_counter()
        _, report = run_cascade(plan, codec, bank, cfg.condition, cfg.seed + i)
        return time.perf_counter() - start, report.cost_units

    if cfg.parallel:
        with ThreadPoolExecutor(max_workers=_threads_cap()) as pool:
            results = list(pool.map(one, range(5)))
    else:
        results = [one(i) for i in range(5)]
    for i, (secs, cost) in enumerate(results):
        print(f"run {i}: wall_seconds = {secs:.3f} cost_units = {_fmt(cost)}")
    mean_last3 = sum(s for s, _ in results[2:]) / 3.0
    costs = {c for _, c in results}
    print(f"bench: mean_wall_seconds_last3 = {mean_last3:.3f}")
    print(f"bench: cost_units = {_fmt(results[0][1])}"
          + ("" if len(costs) == 1 else " (WARNING: cost varied across runs)"))
    return EXIT_OK


def cmd_presets(cfg: RunConfig) -> int:
    print(f"{'name':10s} {'schedule':8s} {'sides':14s} {'steps':12s} "
          f"{'L':10s} {'gamma':5s} {'w_l':5s} {'w_h':5s} {'w_c':4s} {'cost':6s} {'speedup':7s}")
    for name in sorted(PRESETS):
        p = PRESETS[name]
        sched_name = "flow" if p.schedule_kind is ScheduleKind.FLOW_MATCHING else "vp"
        sides = ",".join(str(cfg.base_side * m) for m in p.scale_per_stage)
        steps = ",".join(str(s) for s in p.steps)
        ls = ",".join(f"{v:g}" for v in p.last_timesteps)
        cost = sum(s * m * m for s, m in zip(p.steps, p.scale_per_stage))
        direct = p.direct_steps * p.scale_per_stage[-1] ** 2
        print(f"{name:10s} {sched_name:8s} {sides:14s} {steps:12s} "
              f"{ls:10s} {p.gamma:<5g} {p.w_l:<5g} {p.w_h:<5g} {p.w_c:<4g} "
              f"{cost:<6g} {direct / cost:<7.3g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--preset", help="named cascade preset")
    p.add_argument("--stages", help="explicit plan: side:steps:L,...")
    p.add_argument("--base-side", type=int, dest="base_side")
    p.add_argument("--schedule", choices=["vp", "flow"])
    p.add_argument("--T", type=int, dest="T")
    p.add_argument("--gamma", type=float)
    p.add_argument("--w-l", type=float, dest="w_l")
    p.add_argument("--w-h", type=float, dest="w_h")
    p.add_argument("--w-c", type=float, dest="w_c")
    p.add_argument("--condition", type=int)
    p.add_argument("--codec", choices=["identity", "haar1"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--verify", action="store_true", default=None,
                   help="enable in-run invariant assertions")
    p.add_argument("--dump-stages", action="store_true", default=None,
                   dest="dump_stages")
    p.add_argument("--parallel", action="store_true", default=None)
    p.add_argument("--bank-path", dest="bank_path")
    p.add_argument("--bank-kind", choices=["value_noise", "white"], dest="bank_kind")
    p.add_argument("--bank-seed", type=int, dest="bank_seed")
    p.add_argument("--bank-items", type=int, dest="bank_items")
    p.add_argument("--bank-classes", type=int, dest="bank_classes")
    p.add_argument("--bank-channels", type=int, dest="bank_channels")


def _build_parser():
    parser = _Parser(prog="frecas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("sample", "run the cascade and write image, dumps and manifest"),
        ("psd", "write radial PSD decompositions of bank latents at given timesteps"),
        ("ablate", "sweep one parameter and write a metrics CSV"),
        ("bench", "run five samples and report wall time and cost units"),
        ("presets", "list the shipped cascade presets"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "psd":
            p.add_argument("--timesteps", default="900,600,300,0",
                           help="comma list of timesteps")
        if name == "ablate":
            p.add_argument("--param", required=True)
            p.add_argument("--values", required=True,
                           help="comma list of parameter values")
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = merge_config(cfg, parse_config_file(args.config))
    overrides = {}
    for name in RunConfig.__dataclass_fields__:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.stages is not None and args.preset is None:
        # an explicit CLI stage list replaces any preset from the config file
        overrides["preset"] = None
    return merge_config(cfg, overrides)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "sample":
            return cmd_sample(cfg)
        if args.command == "psd":
            timesteps = [float(t) for t in args.timesteps.split(",") if t.strip()]
            return cmd_psd(cfg, timesteps)
        if args.command == "ablate":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError("--values must list at least one value")
            return cmd_ablate(cfg, args.param, values)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "presets":
            return cmd_presets(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"frecas: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"frecas: io error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, AssertionError) as e:
        print(f"frecas: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
