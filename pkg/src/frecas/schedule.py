"""Noise schedules, SNR arithmetic, forward diffusion, and the closed-form
timestep shifts that keep SNR matched across resolution changes.

Two schedule kinds are supported:

* variance preserving (VP): z_t = sqrt(a_t) z_0 + sqrt(1 - a_t) eps, with a_t
  the cumulative product of (1 - beta_k) over a linear beta ramp. Timesteps
  are real-valued in [0, T]; a_t is evaluated by piecewise-linear
  interpolation between the integer grid points, with a_0 = 1.
* flow matching: z_t = (1 - t) z_0 + t eps over continuous t in [0, 1].
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .grid import LatentGrid


class ScheduleKind(enum.Enum):
    VARIANCE_PRESERVING = "vp"
    FLOW_MATCHING = "flow"


DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

_ALPHA_BISECT_TOL = 1e-9   # required accuracy in alpha
_BISECT_ITERS = 200        # narrows t far below that in practice


@dataclass(frozen=True)
class NoiseSchedule:
    kind: ScheduleKind
    T: int = DEFAULT_T
    alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("schedule needs at least one timestep")
        if self.kind is ScheduleKind.VARIANCE_PRESERVING:
            if self.alpha is None:
                betas = np.linspace(DEFAULT_BETA_START, DEFAULT_BETA_END, self.T)
                alpha = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
            else:
                alpha = np.asarray(self.alpha, dtype=np.float64)
            if alpha.shape != (self.T + 1,):
                raise ValueError(f"alpha must have length T+1={self.T + 1}")
            if alpha[0] != 1.0 or alpha[-1] <= 0.0 or np.any(np.diff(alpha) >= 0):
                raise ValueError("alpha must start at 1, stay positive and strictly decrease")
            alpha.setflags(write=False)
            object.__setattr__(self, "alpha", alpha)
        else:
            object.__setattr__(self, "alpha", None)

    @property
    def t_max(self) -> float:
        return float(self.T) if self.kind is ScheduleKind.VARIANCE_PRESERVING else 1.0


def vp_default(T: int = DEFAULT_T) -> NoiseSchedule:
    """Linear-beta VP schedule (1e-4 to 0.02), the SD-family convention."""
    return NoiseSchedule(ScheduleKind.VARIANCE_PRESERVING, T)


def flow_schedule(T: int = DEFAULT_T) -> NoiseSchedule:
    """Rectified-flow schedule; T only maps discrete timestep indices to [0,1]."""
    return NoiseSchedule(ScheduleKind.FLOW_MATCHING, T)


def _require_vp(sched: NoiseSchedule):
    if sched.kind is not ScheduleKind.VARIANCE_PRESERVING:
        raise ValueError("operation requires a variance-preserving schedule")


def alpha_at(sched: NoiseSchedule, t: float) -> float:
    """a_t by piecewise-linear interpolation; a_0 = 1."""
    _require_vp(sched)
    t = float(t)
    if not 0.0 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [0, {sched.T}]")
    lo = int(np.floor(t))
    if lo == sched.T:
        return float(sched.alpha[-1])
    frac = t - lo
    a0, a1 = sched.alpha[lo], sched.alpha[lo + 1]
    return float(a0 + frac * (a1 - a0))


def alpha_inverse(sched: NoiseSchedule, target: float) -> float:
    """Monotone bisection for the t with a_t = target on the interpolated curve."""
    _require_vp(sched)
    if not sched.alpha[-1] <= target <= 1.0:
        raise ValueError(
            f"alpha {target} outside the schedule range [{sched.alpha[-1]:.3e}, 1]"
        )
    lo, hi = 0.0, float(sched.T)  # alpha(lo) >= target >= alpha(hi)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        a = alpha_at(sched, mid)
        if abs(a - target) <= _ALPHA_BISECT_TOL and hi - lo <= 1e-9:
            return mid
        if a > target:
            lo = mid
        else:
            hi = mid
        if hi == lo:
            break
    return 0.5 * (lo + hi)


def snr(sched: NoiseSchedule, t: float) -> float:
    """Signal-to-noise ratio a_t / (1 - a_t); diverges at t = 0."""
    _require_vp(sched)
    a = alpha_at(sched, t)
    if a >= 1.0:
        raise ValueError("SNR is infinite at t = 0")
    return a / (1.0 - a)


def diffuse(z0: LatentGrid, t: float, noise: LatentGrid, sched: NoiseSchedule) -> LatentGrid:
    """Forward diffusion to timestep t with the given noise realization."""
    if z0.shape != noise.shape:
        raise ValueError(f"shape mismatch: {z0.shape} vs {noise.shape}")
    if sched.kind is ScheduleKind.VARIANCE_PRESERVING:
        a = alpha_at(sched, t)
        return LatentGrid(np.sqrt(a) * z0.data + np.sqrt(1.0 - a) * noise.data)
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"flow time {t} outside [0, 1]")
    return LatentGrid((1.0 - t) * z0.data + t * noise.data)


def shift_timestep_vp(L: float, ratio: float, gamma: float, sched: NoiseSchedule) -> float:
    """Timestep F with SNR(F) = SNR(L) * ratio**gamma, via the closed form

        a_F = ratio**gamma * a_L / (1 + (ratio**gamma - 1) * a_L)

    then inverted through the schedule. ratio is the side ratio of the
    previous stage over the next (<= 1 when growing resolution), so F >= L.
    """
    _require_vp(sched)
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"resolution ratio must be in (0, 1], got {ratio}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    if not 0.0 < L < sched.T:
        raise ValueError(f"L must lie strictly inside (0, {sched.T})")
    r = ratio ** gamma
    a_l = alpha_at(sched, L)
    a_f = r * a_l / (1.0 + (r - 1.0) * a_l)
    return alpha_inverse(sched, a_f)


def shift_timestep_flow(L: float, scale: float) -> float:
    """SD3-style flow shift F = sqrt(k) L / (1 + (sqrt(k) - 1) L), k = scale.

    A Moebius map on [0,1] with fixed points 0 and 1; applying scale k then
    1/k returns L. Cascades use scale >= 1 (growing resolution) but any
    positive scale is a valid map.
    """
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    L = float(L)
    if not 0.0 <= L <= 1.0:
        raise ValueError(f"flow time {L} outside [0, 1]")
    root = np.sqrt(scale)
    return float(root * L / (1.0 + (root - 1.0) * L))
