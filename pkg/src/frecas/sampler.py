"""Single-step denoising machinery: classifier-free guidance, its
frequency-aware variant, clean-signal prediction, and the deterministic
DDIM / flow-Euler update rules.

Frequency-aware guidance splits both scores at the previous stage's Nyquist
(via the band_split residual construction) and applies separate guidance
strengths to the two bands:

    combined = (1 - w_l) low_unc + w_l low_c + (1 - w_h) high_unc + w_h high_c

With w_l == w_h it reduces to plain guidance up to one floating addition per
element, since low + high reconstructs each score exactly.
"""

from dataclasses import dataclass

import numpy as np

from .freq import band_split
from .grid import LatentGrid, Resolution
from .schedule import NoiseSchedule, ScheduleKind, alpha_at


@dataclass(frozen=True)
class GuidanceWeights:
    """Band guidance strengths; base is the cut resolution (previous stage)."""

    w_l: float
    w_h: float
    base: Resolution

    def __post_init__(self):
        if not (np.isfinite(self.w_l) and np.isfinite(self.w_h)):
            raise ValueError("guidance weights must be finite")
        if self.w_l < 0 or self.w_h < 0:
            raise ValueError("guidance weights must be non-negative")


def cfg_combine(eps_unc: LatentGrid, eps_c: LatentGrid, w: float) -> LatentGrid:
    """Classifier-free guidance: (1 - w) * eps_unc + w * eps_c."""
    if eps_unc.shape != eps_c.shape:
        raise ValueError(f"shape mismatch: {eps_unc.shape} vs {eps_c.shape}")
    return LatentGrid((1.0 - w) * eps_unc.data + w * eps_c.data)


def facfg_combine(
    eps_unc: LatentGrid, eps_c: LatentGrid, gw: GuidanceWeights
) -> LatentGrid:
    """Frequency-aware guidance: per-band CFG, then sum the bands."""
    if eps_unc.shape != eps_c.shape:
        raise ValueError(f"shape mismatch: {eps_unc.shape} vs {eps_c.shape}")
    unc = band_split(eps_unc, gw.base)
    con = band_split(eps_c, gw.base)
    low = cfg_combine(unc.low, con.low, gw.w_l)
    high = cfg_combine(unc.high, con.high, gw.w_h)
    return LatentGrid(low.data + high.data)


def predict_z0(
    z_t: LatentGrid, eps_hat: LatentGrid, t: float, sched: NoiseSchedule
) -> LatentGrid:
    """Clean-signal estimate from the noisy latent and a predicted field.

    VP: (z_t - sqrt(1 - a_t) * eps_hat) / sqrt(a_t), the exact inverse of
    the forward form. Flow: z_t - t * v_hat with v_hat a velocity.
    """
    if z_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: {z_t.shape} vs {eps_hat.shape}")
    if sched.kind is ScheduleKind.VARIANCE_PRESERVING:
        a = alpha_at(sched, t)
        return LatentGrid((z_t.data - np.sqrt(1.0 - a) * eps_hat.data) / np.sqrt(a))
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"flow time {t} outside [0, 1]")
    return LatentGrid(z_t.data - t * eps_hat.data)


def ddim_step(
    z_t: LatentGrid,
    eps_hat: LatentGrid,
    t: float,
    t_prev: float,
    sched: NoiseSchedule,
) -> LatentGrid:
    """Deterministic (eta = 0) DDIM update from t down to t_prev."""
    if t_prev > t:
        raise ValueError(f"t_prev {t_prev} must not exceed t {t}")
    z0 = predict_z0(z_t, eps_hat, t, sched)
    a_prev = alpha_at(sched, t_prev)
    return LatentGrid(np.sqrt(a_prev) * z0.data + np.sqrt(1.0 - a_prev) * eps_hat.data)


def euler_flow_step(
    z_t: LatentGrid, v_hat: LatentGrid, t: float, t_prev: float
) -> LatentGrid:
    """Linear Euler update z + (t_prev - t) * v along the flow path."""
    if z_t.shape != v_hat.shape:
        raise ValueError(f"shape mismatch: {z_t.shape} vs {v_hat.shape}")
    t, t_prev = float(t), float(t_prev)
    if not (0.0 <= t_prev <= t <= 1.0):
        raise ValueError(f"need 0 <= t_prev <= t <= 1, got t={t}, t_prev={t_prev}")
    return LatentGrid(z_t.data + (t_prev - t) * v_hat.data)
