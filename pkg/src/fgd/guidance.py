"""Filter guidance: nudge each reverse step's mean toward the guide's filtered structure.

At step t the correction is ``lambda_t * d_t`` with

    d_t      = f(x_g) - f(mu_t)
    d_bar_t  = mean |d_t|
    lambda_t = min(d_bar_t / delta, 1) * sqrt(alpha_cum[t])

so guidance fades out as the sample's filtered structure approaches the
guide's, and never exceeds the signal strength of the current step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .filters import FilterError, as_image
from .schedule import VarianceSchedule


class TraceEntry(NamedTuple):
    t: int
    d_score: float
    lam: float


@dataclass
class GuidanceState:
    """Everything one guided trajectory needs; owns its trace, so never share it between runs."""

    filter: object
    guide_filtered: np.ndarray
    delta: float
    t_start: int
    t_stop: int
    trace: list[TraceEntry] = field(default_factory=list)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.t_stop > self.t_start:
            raise ValueError("t_stop must not exceed t_start")
        if self.guide_filtered.shape[:2] != tuple(self.filter.shape):
            raise FilterError("filtered guide does not match the filter size")

    @classmethod
    def from_guide(cls, guide, filt, delta, t_start, t_stop) -> "GuidanceState":
        return cls(filt, filt.apply(as_image(guide, "guide")), float(delta), int(t_start), int(t_stop))

    def active(self, t: int) -> bool:
        return self.t_stop <= t <= self.t_start

    def fresh(self) -> "GuidanceState":
        """Copy with an empty trace, sharing the (read-only) filter and target."""
        return GuidanceState(self.filter, self.guide_filtered, self.delta, self.t_start, self.t_stop)


def guidance_vector(gs: GuidanceState, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != gs.guide_filtered.shape:
        raise FilterError(f"sample shape {mu.shape} does not match guide {gs.guide_filtered.shape}")
    return gs.guide_filtered - gs.filter.apply(mu)


def d_score(d) -> float:
    """Mean absolute value over every pixel and channel."""
    d = np.asarray(d, dtype=np.float64)
    return float(np.abs(d).sum() / d.size)


def adaptive_weight(d_bar: float, delta: float, sqrt_alpha_cum: float) -> float:
    if not delta > 0:
        raise ValueError("delta must be positive")
    return min(d_bar / delta, 1.0) * sqrt_alpha_cum


def guided_mean(mu, d, lam: float) -> np.ndarray:
    if lam == 0:
        return np.array(mu, dtype=np.float64, copy=True)
    return mu + lam * d


def guidance_hook(gs: GuidanceState, mu, t: int, s: VarianceSchedule | None = None,
                  signal_scale: float | None = None) -> np.ndarray:
    """Apply one guided update to ``mu`` and record ``(t, d_bar, lambda)``.

    ``signal_scale`` overrides ``sqrt(alpha_cum[t])``; samplers that guide the
    clean-signal estimate rather than the mean pass 1.0. Outside
    ``[t_stop, t_start]`` the input is returned untouched, but ``d_bar`` is
    still measured so the trace covers the whole trajectory.
    """
    d = guidance_vector(gs, mu)
    d_bar = d_score(d)
    if not gs.active(t):
        gs.trace.append(TraceEntry(int(t), d_bar, 0.0))
        return mu
    if signal_scale is None:
        signal_scale = float(np.sqrt(s.alpha_cum[t]))
    lam = adaptive_weight(d_bar, gs.delta, signal_scale)
    gs.trace.append(TraceEntry(int(t), d_bar, lam))
    return guided_mean(mu, d, lam)


def make_hook(gs: GuidanceState, s: VarianceSchedule):
    """Sampler-facing callable ``hook(value, t, signal_scale)``."""
    def hook(value, t, signal_scale):
        return guidance_hook(gs, value, t, s, signal_scale)
    return hook


def laplacian_blend(x0, guide, f) -> np.ndarray:
    """Swap the filtered band of ``x0`` for the guide's: ``x0 - f(x0) + f(guide)``."""
    x0 = as_image(x0)
    guide = as_image(guide, "guide")
    # Error-free sums keep both degenerate cases exact: guide == x0 returns x0
    # and an identity filter returns the guide, bit for bit.
    d_hi, d_lo = _two_sum(f.apply(guide), -f.apply(x0))
    s, e = _two_sum(x0, d_hi)
    return s + (e + d_lo)


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@dataclass(frozen=True)
class Preset:
    sampler: str
    steps: int
    t_start: int
    t_stop: int
    delta: float
    sigma_spatial: float
    sigma_value: float
    init: str = "noise"
    strength: float | None = None


PRESETS = {
    "sd-ddim": Preset("ddim", 50, 50, 10, 0.05, 5.0, 0.35),
    "sd-plms": Preset("plms", 50, 50, 10, 0.05, 5.0, 0.35),
    "sd-sdedit": Preset("ddim", 50, 50, 10, 0.05, 5.0, 0.35, init="sdedit", strength=0.6),
    "sd-ddpm": Preset("ddpm", 50, 50, 25, 0.2, 5.0, 0.35),
    "glide-ddpm": Preset("ddpm", 100, 100, 50, 0.6, 3.0, 0.2),
}
