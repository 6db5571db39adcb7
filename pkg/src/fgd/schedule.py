"""Variance schedules for the discrete forward/reverse diffusion process.

Indexing convention used throughout the package: steps run ``t = 1..T`` and
``t = 0`` is the clean-data boundary with ``alpha_cum[0] == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    """Invalid schedule parameters or out-of-range step index."""


@dataclass(frozen=True, eq=False)
class VarianceSchedule:
    """Betas for steps 1..T plus the derived alpha and cumulative products.

    ``beta``, ``alpha`` and ``alpha_cum`` are stored with a leading entry for
    ``t = 0`` (beta 0, alpha 1, alpha_cum 1) so they can be indexed by ``t``
    directly. ``steps`` records which training steps each entry corresponds to
    (``steps[t]``); for an un-respaced schedule it is just ``0..T``.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_cum: np.ndarray
    steps: np.ndarray
    beta_start: float | None = None
    beta_end: float | None = None
    train_T: int | None = field(default=None)

    @classmethod
    def from_betas(cls, betas, steps=None, beta_start=None, beta_end=None, train_T=None):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("need at least one beta")
        if not np.all((betas > 0) & (betas < 1)):
            raise ScheduleError("betas must lie in (0, 1)")
        beta = np.concatenate([[0.0], betas])
        alpha = 1.0 - beta
        alpha_cum = np.cumprod(alpha)
        if steps is None:
            steps = np.arange(betas.size + 1)
        steps = np.asarray(steps, dtype=np.int64)
        if steps.shape != beta.shape or steps[0] != 0 or np.any(np.diff(steps) <= 0):
            raise ScheduleError("steps must start at 0 and strictly increase")
        for arr in (beta, alpha, alpha_cum, steps):
            arr.setflags(write=False)
        s = cls(beta, alpha, alpha_cum, steps, beta_start, beta_end,
                train_T if train_T is not None else int(steps[-1]))
        s._check()
        return s

    def _check(self):
        ac = self.alpha_cum
        if not (np.all(np.diff(ac) < 0) and ac[-1] > 0 and ac[0] == 1.0):
            raise ScheduleError("alpha_cum must be strictly decreasing in (0, 1]")

    @property
    def T(self) -> int:
        return self.beta.size - 1

    def _index(self, t) -> int:
        t = int(t)
        if not 0 <= t <= self.T:
            raise ScheduleError(f"step {t} outside 0..{self.T}")
        return t

    def signal_noise(self, t) -> tuple[float, float]:
        return signal_noise_strength(self, t)

    def to_text(self) -> str:
        """Plain ``key=value`` block; round-trips through :func:`schedule_from_text`."""
        if self.beta_start is None or self.beta_end is None:
            raise ScheduleError("only linear schedules are serialisable")
        lines = [
            f"T={self.train_T}",
            f"beta_start={self.beta_start!r}",
            f"beta_end={self.beta_end!r}",
            "steps=" + ",".join(str(int(s)) for s in self.steps[1:]),
        ]
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        if not isinstance(other, VarianceSchedule):
            return NotImplemented
        return (np.array_equal(self.beta, other.beta)
                and np.array_equal(self.steps, other.steps))

    __hash__ = None


def linear_beta_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> VarianceSchedule:
    if T < 1:
        raise ScheduleError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ScheduleError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return VarianceSchedule.from_betas(betas, beta_start=float(beta_start),
                                       beta_end=float(beta_end), train_T=T)


def signal_noise_strength(s: VarianceSchedule, t: int) -> tuple[float, float]:
    """Return ``(sqrt(alpha_cum[t]), sqrt(1 - alpha_cum[t]))``."""
    ac = s.alpha_cum[s._index(t)]
    return float(np.sqrt(ac)), float(np.sqrt(1.0 - ac))


def respace_indices(T: int, K: int) -> np.ndarray:
    """K evenly spaced steps in 1..T, always including T; halves round up."""
    k = np.arange(1, K + 1)
    return np.floor(k * T / K + 0.5).astype(np.int64)


def respace(s: VarianceSchedule, K: int) -> VarianceSchedule:
    """Keep K of the schedule's steps, recomputing betas so alpha_cum is unchanged there."""
    if not 1 <= K <= s.T:
        raise ScheduleError(f"K must lie in 1..{s.T}")
    if K == s.T:
        return s  # ratio-derived betas would differ from the originals in the last bit
    idx = np.concatenate([[0], respace_indices(s.T, K)])
    ac = s.alpha_cum[idx]
    betas = 1.0 - ac[1:] / ac[:-1]
    out = VarianceSchedule.from_betas(betas, steps=s.steps[idx], beta_start=s.beta_start,
                                      beta_end=s.beta_end, train_T=s.train_T)
    # from_betas re-derives alpha_cum by cumprod; restore the exact originals
    exact = ac.copy()
    exact.setflags(write=False)
    object.__setattr__(out, "alpha_cum", exact)
    out._check()
    return out


def schedule_from_text(text: str) -> VarianceSchedule:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    try:
        base = linear_beta_schedule(int(kv["T"]), float(kv["beta_start"]), float(kv["beta_end"]))
    except KeyError as exc:
        raise ScheduleError(f"missing key {exc.args[0]!r}") from None
    steps = [int(v) for v in kv.get("steps", "").split(",") if v]
    if not steps or steps == list(range(1, base.T + 1)):
        return base
    if steps[-1] != base.T or any(b <= a for a, b in zip(steps, steps[1:])) or steps[0] < 1:
        raise ScheduleError("respaced steps must increase and end at T")
    idx = np.array([0] + steps)
    ac = base.alpha_cum[idx]
    out = VarianceSchedule.from_betas(1.0 - ac[1:] / ac[:-1], steps=idx,
                                      beta_start=base.beta_start, beta_end=base.beta_end,
                                      train_T=base.T)
    exact = ac.copy()
    exact.setflags(write=False)
    object.__setattr__(out, "alpha_cum", exact)
    return out


def default_schedule(steps: int = 50) -> VarianceSchedule:
    """Linear 1e-4..0.02 over 1000 training steps, respaced for inference."""
    return respace(linear_beta_schedule(1000, 1e-4, 0.02), steps)
