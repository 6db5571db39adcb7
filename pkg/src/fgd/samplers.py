"""Forward diffusion and the DDPM / DDIM / PLMS reverse samplers.

The denoiser is a black box with ``predict_eps(x_t, t)``. Every stepper
takes an optional guidance hook ``hook(value, t, signal_scale) -> value``:
DDPM hands it the posterior mean (signal scale ``sqrt(alpha_cum[t])``),
DDIM and PLMS hand it the clean-signal estimate (signal scale 1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Protocol

import numpy as np

from .guidance import GuidanceState, d_score, make_hook
from .schedule import ScheduleError, VarianceSchedule

SAMPLERS = ("ddpm", "ddim", "plms")
VARIANCES = ("beta", "posterior")
INITS = ("noise", "sdedit", "ddim_inverted")
TRACE_SCHEMA = "# fgd-trajectory v1"
TRACE_COLUMNS = ("t", "d_score", "lambda", "l1_to_guide_filtered")

Hook = Callable[[np.ndarray, int, float], np.ndarray]


class SamplerError(ValueError):
    pass


class Denoiser(Protocol):
    def predict_eps(self, x_t: np.ndarray, t: int) -> np.ndarray: ...


class CounterNoise:
    """Gaussian noise addressed by ``(seed, t, purpose)`` rather than by draw order.

    Each request builds a fresh Philox stream keyed on the triple, so two runs
    that differ only in guidance see exactly the same noise at every step.
    """

    PURPOSES = {"init": 1, "step": 2}

    def __init__(self, seed: int):
        if not 0 <= seed < 2 ** 63:
            raise SamplerError("seed must be a non-negative 63-bit integer")
        self.seed = int(seed)

    def normal(self, t: int, purpose: str, shape) -> np.ndarray:
        key = np.array([self.seed, (self.PURPOSES[purpose] << 32) | int(t)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key)).standard_normal(shape)


# -- closed-form pieces ---------------------------------------------------------


def _check_t(s: VarianceSchedule, t: int, lo: int = 0):
    if not lo <= t <= s.T:
        raise ScheduleError(f"step {t} outside {lo}..{s.T}")


def forward_diffuse(s: VarianceSchedule, x0, t: int, z) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x0.shape != z.shape:
        raise SamplerError(f"noise shape {z.shape} != image shape {x0.shape}")
    _check_t(s, t)
    ac = s.alpha_cum[t]
    return np.sqrt(ac) * x0 + np.sqrt(1.0 - ac) * z


def predict_x0(s: VarianceSchedule, x_t, eps, t: int) -> np.ndarray:
    _check_t(s, t)
    ac = s.alpha_cum[t]
    return (np.asarray(x_t) - np.sqrt(1.0 - ac) * np.asarray(eps)) / np.sqrt(ac)


def posterior_mean(s: VarianceSchedule, x_t, eps, t: int) -> np.ndarray:
    _check_t(s, t, lo=1)
    return (np.asarray(x_t) - s.beta[t] / np.sqrt(1.0 - s.alpha_cum[t]) * np.asarray(eps)) / np.sqrt(s.alpha[t])


def posterior_variance(s: VarianceSchedule, t: int) -> float:
    """``beta_tilde_t = (1 - alpha_cum[t-1]) / (1 - alpha_cum[t]) * beta_t``."""
    _check_t(s, t, lo=1)
    return float((1.0 - s.alpha_cum[t - 1]) / (1.0 - s.alpha_cum[t]) * s.beta[t])


def ddim_sigma(s: VarianceSchedule, t: int, t_prev: int, eta: float) -> float:
    a_t, a_p = s.alpha_cum[t], s.alpha_cum[t_prev]
    return float(eta * np.sqrt((1.0 - a_p) / (1.0 - a_t) * (1.0 - a_t / a_p)))


# -- steppers -------------------------------------------------------------------


class StepRecord(NamedTuple):
    t: int
    x_t: np.ndarray | None
    mean: np.ndarray | None
    x0_hat: np.ndarray | None
    d_bar: float
    lam: float


def _record(t, x_t, mean, x0_hat):
    return StepRecord(int(t), x_t, mean, x0_hat, float("nan"), 0.0)


def reverse_variance(s: VarianceSchedule, t: int, variance: str = "beta") -> float:
    """``beta_t`` (exact for a unit-Gaussian prior) or ``beta_tilde_t`` (exact for a point mass)."""
    if variance == "beta":
        _check_t(s, t, lo=1)
        return float(s.beta[t])
    if variance == "posterior":
        return posterior_variance(s, t)
    raise SamplerError(f"unknown reverse variance {variance!r}")


def ddpm_step(d: Denoiser, s: VarianceSchedule, x_t, t: int, noise: CounterNoise,
              hook: Hook | None = None, variance: str = "beta"):
    """One ancestral step ``x_t -> x_{t-1}``; no noise is added at t = 1."""
    _check_t(s, t, lo=1)
    eps = d.predict_eps(x_t, t)
    mu = posterior_mean(s, x_t, eps, t)
    if hook is not None:
        mu = hook(mu, t, float(np.sqrt(s.alpha_cum[t])))
    if t > 1:
        x_prev = mu + np.sqrt(reverse_variance(s, t, variance)) * noise.normal(t, "step", mu.shape)
    else:
        x_prev = mu
    return x_prev, _record(t, x_t, mu, predict_x0(s, x_t, eps, t))


def _transport(s, x0_hat, eps, t_prev, sigma=0.0):
    a_p = s.alpha_cum[t_prev]
    direction = np.sqrt(max(1.0 - a_p - sigma * sigma, 0.0))
    return np.sqrt(a_p) * x0_hat + direction * eps


def ddim_step(d: Denoiser, s: VarianceSchedule, x_t, t: int, t_prev: int, eta: float = 0.0,
              hook: Hook | None = None, noise: CounterNoise | None = None):
    _check_t(s, t, lo=1)
    if not 0 <= t_prev < t:
        raise SamplerError("DDIM needs 0 <= t_prev < t")
    eps = d.predict_eps(x_t, t)
    x0_hat = predict_x0(s, x_t, eps, t)
    if hook is not None:
        x0_hat = hook(x0_hat, t, 1.0)
    sigma = ddim_sigma(s, t, t_prev, eta)
    mean = _transport(s, x0_hat, eps, t_prev, sigma)
    if sigma > 0:
        if noise is None:
            raise SamplerError("eta > 0 needs a noise source")
        x_prev = mean + sigma * noise.normal(t, "step", mean.shape)
    else:
        x_prev = mean
    return x_prev, _record(t, x_t, mean, x0_hat)


def ddim_invert(d: Denoiser, s: VarianceSchedule, x0, steps: int | None = None) -> np.ndarray:
    """Run the deterministic DDIM update upward from ``x0`` to step ``steps`` (default T).

    The noise estimate for the move ``t-1 -> t`` is taken at the current
    latent with timestep ``t``, the usual approximation.
    """
    steps = s.T if steps is None else int(steps)
    _check_t(s, steps)
    x = np.asarray(x0, dtype=np.float64).copy()
    for t in range(1, steps + 1):
        eps = d.predict_eps(x, t)
        x = _transport(s, predict_x0(s, x, eps, t - 1), eps, t)
    return x


PLMS_COEFFS = (55.0, -59.0, 37.0, -9.0)


def plms_combine(e_t, history) -> np.ndarray:
    """Fourth-order multistep combination of the current and last three noise estimates."""
    e3, e2, e1 = history[-3], history[-2], history[-1]
    c0, c1, c2, c3 = PLMS_COEFFS
    return (c0 * e_t + c1 * e1 + c2 * e2 + c3 * e3) / 24.0


def plms_step(d: Denoiser, s: VarianceSchedule, x_t, t: int, t_prev: int, history=(),
              hook: Hook | None = None):
    """Pseudo linear multistep step; returns ``(x_prev, record, history)``.

    Until three earlier noise estimates exist the step is a pseudo improved
    Euler stage (a DDIM predictor, a second evaluation at the predicted
    point, and the average of both). ``history`` holds raw denoiser outputs
    only; guided adjustments never feed back into it.
    """
    _check_t(s, t, lo=1)
    if not 0 <= t_prev < t:
        raise SamplerError("PLMS needs 0 <= t_prev < t")
    history = tuple(history)
    e_t = d.predict_eps(x_t, t)
    if len(history) < 3:
        if t_prev > 0:
            x_pred = _transport(s, predict_x0(s, x_t, e_t, t), e_t, t_prev)
            e_prime = (e_t + d.predict_eps(x_pred, t_prev)) / 2.0
        else:
            e_prime = e_t
    else:
        e_prime = plms_combine(e_t, history)
    x0_hat = predict_x0(s, x_t, e_prime, t)
    if hook is not None:
        x0_hat = hook(x0_hat, t, 1.0)
    x_prev = _transport(s, x0_hat, e_prime, t_prev)
    return x_prev, _record(t, x_t, x_prev, x0_hat), (history + (e_t,))[-3:]


# -- full runs ------------------------------------------------------------------


@dataclass
class SamplerConfig:
    kind: str
    schedule: VarianceSchedule
    eta: float = 0.0
    seed: int = 0
    init: str = "noise"
    strength: float | None = None
    shape: tuple | None = None
    variance: str = "beta"

    def __post_init__(self):
        if self.kind not in SAMPLERS:
            raise SamplerError(f"unknown sampler {self.kind!r}")
        if self.init not in INITS:
            raise SamplerError(f"unknown init {self.init!r}")
        if self.init == "sdedit":
            if self.strength is None or not 0 < self.strength <= 1:
                raise SamplerError("sdedit init needs strength in (0, 1]")
        elif self.strength is not None:
            raise SamplerError("strength only applies to sdedit init")
        if self.variance not in VARIANCES:
            raise SamplerError(f"unknown reverse variance {self.variance!r}")
        if not 0 <= self.eta <= 1:
            raise SamplerError("eta must lie in [0, 1]")

    def start_step(self) -> int:
        if self.init == "sdedit":
            return int(np.floor(self.strength * self.schedule.T + 0.5))
        return self.schedule.T


@dataclass
class Trajectory:
    records: list[StepRecord] = field(default_factory=list)
    x0: np.ndarray | None = None

    @property
    def t(self):
        return [r.t for r in self.records]

    @property
    def d_scores(self):
        return [r.d_bar for r in self.records]

    @property
    def lambdas(self):
        return [r.lam for r in self.records]


def run_sampler(d: Denoiser, cfg: SamplerConfig, guidance: GuidanceState | None = None,
                guide=None, keep_images: bool = True) -> Trajectory:
    s = cfg.schedule
    noise = CounterNoise(cfg.seed)
    if cfg.init != "noise" and guide is None:
        raise SamplerError(f"{cfg.init} init needs a guide image")
    shape = cfg.shape or (np.shape(guide) if guide is not None else getattr(d, "image_shape", None))
    if shape is None:
        raise SamplerError("cannot infer the image shape")
    shape = tuple(shape)

    start = cfg.start_step()
    if cfg.init == "noise":
        x = noise.normal(start, "init", shape)
    elif cfg.init == "sdedit":
        x = forward_diffuse(s, guide, start, noise.normal(start, "init", shape))
    else:
        x = ddim_invert(d, s, guide, start)

    hook = make_hook(guidance, s) if guidance is not None else None
    traj = Trajectory()
    history = ()
    for t in range(start, 0, -1):
        if cfg.kind == "ddpm":
            x_next, rec = ddpm_step(d, s, x, t, noise, hook, cfg.variance)
        elif cfg.kind == "ddim":
            x_next, rec = ddim_step(d, s, x, t, t - 1, cfg.eta, hook, noise)
        else:
            x_next, rec, history = plms_step(d, s, x, t, t - 1, history, hook)
        if guidance is not None:
            entry = guidance.trace[-1]
            rec = rec._replace(d_bar=entry.d_score, lam=entry.lam)
        if not keep_images:
            rec = rec._replace(x_t=None, mean=None, x0_hat=None)
        traj.records.append(rec)
        x = x_next
    traj.x0 = x
    return traj


def trajectory_rows(traj: Trajectory, guidance: GuidanceState | None = None):
    """Rows of the per-step CSV; the L1 column needs stored x0 estimates and a guidance target."""
    for rec in traj.records:
        l1 = float("nan")
        if guidance is not None and rec.x0_hat is not None:
            l1 = d_score(guidance.guide_filtered - guidance.filter.apply(rec.x0_hat))
        yield (rec.t, rec.d_bar, rec.lam, l1)


def write_trajectory_csv(path, traj: Trajectory, guidance: GuidanceState | None = None):
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t, dbar, lam, l1 in trajectory_rows(traj, guidance):
            w.writerow([t, repr(float(dbar)), repr(float(lam)), repr(float(l1))])


def read_trajectory_csv(path) -> list[tuple]:
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\n")
        if header != TRACE_SCHEMA:
            raise ValueError(f"{path}: expected schema line {TRACE_SCHEMA!r}, got {header!r}")
        reader = csv.reader(fh)
        if tuple(next(reader)) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns")
        return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader]
