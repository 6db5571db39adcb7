"""Closed-form noise predictors for priors whose posterior mean is analytic.

With a Gaussian (or Gaussian-mixture) data distribution the forward marginal
at every step is known exactly, so ``E[x0 | x_t]`` -- and hence the ideal
noise prediction -- can be written down without training anything.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filters import as_image
from .schedule import VarianceSchedule

POINT_MASS_STD = 1e-6


class DenoiserError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    mean: np.ndarray
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DenoiserError("prior std must be positive")
        object.__setattr__(self, "mean", as_image(self.mean, "prior mean"))


def point_mass_prior(at) -> GaussianPrior:
    """A Gaussian prior so narrow it behaves as a point mass at ``at``.

    The std is 1e-6 rather than exactly 0 so the usual formulas stay valid;
    posterior means then differ from ``at`` by O(1e-12) relative.
    """
    return GaussianPrior(at, POINT_MASS_STD)


@dataclass(frozen=True, eq=False)
class TemplateMixture:
    templates: np.ndarray  # (K, H, W, C)
    std: float = 0.2
    weights: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.templates, dtype=np.float64)
        if t.ndim == 3:
            t = t[..., None]
        if t.ndim != 4 or t.shape[0] < 1:
            raise DenoiserError("templates must be a non-empty (K, H, W, C) stack")
        if not self.std > 0:
            raise DenoiserError("template std must be positive")
        w = np.full(t.shape[0], 1.0 / t.shape[0]) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (t.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DenoiserError("mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "templates", t)
        object.__setattr__(self, "weights", w)

    @property
    def image_shape(self):
        return self.templates.shape[1:]


def _coefficients(s: VarianceSchedule, t: int):
    if t < 1 or t > s.T:
        raise DenoiserError(f"noise prediction needs 1 <= t <= {s.T}, got {t}")
    ac = float(s.alpha_cum[t])
    return ac, np.sqrt(ac), np.sqrt(1.0 - ac)


def _eps_from_x0(x_t, x0_hat, a, b):
    return (x_t - a * x0_hat) / b


def gaussian_posterior_mean(prior: GaussianPrior, s: VarianceSchedule, x_t, t: int) -> np.ndarray:
    ac, a, _ = _coefficients(s, t)
    v0 = prior.std ** 2
    return (v0 * a * x_t + (1.0 - ac) * prior.mean) / (ac * v0 + 1.0 - ac)


def gaussian_eps(prior: GaussianPrior, s: VarianceSchedule, x_t, t: int) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    _, a, b = _coefficients(s, t)
    return _eps_from_x0(x_t, gaussian_posterior_mean(prior, s, x_t, t), a, b)


def mixture_responsibilities(prior: TemplateMixture, s: VarianceSchedule, x_t, t: int) -> np.ndarray:
    ac, a, _ = _coefficients(s, t)
    var = ac * prior.std ** 2 + 1.0 - ac
    flat = prior.templates.reshape(prior.templates.shape[0], -1)
    diff = np.asarray(x_t, dtype=np.float64).reshape(1, -1) - a * flat
    with np.errstate(divide="ignore"):
        logits = np.log(prior.weights) - np.einsum("kn,kn->k", diff, diff) / (2.0 * var)
    logits -= logits.max()
    r = np.exp(logits)
    return r / r.sum()


def mixture_posterior_mean(prior: TemplateMixture, s: VarianceSchedule, x_t, t: int) -> np.ndarray:
    ac, a, _ = _coefficients(s, t)
    x_t = np.asarray(x_t, dtype=np.float64)
    v0 = prior.std ** 2
    denom = ac * v0 + 1.0 - ac
    r = mixture_responsibilities(prior, s, x_t, t)
    template_part = np.tensordot(r, prior.templates, axes=1)
    return (v0 * a * x_t + (1.0 - ac) * template_part) / denom


def mixture_eps(prior: TemplateMixture, s: VarianceSchedule, x_t, t: int) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    _, a, b = _coefficients(s, t)
    return _eps_from_x0(x_t, mixture_posterior_mean(prior, s, x_t, t), a, b)


class ClosedFormDenoiser:
    """Binds a prior to a schedule and exposes ``predict_eps(x_t, t)``.

    Stateless apart from the immutable prior, so one instance can serve
    any number of concurrent trajectories.
    """

    def __init__(self, prior, schedule: VarianceSchedule):
        if not isinstance(prior, (GaussianPrior, TemplateMixture)):
            raise DenoiserError(f"unsupported prior {type(prior).__name__}")
        self.prior = prior
        self.schedule = schedule

    @property
    def image_shape(self):
        if isinstance(self.prior, GaussianPrior):
            return self.prior.mean.shape
        return self.prior.image_shape

    def predict_eps(self, x_t, t: int) -> np.ndarray:
        if isinstance(self.prior, GaussianPrior):
            return gaussian_eps(self.prior, self.schedule, x_t, t)
        return mixture_eps(self.prior, self.schedule, x_t, t)

    def predict_x0(self, x_t, t: int) -> np.ndarray:
        if isinstance(self.prior, GaussianPrior):
            return gaussian_posterior_mean(self.prior, self.schedule, x_t, t)
        return mixture_posterior_mean(self.prior, self.schedule, x_t, t)


# -- synthetic template sets --------------------------------------------------

TEMPLATE_KINDS = ("stripes", "blobs", "gradients")


def _stripes(rng, yy, xx, channels):
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(1.0, 2.5)
    phase = rng.uniform(0, 2 * np.pi)
    u = np.cos(theta) * xx + np.sin(theta) * yy
    base = np.sin(2 * np.pi * freq * u + phase)
    tint = rng.uniform(0.5, 1.0, channels)
    return 0.8 * base[..., None] * tint


def _blobs(rng, yy, xx, channels):
    img = np.full(yy.shape + (channels,), -0.6)
    for _ in range(rng.integers(2, 4)):
        cy, cx = rng.uniform(0.2, 0.8, 2)
        rad = rng.uniform(0.12, 0.25)
        mask = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad ** 2))
        img += 1.4 * mask[..., None] * rng.uniform(0.6, 1.0, channels)
    return np.clip(img, -1, 1)


def _gradients(rng, yy, xx, channels):
    theta = rng.uniform(0, 2 * np.pi)
    u = np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)
    u = u / np.abs(u).max()
    offsets = rng.uniform(-0.2, 0.2, channels)
    return np.clip(0.9 * u[..., None] + offsets, -1, 1)


_MAKERS = {"stripes": _stripes, "blobs": _blobs, "gradients": _gradients}


def make_test_templates(kind: str, size: int = 16, count: int = 4, seed: int = 0,
                        channels: int = 3, std: float = 0.2) -> TemplateMixture:
    """Deterministic synthetic "dataset" of low-frequency images for the mixture prior."""
    if kind not in _MAKERS:
        raise DenoiserError(f"unknown template kind {kind!r}; choose from {TEMPLATE_KINDS}")
    if count < 1 or size < 1:
        raise DenoiserError("count and size must be >= 1")
    rng = np.random.default_rng([seed, TEMPLATE_KINDS.index(kind)])
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    stack = np.stack([_MAKERS[kind](rng, yy, xx, channels) for _ in range(count)])
    return TemplateMixture(stack, std=std)


def load_templates(directory, std: float = 0.2) -> TemplateMixture:
    """Every PNG/PGM/PPM file in ``directory`` (sorted by name) becomes one template."""
    from .imageio import read_image  # local: keeps denoisers free of Pillow at import time

    paths = sorted(p for p in Path(directory).iterdir()
                   if p.suffix.lower() in (".png", ".pgm", ".ppm", ".pnm"))
    if not paths:
        raise DenoiserError(f"no template images in {directory}")
    images = [read_image(p) for p in paths]
    if len({im.shape for im in images}) != 1:
        raise DenoiserError("template images must share one size and channel count")
    return TemplateMixture(np.stack(images), std=std)
