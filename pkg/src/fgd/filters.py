"""Guide filters: the packed joint bilateral operator and an ILVR-style low-pass.

Images are ``(H, W, C)`` float arrays, nominally in [-1, 1]. Both filter
kinds expose ``apply(x)`` and so can be used interchangeably wherever a guide
filter is expected.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

MAGIC = b"FGDT"


class FilterError(ValueError):
    pass


def as_image(x, name="image") -> np.ndarray:
    """Coerce to a finite float64 ``(H, W, C)`` array (2-D input gains a channel axis)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or min(x.shape) < 1:
        raise FilterError(f"{name} must be a non-empty H x W x C array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise FilterError(f"{name} contains non-finite values")
    return x


@dataclass(frozen=True)
class BilateralParams:
    sigma_spatial: float = 5.0
    sigma_value: float = 0.35
    radius: int | None = None  # None -> ceil(3 * sigma_spatial)

    def __post_init__(self):
        if not self.sigma_spatial > 0 or not self.sigma_value > 0:
            raise FilterError("bilateral sigmas must be positive")
        if self.radius is not None and self.radius < 1:
            raise FilterError("radius must be >= 1")

    @property
    def window_radius(self) -> int:
        if self.radius is not None:
            return int(self.radius)
        return max(1, math.ceil(3 * self.sigma_spatial))


# -- numba kernels ----------------------------------------------------------
# Weights are held as (H, window, W) so the inner loop runs over a contiguous
# output row.


@numba.njit(cache=True)
def _build_kernel(gp, H, W, r, ss, sv):
    n = 2 * r + 1
    Cg = gp.shape[0]
    w = np.zeros((H, n * n, W))
    inv_s = 1.0 / (2.0 * ss * ss)
    inv_v = 1.0 / (2.0 * sv * sv)
    for i in range(H):
        dy0 = max(0, r - i)
        dy1 = min(n, H + r - i)
        for j in range(W):
            dx0 = max(0, r - j)
            dx1 = min(n, W + r - j)
            total = 0.0
            for dy in range(dy0, dy1):
                for dx in range(dx0, dx1):
                    d2 = 0.0
                    for c in range(Cg):
                        diff = gp[c, i + dy, j + dx] - gp[c, i + r, j + r]
                        d2 += diff * diff
                    sp = (dy - r) * (dy - r) + (dx - r) * (dx - r)
                    v = math.exp(-sp * inv_s - d2 * inv_v)
                    w[i, dy * n + dx, j] = v
                    total += v
            for dy in range(dy0, dy1):
                for dx in range(dx0, dx1):
                    w[i, dy * n + dx, j] /= total
    return w


@numba.njit(cache=True)
def _apply_kernel(w, xp, r):
    H, k, W = w.shape
    C = xp.shape[0]
    n = 2 * r + 1
    out = np.empty((C, H, W))
    acc = np.empty((C, W))
    for i in range(H):
        acc[:, :] = 0.0
        dy0 = max(0, r - i)
        dy1 = min(n, H + r - i)
        for dy in range(dy0, dy1):
            for dx in range(n):
                kk = dy * n + dx
                for c in range(C):
                    for j in range(W):
                        acc[c, j] += w[i, kk, j] * xp[c, i + dy, j + dx]
        out[:, i, :] = acc
    return out


def _pad_channels_first(x, r):
    H, W, C = x.shape
    xp = np.zeros((C, H + 2 * r, W + 2 * r))
    xp[:, r:r + H, r:r + W] = x.transpose(2, 0, 1)
    return xp


class FilterTensor:
    """Row-stochastic joint bilateral weights for one guide image.

    For output pixel ``p`` the ``(2r+1)**2`` weights over its window are
    available as ``weights[py, px]``; neighbours outside the image carry 0.
    The same weights act on every channel of the filtered image.
    """

    def __init__(self, height, width, radius, packed):
        self.height = int(height)
        self.width = int(width)
        self.radius = int(radius)
        packed = np.ascontiguousarray(packed, dtype=np.float64)
        n = 2 * self.radius + 1
        if packed.shape != (self.height, n * n, self.width):
            raise FilterError("packed weight block has the wrong shape")
        packed.setflags(write=False)
        self._packed = packed

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def weights(self) -> np.ndarray:
        """``(H, W, (2r+1)**2)`` view of the per-pixel window weights."""
        return self._packed.transpose(0, 2, 1)

    def apply(self, x) -> np.ndarray:
        x = as_image(x)
        if x.shape[:2] != self.shape:
            raise FilterError(f"image is {x.shape[:2]}, filter expects {self.shape}")
        out = _apply_kernel(self._packed, _pad_channels_first(x, self.radius), self.radius)
        return out.transpose(1, 2, 0).copy()

    __call__ = apply

    def save(self, path):
        """Write the ``FGDT`` cache format (little-endian f32 weights, row-major H, W, window)."""
        header = MAGIC + struct.pack("<3I", self.height, self.width, self.radius)
        body = np.ascontiguousarray(self.weights, dtype="<f4").tobytes()
        Path(path).write_bytes(header + body)

    @classmethod
    def load(cls, path) -> "FilterTensor":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise FilterError(f"{path}: not an FGDT file")
        H, W, r = struct.unpack("<3I", data[4:16])
        n = 2 * r + 1
        expected = H * W * n * n * 4
        if len(data) - 16 != expected:
            raise FilterError(f"{path}: truncated ({len(data) - 16} of {expected} payload bytes)")
        w = np.frombuffer(data, dtype="<f4", offset=16).astype(np.float64).reshape(H, W, n * n)
        return cls(H, W, r, w.transpose(0, 2, 1))


def build_bilateral_tensor(guide, params: BilateralParams) -> FilterTensor:
    guide = as_image(guide, "guide")
    H, W, _ = guide.shape
    r = params.window_radius
    gp = np.zeros((guide.shape[2], H + 2 * r, W + 2 * r))
    gp[:, r:r + H, r:r + W] = guide.transpose(2, 0, 1)
    w = _build_kernel(gp, H, W, r, float(params.sigma_spatial), float(params.sigma_value))
    return FilterTensor(H, W, r, w)


def apply_filter(f, x) -> np.ndarray:
    """Apply a guide filter (FilterTensor, LowpassOperator, ...) to an image."""
    return f.apply(x)


def brute_force_joint_bilateral(guide, x, params: BilateralParams) -> np.ndarray:
    """Reference joint bilateral filter evaluated pixel by pixel, nothing cached."""
    guide = as_image(guide, "guide")
    x = as_image(x)
    if guide.shape[:2] != x.shape[:2]:
        raise FilterError("guide and image sizes differ")
    H, W, _ = x.shape
    r = params.window_radius
    out = np.empty_like(x)
    for py in range(H):
        y0, y1 = max(0, py - r), min(H, py + r + 1)
        for px in range(W):
            x0, x1 = max(0, px - r), min(W, px + r + 1)
            qy, qx = np.mgrid[y0:y1, x0:x1]
            spatial = ((qy - py) ** 2 + (qx - px) ** 2) / (2 * params.sigma_spatial ** 2)
            value = ((guide[y0:y1, x0:x1] - guide[py, px]) ** 2).sum(axis=-1)
            wgt = np.exp(-spatial - value / (2 * params.sigma_value ** 2))
            out[py, px] = np.tensordot(wgt, x[y0:y1, x0:x1], axes=([0, 1], [0, 1])) / wgt.sum()
    return out


def residual_detail(x, f) -> np.ndarray:
    """The part of ``x`` the filter removes: ``x - f(x)``."""
    x = as_image(x)
    return x - f.apply(x)


# -- ILVR-style low-pass ------------------------------------------------------


def box_matrix(n_in: int, factor: int) -> np.ndarray:
    """``(ceil(n_in/factor), n_in)`` block-average matrix; a short last block averages what it has."""
    n_out = -(-n_in // factor)
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * factor, min(n_in, (i + 1) * factor)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """``(n_out, n_in)`` linear interpolation with half-pixel centres and clamped edges."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def nearest_matrix(n_out: int, factor: int) -> np.ndarray:
    """Replicate each low-resolution sample over its block (transpose-shaped to box_matrix)."""
    n_in = -(-n_out // factor)
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), np.arange(n_out) // factor] = 1.0
    return m


def resize_bilinear(x, height: int, width: int) -> np.ndarray:
    x = as_image(x)
    mh = bilinear_matrix(height, x.shape[0])
    mw = bilinear_matrix(width, x.shape[1])
    return np.einsum("ih,hwc,jw->ijc", mh, x, mw)


class LowpassOperator:
    """Box-downsample by ``factor`` then upsample back: ``U_h D_h x D_w^T U_w^T``.

    ``upsample="bilinear"`` is the default ILVR-style operator. With
    ``upsample="nearest"`` and sizes divisible by the factor the operator is
    an exact projection (``f(f(x)) == f(x)``).
    """

    def __init__(self, height: int, width: int, factor: int, upsample: str = "bilinear"):
        if factor < 1:
            raise FilterError("downsampling factor must be >= 1")
        if upsample not in ("bilinear", "nearest"):
            raise FilterError(f"unknown upsampling kernel {upsample!r}")
        self.height, self.width, self.factor, self.upsample = height, width, factor, upsample
        dh, dw = box_matrix(height, factor), box_matrix(width, factor)
        if upsample == "bilinear":
            uh, uw = bilinear_matrix(height, dh.shape[0]), bilinear_matrix(width, dw.shape[0])
        else:
            uh, uw = nearest_matrix(height, factor), nearest_matrix(width, factor)
        self.rows = uh @ dh
        self.cols = uw @ dw

    @property
    def shape(self):
        return (self.height, self.width)

    def apply(self, x) -> np.ndarray:
        x = as_image(x)
        if x.shape[:2] != self.shape:
            raise FilterError(f"image is {x.shape[:2]}, filter expects {self.shape}")
        if self.factor == 1:
            return x.copy()
        return np.einsum("ih,hwc,jw->ijc", self.rows, x, self.cols)

    __call__ = apply


def ilvr_lowpass(x, N: int, upsample: str = "bilinear") -> np.ndarray:
    x = as_image(x)
    return LowpassOperator(x.shape[0], x.shape[1], N, upsample).apply(x)
