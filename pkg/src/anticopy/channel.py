"""Simulated print-and-capture channel and the gray-level equalizer.

One :func:`print_capture` pass is a composite print + capture stage:

1. tone transfer ``128 + contrast * (255 (v/255)^tone_gamma - dot_gain - 128)``
2. Gaussian blur (point spread of printer and sensor)
3. additive noise: i.i.d. GGD pixel noise plus an optional low-frequency
   "mottle" field, both scaled by a per-pass lognormal capture factor
4. clamp to ``[0, 255]``

With ``contrast = 1`` step 1 is ``255 (v/255)^tone_gamma - dot_gain``.
Contrast loss makes a second pass amplify the first pass's noise once the
receiver equalizes, which is what separates SPC from DPC at module scale.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy import ndimage

from . import ggd
from .barcode import DecodeError, Layout, binary_levels, module_means

__all__ = [
    "ChannelConfig",
    "Equalizer",
    "EqualizerError",
    "print_capture",
    "spc",
    "dpc",
    "train_equalizer",
    "equalize",
    "training_symbols",
    "equalize_capture",
    "normalize_levels",
    "IDENTITY",
    "LCAC_CHANNEL",
    "LQR2_CHANNEL",
    "preset",
]


@dataclass(frozen=True)
class ChannelConfig:
    tone_gamma: float = 0.95
    dot_gain: float = 4.0
    blur_sigma: float = 0.6
    noise: ggd.GgdParams = ggd.GgdParams(0.0, 8.0, 1.6)
    contrast: float = 1.0
    mottle_sigma: float = 0.0
    mottle_scale: float = 16.0
    jitter: float = 0.0

    def __post_init__(self):
        if self.noise.mu != 0:
            raise ValueError("channel noise must have zero mean")
        if self.tone_gamma <= 0 or self.contrast <= 0:
            raise ValueError("tone_gamma and contrast must be positive")
        if min(self.blur_sigma, self.mottle_sigma, self.jitter) < 0:
            raise ValueError("blur_sigma, mottle_sigma and jitter must be >= 0")
        if self.mottle_scale <= 0:
            raise ValueError("mottle_scale must be positive")

    def with_noise_sigma(self, sigma: float) -> "ChannelConfig":
        return replace(self, noise=ggd.GgdParams(0.0, sigma, self.noise.gamma))


IDENTITY = ChannelConfig(tone_gamma=1.0, dot_gain=0.0, blur_sigma=0.0, noise=ggd.GgdParams(0.0, 1e-12, 2.0))

# Calibrated defaults; see README "Channel calibration".
LCAC_CHANNEL = ChannelConfig(contrast=0.4, mottle_sigma=4.0, mottle_scale=16.0, jitter=0.08)
LQR2_CHANNEL = ChannelConfig(blur_sigma=1.0, contrast=0.4, noise=ggd.GgdParams(0.0, 14.0, 1.6), jitter=0.05)

_PRESETS = {
    "identity": IDENTITY,
    "default": ChannelConfig(),
    "lcac": LCAC_CHANNEL,
    "2lqr": LQR2_CHANNEL,
    # camera phone: finer capture, lower noise
    "lcac-phone": replace(LCAC_CHANNEL, noise=ggd.GgdParams(0.0, 6.0, 1.6), mottle_sigma=3.6),
    "2lqr-phone": replace(LQR2_CHANNEL, noise=ggd.GgdParams(0.0, 12.0, 1.6)),
}


def preset(name: str) -> ChannelConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown channel preset {name!r}; choose from {sorted(_PRESETS)}") from None


_DETERMINISTIC_CACHE: "OrderedDict[bytes, np.ndarray]" = OrderedDict()
_CACHE_SIZE = 8


def _tone_and_blur(img: np.ndarray, cfg: ChannelConfig, scale: int) -> np.ndarray:
    key = hashlib.blake2b(img.tobytes(), digest_size=16)
    key.update(repr((img.shape, cfg.tone_gamma, cfg.dot_gain, cfg.contrast, cfg.blur_sigma, scale)).encode())
    digest = key.digest()
    hit = _DETERMINISTIC_CACHE.get(digest)
    if hit is not None:
        _DETERMINISTIC_CACHE.move_to_end(digest)
        return hit
    out = img
    if scale > 1:
        out = np.kron(out, np.ones((scale, scale)))
    out = 255.0 * np.power(np.clip(out, 0.0, 255.0) / 255.0, cfg.tone_gamma) - cfg.dot_gain
    if cfg.contrast != 1.0:
        out = 128.0 + cfg.contrast * (out - 128.0)
    if cfg.blur_sigma > 0:
        out = ndimage.gaussian_filter(out, cfg.blur_sigma * scale, mode="nearest")
    out.setflags(write=False)
    _DETERMINISTIC_CACHE[digest] = out
    if len(_DETERMINISTIC_CACHE) > _CACHE_SIZE:
        _DETERMINISTIC_CACHE.popitem(last=False)
    return out


def _mottle(rng: np.random.Generator, shape, scale_px: float) -> np.ndarray:
    step = max(1, int(scale_px // 4))
    coarse_shape = (shape[0] // step + 2, shape[1] // step + 2)
    coarse = ndimage.gaussian_filter(rng.standard_normal(coarse_shape), scale_px / step, mode="wrap")
    coarse /= coarse.std()
    # nearest-neighbour upsampling; the field is smooth on the scale of a step
    coarse = coarse.astype(np.float32).repeat(step, axis=0).repeat(step, axis=1)
    return coarse[: shape[0], : shape[1]]


def print_capture(img, cfg: ChannelConfig, seed, scale: int = 1) -> np.ndarray:
    """One print + capture pass; ``scale`` captures at an integer multiple
    of the design resolution."""
    img = np.asarray(img, dtype=float)
    rng = np.random.default_rng(seed)
    base = _tone_and_blur(img, cfg, scale)
    factor = float(np.exp(cfg.jitter * rng.standard_normal())) if cfg.jitter > 0 else 1.0
    noise = ggd.standard_draws(rng, cfg.noise.gamma, base.size, dtype=np.float32).reshape(base.shape)
    noise *= np.float32(cfg.noise.sigma * factor)
    if cfg.mottle_sigma > 0:
        noise += np.float32(cfg.mottle_sigma * factor) * _mottle(rng, base.shape, cfg.mottle_scale * scale)
    out = base + noise
    return np.clip(out, 0.0, 255.0, out=out)


def spc(img, cfg: ChannelConfig, seed) -> np.ndarray:
    return print_capture(img, cfg, seed)


def dpc(img, cfg1: ChannelConfig, cfg2: ChannelConfig, seed) -> np.ndarray:
    s1, s2 = np.random.SeedSequence(seed).spawn(2)
    return print_capture(print_capture(img, cfg1, s1), cfg2, s2)


class EqualizerError(ValueError):
    """Training data cannot support the requested fit."""


@dataclass(frozen=True)
class Equalizer:
    """Monotone gray-level correction.

    A polynomial (``coeffs``, lowest order first) on the observed training
    span ``domain``, continued linearly beyond it. When the least-squares fit
    is not monotone on that span, an isotonic piecewise-linear map through
    ``knots`` is used instead.
    """

    coeffs: Optional[np.ndarray] = None
    domain: Tuple[float, float] = (0.0, 255.0)
    knots: Optional[tuple] = None

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1 if self.coeffs is not None else 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.coeffs is not None:
            lo, hi = self.domain
            d = Polynomial(self.coeffs).deriv()
            xc = np.clip(x, lo, hi)
            out = np.full(x.shape, self.coeffs[-1])
            for c in self.coeffs[-2::-1]:  # Horner, in place
                out *= xc
                out += c
            return out + _extend(x, lo, hi, d(lo), d(hi))
        xs, ys = self.knots
        out = np.interp(x, xs, ys)
        if len(xs) > 1:
            with np.errstate(over="ignore", divide="ignore"):
                left = (ys[1] - ys[0]) / (xs[1] - xs[0])
                right = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
            out += _extend(x, xs[0], xs[-1], left, right)
        return out


def _extend(x: np.ndarray, lo: float, hi: float, slope_lo: float, slope_hi: float) -> np.ndarray:
    """Linear continuation past ``[lo, hi]``; exactly zero inside, even for
    an infinite slope."""
    with np.errstate(invalid="ignore", over="ignore"):
        below = np.where(x < lo, slope_lo * (x - lo), 0.0)
        above = np.where(x > hi, slope_hi * (x - hi), 0.0)
    return below + above


def _isotonic(x: np.ndarray, y: np.ndarray):
    """Pool-adjacent-violators on the distinct x values."""
    xs, inv = np.unique(x, return_inverse=True)
    sums = np.bincount(inv, weights=y)
    counts = np.bincount(inv).astype(float)
    blocks = []  # [mean, weight, n_x]
    for s, c in zip(sums, counts):
        blocks.append([s / c, c, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, n2 = blocks.pop()
            m1, w1, n1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, n1 + n2])
    ys = np.concatenate([[m] * n for m, _, n in blocks])
    return xs, ys


def train_equalizer(observed, ideal, degree: int = 3) -> Equalizer:
    """Least-squares polynomial ``ideal ~ f(observed)``, monotonized."""
    x = np.asarray(observed, dtype=float).ravel()
    y = np.asarray(ideal, dtype=float).ravel()
    if x.shape != y.shape:
        raise EqualizerError("observed and ideal must be paired")
    if np.unique(x).size < degree + 1:
        raise EqualizerError(f"need at least {degree + 1} distinct observed values")
    poly = Polynomial.fit(x, y, degree).convert()
    coeffs = np.zeros(degree + 1)
    coeffs[: poly.coef.size] = poly.coef
    lo, hi = float(x.min()), float(x.max())
    grid = np.linspace(lo, hi, 256)
    if np.all(Polynomial(coeffs).deriv()(grid) >= 0):
        return Equalizer(coeffs=coeffs, domain=(lo, hi))
    xs, ys = _isotonic(x, y)
    if xs.size < 2:
        raise EqualizerError("isotonic fallback needs two distinct values")
    return Equalizer(knots=(xs, ys))


def equalize(img, eq: Equalizer) -> np.ndarray:
    return np.clip(eq(np.asarray(img, dtype=float)), 0.0, 255.0)


def training_symbols(layout: Layout):
    """``(flat module positions, ideal gray values)`` of the training strip."""
    pos = layout.training_positions
    return pos, layout.constellation.array[layout.training_symbols]


def equalize_capture(img, layout: Layout, degree: int = 3) -> np.ndarray:
    """Fit the equalizer on the capture's own training ring and apply it.

    Binary layouts are returned unchanged. Raises
    :class:`~anticopy.barcode.DecodeError` when the training levels cannot
    be told apart.
    """
    img = np.asarray(img, dtype=float)
    if layout.constellation.q <= 2 or layout.training_border == 0:
        return img
    pos, ideal = training_symbols(layout)
    means = module_means(img, layout.rows, layout.cols, layout.module_px).ravel()[pos]
    try:
        eq = train_equalizer(means, ideal, degree)
    except EqualizerError as exc:
        raise DecodeError(f"training symbols unreadable: {exc}") from exc
    return equalize(img, eq)


def normalize_levels(img, layout: Layout) -> np.ndarray:
    """Affine map sending the observed dark/light module levels of a binary
    capture to the constellation's two levels."""
    img = np.asarray(img, dtype=float)
    lo, hi = binary_levels(module_means(img, layout.rows, layout.cols, layout.module_px))
    c0, c1 = layout.constellation.levels
    return c0 + (img - lo) * ((c1 - c0) / (hi - lo))


def noise_only(sigma: float, gamma: float = 2.0) -> ChannelConfig:
    return ChannelConfig(tone_gamma=1.0, dot_gain=0.0, blur_sigma=0.0, noise=ggd.GgdParams(0.0, sigma, gamma))

