"""Monitor-side detection of hidden information in a received barcode.

The monitor decodes the received capture, re-renders the recovered source
barcode and compares it with the capture. Two statistics are offered: the
summed absolute pixel difference (PDBD) and one minus the regression slope of
the recovered image on the capture (PVBD). Both are calibrated against a
population simulated by passing the recovered image through the channel.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from . import barcode as bc
from . import ggd
from .channel import ChannelConfig, equalize_capture, normalize_levels, print_capture

__all__ = [
    "DetectorKind",
    "DetectionReport",
    "Calibration",
    "LowConfidenceWarning",
    "pdbd_stat",
    "pvbd_stat",
    "statistic",
    "calibrate_h0",
    "detect",
    "theoretical_pd",
    "Monitor",
    "MIN_CALIBRATION",
]

MIN_CALIBRATION = 100


class DetectorKind(str, Enum):
    PDBD = "pdbd"
    PVBD = "pvbd"


class LowConfidenceWarning(UserWarning):
    """Calibration population smaller than :data:`MIN_CALIBRATION`."""


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise bc.LayoutError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def pdbd_stat(i_hat_o, y1) -> float:
    a, b = _pair(i_hat_o, y1)
    return float(np.abs(a - b).sum())


def pvbd_stat(i_hat_o, y1) -> float:
    """``1 - cov(i_hat_o, y1) / var(y1)`` with population (1/N) moments."""
    a, b = _pair(i_hat_o, y1)
    a = a.ravel()
    b = b.ravel()
    bm = b.mean()
    var = float(np.dot(b - bm, b - bm)) / b.size
    if var <= 0:
        raise ValueError("received image is constant; variance undefined")
    cov = float(np.dot(a, b)) / b.size - a.mean() * bm
    return float(1.0 - cov / var)


_STATS = {DetectorKind.PDBD: pdbd_stat, DetectorKind.PVBD: pvbd_stat}


def statistic(kind, i_hat_o, y1) -> float:
    return _STATS[DetectorKind(kind)](i_hat_o, y1)


@dataclass(frozen=True)
class Calibration:
    params: ggd.GgdParams
    threshold: ggd.TestThreshold
    n_samples: int
    eps: float

    @property
    def low_confidence(self) -> bool:
        return self.n_samples < MIN_CALIBRATION


def calibrate_h0(stats: Sequence[float], eps: float = 0.01) -> Calibration:
    """GGD fit of an H0 statistic population and its right-tail threshold.

    Fewer than :data:`MIN_CALIBRATION` samples are accepted but flagged.
    """
    x = np.asarray(stats, dtype=float).ravel()
    if x.size < MIN_CALIBRATION:
        warnings.warn(
            f"calibrating on {x.size} samples (< {MIN_CALIBRATION}); threshold is low confidence",
            LowConfidenceWarning,
            stacklevel=2,
        )
    params = ggd.estimate(x)
    return Calibration(params, ggd.np_threshold(params, eps, "right_tail"), int(x.size), eps)


@dataclass(frozen=True)
class DetectionReport:
    kind: DetectorKind
    statistic: float
    threshold: ggd.TestThreshold
    decision: int
    h0_model: Optional[ggd.GgdParams] = None
    pfa_target: Optional[float] = None

    def record(self, seed=None) -> str:
        """One-line ``key=value`` text record."""
        return (
            f"kind={self.kind.value} delta={self.statistic!r} theta={self.threshold.upper!r} "
            f"phi={self.decision} seed={seed}"
        )


def detect(kind, i_hat_o, y1, th: ggd.TestThreshold, h0_model=None, pfa_target=None) -> DetectionReport:
    """Decision 1 (hidden data present) iff the statistic reaches ``th.upper``."""
    if th.upper is None:
        raise ggd.ParameterError("detection needs an upper threshold")
    kind = DetectorKind(kind)
    delta = statistic(kind, i_hat_o, y1)
    return DetectionReport(kind, delta, th, int(delta >= th.upper), h0_model, pfa_target)


def theoretical_pd(h1: ggd.GgdParams, th: ggd.TestThreshold) -> float:
    return ggd.detection_power(h1, th)


def _digest(img: np.ndarray, *extra) -> bytes:
    h = hashlib.blake2b(np.ascontiguousarray(img, dtype=float).tobytes(), digest_size=16)
    h.update(repr(extra).encode())
    return h.digest()


@dataclass
class Monitor:
    """Recover, calibrate and test a received capture.

    The H0 population is built from ``m_s`` simulated passes of the recovered
    image through ``channel``; populations are cached per recovered image.
    Captures are equalized (Q > 2) or level-normalized (Q = 2) before
    recovery and testing.
    """

    layout: bc.Layout
    ecc: bc.EccConfig
    channel: ChannelConfig
    eps: float = 0.01
    m_s: int = 1000
    seed: int = 0
    _cache: Dict[bytes, Dict[DetectorKind, np.ndarray]] = field(default_factory=dict, repr=False)

    def prepare(self, captured) -> np.ndarray:
        """Equalize (Q > 2) or level-normalize (Q = 2) a capture."""
        if self.layout.constellation.q == 2:
            return normalize_levels(captured, self.layout)
        return equalize_capture(np.asarray(captured, dtype=float), self.layout)

    def recover(self, captured) -> bc.Recovery:
        """Raises :class:`~anticopy.barcode.DecodeError` on failure."""
        return bc.monitor_recover(self.prepare(captured), self.layout, self.ecc)

    def h0_population(self, i_hat_o: np.ndarray) -> Dict[DetectorKind, np.ndarray]:
        key = _digest(i_hat_o, self.channel, self.m_s, self.seed)
        pop = self._cache.get(key)
        if pop is None:
            seeds = np.random.SeedSequence(self.seed).spawn(self.m_s)
            out = {k: np.empty(self.m_s) for k in DetectorKind}
            for i, s in enumerate(seeds):
                y = self.prepare(print_capture(i_hat_o, self.channel, s))
                for k in DetectorKind:
                    out[k][i] = statistic(k, i_hat_o, y)
            pop = self._cache[key] = out
        return pop

    def calibrate(self, i_hat_o: np.ndarray, kind) -> Calibration:
        return calibrate_h0(self.h0_population(i_hat_o)[DetectorKind(kind)], self.eps)

    def inspect(self, captured, kinds: Iterable = tuple(DetectorKind)) -> Dict[DetectorKind, DetectionReport]:
        y1 = self.prepare(captured)
        rec = bc.monitor_recover(y1, self.layout, self.ecc)
        reports = {}
        for kind in map(DetectorKind, kinds):
            cal = self.calibrate(rec.image, kind)
            reports[kind] = detect(kind, rec.image, y1, cal.threshold, cal.params, self.eps)
        return reports
