"""CUSUM drift detection on dissimilarity vectors.

A rumour embedding ``z`` is represented by its cosine distances to a fixed
set of anchors. After a calibration window fixes a reference mean and
per-coordinate spread, each new vector is reduced to its standardised norm
``t`` and fed to a one-sided CUSUM ``S = max(0, S + t - kappa)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import NotCalibrated
from .index import normalize

DEFAULT_WINDOW = 50
DEFAULT_ARL0 = 500.0
_SIGMA_FLOOR = 1e-9


def chi_mean(k: int) -> float:
    """Mean of the chi distribution with ``k`` degrees of freedom."""
    return math.sqrt(2.0) * math.exp(math.lgamma((k + 1) / 2.0) - math.lgamma(k / 2.0))


def default_kappa(k: int) -> float:
    return chi_mean(k) + 0.5


def dissimilarity(z: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    return 1.0 - anchors @ normalize(z)


def _cusum_alarms(t: np.ndarray, kappa: float, h: float) -> np.ndarray:
    """Alarm count per row of ``t`` (runs x steps), restarting after alarms."""
    s = np.zeros(t.shape[0])
    alarms = np.zeros(t.shape[0], dtype=np.int64)
    for j in range(t.shape[1]):
        s = np.maximum(0.0, s + t[:, j] - kappa)
        hit = s > h
        alarms += hit
        s[hit] = 0.0
    return alarms


def null_statistics(
    dim: int, window: int, runs: int, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Standardised norms of Gaussian null streams, each standardised with its
    own calibration window, so calibration noise is part of the null."""
    calib = rng.standard_normal((runs, window, dim))
    mu = calib.mean(axis=1, keepdims=True)
    sd = np.maximum(calib.std(axis=1, ddof=1, keepdims=True), _SIGMA_FLOOR)
    x = rng.standard_normal((runs, steps, dim))
    return np.linalg.norm((x - mu) / sd, axis=2)


@lru_cache(maxsize=32)
def calibrate_h(
    dim: int,
    kappa: float,
    arl0: float = DEFAULT_ARL0,
    window: int = DEFAULT_WINDOW,
    runs: int = 400,
    steps: int = 2000,
    seed: int = 0,
) -> float:
    """Threshold whose false-alarm rate on null streams is ``1 / arl0``.

    The alarm rate (alarms per monitored sample, restarting after each alarm)
    is estimated by Monte-Carlo with common random numbers and ``h`` is found
    by bisection.
    """
    t = null_statistics(dim, window, runs, steps, np.random.default_rng(seed))
    target = runs * steps / arl0
    lo, hi = 0.0, 1.0
    while _cusum_alarms(t, kappa, hi).sum() > target:
        lo, hi = hi, hi * 2.0
        if hi > 1e6:
            break
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _cusum_alarms(t, kappa, mid).sum() > target:
            lo = mid
        else:
            hi = mid
    return hi


NO_DRIFT = "NoDrift"
DRIFT = "Drift"


@dataclass
class DriftDetector:
    """Calibrate with :meth:`calibrate` (or by feeding ``window`` samples to
    :meth:`feed`), then :meth:`observe` returns ``"Drift"`` or ``"NoDrift"``."""

    anchors: np.ndarray | None = None
    kappa: float | None = None
    h: float | None = None
    window: int = DEFAULT_WINDOW
    arl0: float = DEFAULT_ARL0
    mu0: np.ndarray | None = None
    sigma0: np.ndarray | None = None
    stat: float = 0.0
    alarms: int = 0
    observed: int = 0

    def __post_init__(self):
        self._buffer: list[np.ndarray] = []

    @property
    def calibrated(self) -> bool:
        return self.mu0 is not None

    def calibrate(self, zetas: np.ndarray) -> None:
        """Fix the reference distribution from dissimilarity vectors."""
        z = np.asarray(zetas, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] < 2:
            raise ValueError("calibration needs at least two vectors")
        self.mu0 = z.mean(axis=0)
        self.sigma0 = np.maximum(z.std(axis=0, ddof=1), _SIGMA_FLOOR)
        dim = z.shape[1]
        if self.kappa is None:
            self.kappa = default_kappa(dim)
        if self.h is None:
            self.h = calibrate_h(dim, float(self.kappa), float(self.arl0), z.shape[0])
        self.stat = 0.0

    def statistic(self, zeta: np.ndarray) -> float:
        if not self.calibrated:
            raise NotCalibrated("detector has no reference window yet")
        return float(np.linalg.norm((np.asarray(zeta) - self.mu0) / self.sigma0))

    def observe_zeta(self, zeta: np.ndarray) -> str:
        t = self.statistic(zeta)
        self.observed += 1
        self.stat = max(0.0, self.stat + t - self.kappa)
        if self.stat > self.h:
            self.stat = 0.0
            self.alarms += 1
            return DRIFT
        return NO_DRIFT

    def observe(self, z: np.ndarray) -> str:
        if self.anchors is None:
            raise NotCalibrated("detector has no anchors")
        return self.observe_zeta(dissimilarity(z, self.anchors))

    def feed(self, z: np.ndarray, anchors: np.ndarray | None = None) -> str | None:
        """Buffer embeddings until the window is full, then calibrate.

        Returns ``None`` while calibrating. Anchors are fixed when the first
        vector of the window arrives.
        """
        if self.calibrated:
            return self.observe(z)
        if self.anchors is None:
            if anchors is None or len(anchors) == 0:
                return None
            self.anchors = np.array(anchors, dtype=np.float64)
        self._buffer.append(dissimilarity(z, self.anchors))
        if len(self._buffer) >= self.window:
            self.calibrate(np.stack(self._buffer))
            self._buffer = []
        return None

    def reset(self) -> None:
        """Forget anchors and reference; the next window recalibrates."""
        self.anchors = self.mu0 = self.sigma0 = None
        self._buffer = []
        self.stat = 0.0

    def to_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a).tolist()  # noqa: E731
        return {
            "anchors": arr(self.anchors),
            "kappa": self.kappa,
            "h": self.h,
            "window": self.window,
            "arl0": self.arl0,
            "mu0": arr(self.mu0),
            "sigma0": arr(self.sigma0),
            "stat": self.stat,
            "alarms": self.alarms,
            "observed": self.observed,
            "buffer": [b.tolist() for b in self._buffer],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriftDetector":
        arr = lambda a: None if a is None else np.asarray(a, dtype=np.float64)  # noqa: E731
        det = cls(
            anchors=arr(d["anchors"]), kappa=d["kappa"], h=d["h"], window=d["window"], arl0=d["arl0"],
            mu0=arr(d["mu0"]), sigma0=arr(d["sigma0"]), stat=d["stat"], alarms=d["alarms"],
            observed=d["observed"],
        )
        det._buffer = [np.asarray(b, dtype=np.float64) for b in d["buffer"]]
        return det
