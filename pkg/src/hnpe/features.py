"""Fixed spectral summary statistics for time-series observations.

Each series is reduced to the natural log of its Welch power spectral
density on the one-sided grid: segment length 64, 50% overlap, Hann
window, per-segment mean removal. At the default rate of 128 Hz this
yields exactly 33 bins covering 0..64 Hz.

Conventions worth knowing (they show up in tests): with mean detrending
the DC bin keeps only the window-weighted residue of each segment, and
the one-sided estimate does not double the DC/Nyquist bins, so a white
noise spectrum is flat on the interior bins while the two edge bins sit
visibly lower. Downstream conditioners ingest the full 33-vector and are
free to ignore the uninformative edges.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import ObservationBundle

__all__ = ["PSDFeatures", "BundleFeatures", "log_psd", "featurize_bundle", "LOG_PSD_FLOOR"]

LOG_PSD_FLOOR = 1e-20

_SEGMENT = 64
_OVERLAP = 32


@dataclass(frozen=True)
class PSDFeatures:
    """Log power spectral density on one-sided Welch bins.

    ``degenerate`` flags an input (all-zero, or below the power floor
    everywhere) whose spectrum was floored; such feature vectors carry
    no information.
    """

    values: np.ndarray
    freqs: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "freqs", np.asarray(self.freqs, dtype=float))


@dataclass(frozen=True)
class BundleFeatures:
    """Featurized bundle: focal features plus one entry per extra member."""

    x0: PSDFeatures
    extra: tuple[PSDFeatures, ...]

    @property
    def n_extra(self) -> int:
        return len(self.extra)


def log_psd(x: np.ndarray, fs: float) -> PSDFeatures:
    """Welch log-PSD of one series.

    Parameters
    ----------
    x : array of shape (n,)
        Input series, n >= 64.
    fs : float
        Sampling rate in Hz.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size < _SEGMENT:
        raise ValueError(f"need at least {_SEGMENT} samples, got {x.size}")
    if fs <= 0:
        raise ValueError("fs must be positive")
    freqs, pxx = signal.welch(
        x,
        fs=fs,
        window="hann",
        nperseg=_SEGMENT,
        noverlap=_OVERLAP,
        detrend="constant",
        return_onesided=True,
        scaling="density",
    )
    degenerate = not np.any(pxx > LOG_PSD_FLOOR)
    if degenerate:
        warnings.warn(
            "degenerate signal: spectrum at or below the power floor everywhere",
            RuntimeWarning,
            stacklevel=2,
        )
    values = np.log(np.maximum(pxx, LOG_PSD_FLOOR))
    return PSDFeatures(values=values, freqs=freqs, degenerate=degenerate)


def featurize_bundle(bundle: ObservationBundle, fs: float) -> BundleFeatures:
    """Apply :func:`log_psd` to the focal series and every extra member."""
    f0 = log_psd(bundle.x0, fs)
    fx = tuple(log_psd(bundle.extra[i], fs) for i in range(bundle.n_extra))
    return BundleFeatures(x0=f0, extra=fx)
