"""Linear-phase FIR band filters with a persistent shift register."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FilterDesignError

N_TAPS = 61
WINDOWS = ("none", "lanczos", "hamming")

HR_BAND = (0.75, 4.0)
HR_DISPLAY_BAND = (0.8, 2.0)
RR_CUTOFF = 0.7


def _window(kind: str, n_taps: int) -> np.ndarray:
    if kind == "none":
        return np.ones(n_taps)
    if kind == "lanczos":
        return np.sinc(2.0 * np.arange(n_taps) / (n_taps - 1) - 1.0)
    if kind == "hamming":
        return np.hamming(n_taps)
    raise FilterDesignError(f"unknown window {kind!r}; choose from {WINDOWS}")


def sinc_band_taps(f_low: float, f_high: float, fs: float, n_taps: int = N_TAPS,
                   window: str = "none") -> np.ndarray:
    """Band-pass taps from the difference of two truncated ideal low-passes.

    ``h[n] = (sin(m*phi) - sin(m*lam)) / (pi*m)`` with ``m = n - (N-1)/2``
    and ``(phi - lam) / pi`` at the centre tap.
    """
    if n_taps < 1 or n_taps % 2 == 0:
        raise FilterDesignError("tap count must be odd and positive")
    if not (0.0 <= f_low <= f_high < fs / 2.0):
        raise FilterDesignError(
            f"band {f_low}-{f_high} Hz invalid for fs={fs} Hz (need 0 <= low <= high < fs/2)"
        )
    phi = 2.0 * math.pi * f_high / fs
    lam = 2.0 * math.pi * f_low / fs
    centre = (n_taps - 1) // 2
    taps = np.empty(n_taps)
    for n in range(n_taps):
        m = n - centre
        if m == 0:
            taps[n] = (phi - lam) / math.pi
        else:
            taps[n] = (math.sin(m * phi) - math.sin(m * lam)) / (math.pi * m)
    if window != "none":
        taps = taps * _window(window, n_taps)
        # exact mirror; windowing can leave last-ulp asymmetry
        taps = 0.5 * (taps + taps[::-1])
    return taps


@dataclass
class FirFilter:
    taps: np.ndarray
    f_low: float
    f_high: float
    fs_hz: float
    window: str = "none"
    register: np.ndarray = field(default=None)
    seen: int = 0  # inputs since the register was last zeroed

    def __post_init__(self):
        if self.register is None:
            self.register = np.zeros(len(self.taps) - 1)

    @property
    def n_taps(self) -> int:
        return len(self.taps)

    def reset(self):
        self.register = np.zeros(len(self.taps) - 1)
        self.seen = 0

    def process_block(self, x) -> np.ndarray:
        return process_block(self, x)

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """|H(f)| by direct summation over the taps."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=float))
        n = np.arange(self.n_taps)
        phase = np.exp(-2j * np.pi * np.outer(f / self.fs_hz, n))
        return np.abs(phase @ self.taps)


def design_bandpass(f_low_hz: float, f_high_hz: float, fs_hz: float,
                    n_taps: int = N_TAPS, window: str = "none") -> FirFilter:
    # equal edges are accepted and give the all-zero filter
    if f_low_hz < 0 or f_high_hz < f_low_hz:
        raise FilterDesignError(f"need 0 <= f_low <= f_high, got {f_low_hz}, {f_high_hz}")
    taps = sinc_band_taps(f_low_hz, f_high_hz, fs_hz, n_taps, window)
    return FirFilter(taps, f_low_hz, f_high_hz, fs_hz, window)


def design_lowpass(f_cut_hz: float, fs_hz: float, n_taps: int = N_TAPS,
                   window: str = "none") -> FirFilter:
    if not 0.0 < f_cut_hz:
        raise FilterDesignError("cutoff must be positive")
    return design_bandpass(0.0, f_cut_hz, fs_hz, n_taps, window)


def process_block(filt: FirFilter, x) -> np.ndarray:
    """Filter ``x`` continuing from the stored register.

    Splitting a stream into blocks gives the same output as one call.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        return x.copy()
    ext = np.concatenate((filt.register, x))
    y = np.convolve(ext, filt.taps, mode="valid")
    filt.register = ext[-(filt.n_taps - 1):].copy() if filt.n_taps > 1 else filt.register
    filt.seen += x.size
    return y


def redesign_for_fs(filt: FirFilter, fs_hz: float) -> FirFilter:
    """Same band and window at a new sample rate; the register carries over."""
    if not fs_hz > 2.0 * filt.f_high:
        raise FilterDesignError(
            f"fs={fs_hz} Hz cannot carry the {filt.f_high} Hz band edge"
        )
    if fs_hz == filt.fs_hz:
        return filt
    taps = sinc_band_taps(filt.f_low, filt.f_high, fs_hz, filt.n_taps, filt.window)
    return replace(filt, taps=taps, fs_hz=fs_hz, register=filt.register.copy())
