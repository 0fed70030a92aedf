"""Heart- and breathing-rate estimation from buffered pulse samples.

Two PSD estimators are provided: a single Hamming-windowed periodogram
zero-padded to five times the window (``fft``) and Welch averaging of
256-sample Hamming segments with 200-sample overlap and 2048-point
transforms (``welch``). Both divide each periodogram by the window energy
``sum(w**2)`` so their scales agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SpectralError

METHODS = ("fft", "welch")


@dataclass(frozen=True)
class SpectralConfig:
    method: str = "fft"
    zero_pad_factor: int = 5
    welch_segment: int = 256
    welch_overlap: int = 200
    welch_nfft: int = 2048
    hr_band: tuple = (0.75, 2.5)
    rr_band: tuple = (0.1, 0.7)
    gate_bpm: float = 12.0
    # local maxima weaker than this fraction of the band maximum are not candidates
    candidate_floor: float = 0.1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 <= self.welch_overlap < self.welch_segment:
            raise ValueError("welch overlap must be smaller than the segment")
        if self.zero_pad_factor < 1:
            raise ValueError("zero_pad_factor must be >= 1")
        for lo, hi in (self.hr_band, self.rr_band):
            if not 0 < lo < hi:
                raise ValueError(f"invalid band {lo}-{hi} Hz")

    @property
    def welch_hop(self) -> int:
        return self.welch_segment - self.welch_overlap


@dataclass
class PsdEstimate:
    freqs_hz: np.ndarray
    power: np.ndarray
    method: str
    fs_used_hz: float
    n_segments: int = 1
    flags: set = field(default_factory=set)

    @property
    def bin_width_hz(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0]) if len(self.freqs_hz) > 1 else 0.0


@dataclass
class VitalsEstimate:
    hr_bpm: Optional[float] = None
    rr_brpm: Optional[float] = None
    hr_peak_power: float = 0.0
    quality_flags: set = field(default_factory=set)


def recalc_fs(timestamps_ms, horizon_s: float = 1.0, nominal_hz: float = 30.0):
    """Effective frame rate over the most recent ``horizon_s`` seconds.

    Returns ``(fs_hz, fell_back)``; with fewer than two timestamps in the
    horizon the nominal rate comes back with ``fell_back=True``.
    """
    ts = np.asarray(timestamps_ms, dtype=float)
    if ts.size < 2:
        return float(nominal_hz), True
    recent = ts[ts >= ts[-1] - horizon_s * 1000.0]
    if recent.size < 2 or recent[-1] <= recent[0]:
        return float(nominal_hz), True
    return (recent.size - 1) / ((recent[-1] - recent[0]) / 1000.0), False


def _check_signal(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise SpectralError("need at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise SpectralError("signal contains non-finite values")
    if not np.any(x):
        raise SpectralError("signal is all zeros")
    return x


def periodogram(segment, nfft: int) -> np.ndarray:
    """Mean-removed, Hamming-windowed one-sided power, divided by sum(w**2)."""
    seg = np.asarray(segment, dtype=float)
    w = np.hamming(seg.size)
    spec = np.fft.rfft((seg - seg.mean()) * w, nfft)
    return (spec.real ** 2 + spec.imag ** 2) / np.dot(w, w)


def psd_fft(signal, fs: float, cfg: SpectralConfig = SpectralConfig()) -> PsdEstimate:
    x = _check_signal(signal)
    nfft = cfg.zero_pad_factor * x.size
    power = periodogram(x, nfft)
    return PsdEstimate(np.fft.rfftfreq(nfft, 1.0 / fs), power, "fft", float(fs))


def welch_segment_starts(n: int, segment: int = 256, hop: int = 56) -> list:
    if n < segment:
        return [0]
    return list(range(0, n - segment + 1, hop))


def psd_welch(signal, fs: float, cfg: SpectralConfig = SpectralConfig()) -> PsdEstimate:
    x = _check_signal(signal)
    flags = set()
    if x.size < cfg.welch_segment:
        flags.add("welch_single_segment")
        nfft = max(cfg.welch_nfft, x.size)
        power = periodogram(x, nfft)
        return PsdEstimate(np.fft.rfftfreq(nfft, 1.0 / fs), power, "welch", float(fs), 1, flags)
    starts = welch_segment_starts(x.size, cfg.welch_segment, cfg.welch_hop)
    nfft = max(cfg.welch_nfft, cfg.welch_segment)
    acc = np.zeros(nfft // 2 + 1)
    for s in starts:
        acc += periodogram(x[s:s + cfg.welch_segment], nfft)
    return PsdEstimate(
        np.fft.rfftfreq(nfft, 1.0 / fs), acc / len(starts), "welch", float(fs), len(starts), flags
    )


def estimate_psd(signal, fs: float, cfg: SpectralConfig) -> PsdEstimate:
    if cfg.method == "welch":
        return psd_welch(signal, fs, cfg)
    return psd_fft(signal, fs, cfg)


def _band_indices(psd: PsdEstimate, band) -> np.ndarray:
    lo, hi = band
    idx = np.nonzero((psd.freqs_hz >= lo) & (psd.freqs_hz <= hi))[0]
    if idx.size == 0:
        raise SpectralError(f"no spectral bins in {lo}-{hi} Hz")
    return idx


def _local_maxima(power: np.ndarray, idx: np.ndarray) -> list:
    last = power.size - 1
    out = []
    for i in idx:
        left = power[i - 1] if i > 0 else -np.inf
        right = power[i + 1] if i < last else -np.inf
        if power[i] > left and power[i] >= right:
            out.append(int(i))
    return out


def pick_hr(psd: PsdEstimate, band=(0.75, 2.5), prev_hr_bpm: Optional[float] = None,
            gate_bpm: float = 12.0, candidate_floor: float = 0.1) -> VitalsEstimate:
    """Dominant in-band peak, skipping peaks implausibly far from ``prev_hr_bpm``.

    Candidates are in-band local maxima at least ``candidate_floor`` times
    the band maximum, ranked by power with ties going to the lower
    frequency. When no candidate lies within ``gate_bpm`` of the previous
    estimate the band maximum is used and flagged ``hr_outlier``.
    """
    idx = _band_indices(psd, band)
    p = psd.power
    flags = set()
    band_best = int(idx[np.argmax(p[idx])])
    peak_floor = candidate_floor * p[band_best]
    candidates = [i for i in _local_maxima(p, idx) if p[i] >= peak_floor]
    if not candidates:
        flags.add("hr_no_local_peak")
        candidates = [band_best]
    candidates.sort(key=lambda i: (-p[i], psd.freqs_hz[i]))
    choice = candidates[0]
    if prev_hr_bpm is not None:
        passing = [i for i in candidates
                   if abs(60.0 * psd.freqs_hz[i] - prev_hr_bpm) <= gate_bpm]
        if passing:
            if passing[0] != choice:
                flags.add("hr_gated")
            choice = passing[0]
        else:
            flags.add("hr_outlier")
            choice = band_best
    return VitalsEstimate(
        hr_bpm=60.0 * float(psd.freqs_hz[choice]),
        hr_peak_power=float(p[choice]),
        quality_flags=flags,
    )


def pick_rr(psd: PsdEstimate, band=(0.1, 0.7)):
    """Breathing rate from the in-band argmax; ``(None, flags)`` for a flat band."""
    idx = _band_indices(psd, band)
    p = psd.power[idx]
    top = float(p.max())
    if top <= 0.0 or top - float(p.min()) <= 1e-12 * max(1.0, top):
        return None, {"rr_flat"}
    return 60.0 * float(psd.freqs_hz[idx[int(np.argmax(p))]]), set()
