import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dft_power, hamming, segment_periodogram
from pulsegrid import spectral
from pulsegrid.errors import SpectralError
from pulsegrid.spectral import PsdEstimate, SpectralConfig

FS = 30.0


def tone(freq, n=360, fs=FS, phase=0.3):
    return np.sin(2 * np.pi * freq * np.arange(n) / fs + phase)


@pytest.mark.parametrize("step,want", [(1000 / 30, 30.0), (40.0, 25.0)])
def test_recalc_fs(step, want):
    fs, fell_back = spectral.recalc_fs(np.arange(100) * step)
    assert fs == pytest.approx(want, abs=0.01) and not fell_back


def test_recalc_fs_fallback():
    assert spectral.recalc_fs([5.0]) == (30.0, True)
    assert spectral.recalc_fs([5.0], nominal_hz=25.0) == (25.0, True)


def test_recalc_fs_uses_recent_horizon():
    ts = np.concatenate([np.arange(0, 5000, 40.0), 5000 + np.arange(0, 2000, 1000 / 30)])
    assert spectral.recalc_fs(ts)[0] == pytest.approx(30.0, abs=0.05)


def test_fft_grid_for_360_samples():
    psd = spectral.psd_fft(tone(1.2), FS)
    assert len(psd.freqs_hz) == 901
    assert psd.bin_width_hz == pytest.approx(30 / 1800)


def test_fft_matches_direct_dft():
    x = np.random.default_rng(0).normal(size=120)
    w = hamming(120)
    want = dft_power((x - x.mean()) * w, 600) / np.sum(w * w)
    assert np.allclose(spectral.psd_fft(x, FS).power, want, atol=1e-10)


def test_fft_tone_peak():
    psd = spectral.psd_fft(tone(1.2), FS)
    assert abs(psd.freqs_hz[np.argmax(psd.power)] - 1.2) <= psd.bin_width_hz


def test_constant_signal_has_no_power():
    psd = spectral.psd_fft(np.full(360, 7.0), FS)
    assert psd.power.max() < 1e-10


@pytest.mark.parametrize("n", [120, 360, 1000])
def test_parseval(n):
    x = np.random.default_rng(n).normal(size=n)
    psd = spectral.psd_fft(x, FS)
    w = np.hamming(n)
    nfft = 5 * n
    p = psd.power * np.dot(w, w)
    twice = 2.0 * p[1:-1].sum() if nfft % 2 == 0 else 2.0 * p[1:].sum()
    total = p[0] + twice + (p[-1] if nfft % 2 == 0 else 0.0)
    energy = np.sum(((x - x.mean()) * w) ** 2)
    assert total / nfft == pytest.approx(energy, rel=1e-6)


@pytest.mark.parametrize("n,count", [(256, 1), (311, 1), (312, 2), (360, 2), (368, 3), (1000, 14)])
def test_welch_segment_count(n, count):
    assert len(spectral.welch_segment_starts(n, 256, 56)) == count
    assert len(spectral.welch_segment_starts(n)) == (n - 256) // 56 + 1


def test_welch_equals_mean_of_segment_periodograms():
    x = np.random.default_rng(5).normal(size=360)
    psd = spectral.psd_welch(x, FS)
    want = (segment_periodogram(x[0:256], 2048) + segment_periodogram(x[56:312], 2048)) / 2
    assert psd.n_segments == 2
    assert np.max(np.abs(psd.power - want)) <= 1e-10


def test_welch_short_input_falls_back():
    psd = spectral.psd_welch(tone(1.0, 100), FS)
    assert "welch_single_segment" in psd.flags and psd.n_segments == 1
    assert np.allclose(psd.power, segment_periodogram(tone(1.0, 100), 2048), atol=1e-10)


def test_welch_lower_variance_than_fft():
    fft_runs, welch_runs = [], []
    for seed in range(100):
        x = np.random.default_rng(seed).normal(size=360)
        fft_runs.append(spectral.psd_fft(x, FS).power)
        welch_runs.append(spectral.psd_welch(x, FS).power)
    assert np.var(welch_runs, axis=0).mean() < np.var(fft_runs, axis=0).mean()


@pytest.mark.parametrize("method", ["fft", "welch"])
@pytest.mark.parametrize("bpm", [50, 72, 90, 120])
def test_tone_recovered_within_1_bpm(method, bpm):
    cfg = SpectralConfig(method=method)
    psd = spectral.estimate_psd(tone(bpm / 60), FS, cfg)
    assert abs(spectral.pick_hr(psd).hr_bpm - bpm) <= 1.0


@pytest.mark.parametrize("bad", [[1.0], np.zeros(50), [1.0, np.nan, 2.0]])
def test_invalid_signal_rejected(bad):
    with pytest.raises(SpectralError):
        spectral.psd_fft(bad, FS)


def synthetic_psd(peaks, df=0.05, fmax=3.0):
    freqs = np.arange(0, fmax + df / 2, df)
    power = np.zeros_like(freqs)
    for f, p in peaks:
        power[int(round(f / df))] = p
    return PsdEstimate(freqs, power, "fft", FS)


def test_single_bin_peak():
    assert spectral.pick_hr(synthetic_psd([(1.2, 1.0)])).hr_bpm == pytest.approx(72.0)


def test_tie_goes_to_lower_frequency():
    assert spectral.pick_hr(synthetic_psd([(1.0, 5.0), (2.0, 5.0)])).hr_bpm == pytest.approx(60.0)


def test_gate_prefers_peak_near_previous():
    psd = synthetic_psd([(140 / 60, 10.0), (71 / 60, 4.0)], df=1 / 60)
    est = spectral.pick_hr(psd, prev_hr_bpm=70.0)
    assert est.hr_bpm == pytest.approx(71.0)
    assert "hr_gated" in est.quality_flags


def test_gate_outlier_falls_back_to_band_max():
    psd = synthetic_psd([(2.0, 10.0)], df=1 / 60)
    est = spectral.pick_hr(psd, prev_hr_bpm=70.0)
    assert est.hr_bpm == pytest.approx(120.0) and "hr_outlier" in est.quality_flags


def test_weak_peaks_below_floor_are_not_candidates():
    psd = synthetic_psd([(2.0, 100.0), (71 / 60, 5.0)], df=1 / 60)
    est = spectral.pick_hr(psd, prev_hr_bpm=70.0)
    assert est.hr_bpm == pytest.approx(120.0) and "hr_outlier" in est.quality_flags


def test_gate_exhaustive_against_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(200):
        psd = synthetic_psd([(f, rng.uniform(1, 10)) for f in rng.uniform(0.8, 2.4, 4)], df=1 / 60)
        prev = rng.uniform(50, 150)
        p, fr = psd.power, psd.freqs_hz
        band = np.nonzero((fr >= 0.75) & (fr <= 2.5))[0]
        best = band[np.argmax(p[band])]
        cands = [i for i in band if p[i] > p[i - 1] and p[i] >= p[i + 1] and p[i] >= 0.1 * p[best]]
        near = sorted((i for i in cands if abs(60 * fr[i] - prev) <= 12), key=lambda i: (-p[i], fr[i]))
        want = 60 * fr[near[0]] if near else 60 * fr[best]
        assert spectral.pick_hr(psd, prev_hr_bpm=prev).hr_bpm == pytest.approx(want)


@settings(max_examples=50)
@given(st.floats(1e-6, 1e6), st.integers(0, 1000))
def test_pick_hr_scale_invariant(scale, seed):
    x = np.random.default_rng(seed).normal(size=360) + tone(1.3)
    psd = spectral.psd_fft(x, FS)
    scaled = PsdEstimate(psd.freqs_hz, psd.power * scale, "fft", FS)
    assert spectral.pick_hr(scaled).hr_bpm == spectral.pick_hr(psd).hr_bpm


def test_empty_band_rejected():
    with pytest.raises(SpectralError):
        spectral.pick_hr(synthetic_psd([(0.3, 1.0)], fmax=0.5))


def test_rr_dominant_quarter_hz():
    rr, flags = spectral.pick_rr(spectral.psd_fft(tone(0.25, 900), FS))
    assert rr == pytest.approx(15.0, abs=0.5) and not flags


def test_rr_flat_is_absent():
    rr, flags = spectral.pick_rr(synthetic_psd([]))
    assert rr is None and flags == {"rr_flat"}


def test_config_validation():
    with pytest.raises(ValueError):
        SpectralConfig(method="mesa")
    with pytest.raises(ValueError):
        SpectralConfig(welch_overlap=256)
    assert SpectralConfig().welch_hop == 56
