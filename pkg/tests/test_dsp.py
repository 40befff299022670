import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fcdn.data import STANDARD_BANDS, BandSpec, EpochSet, Montage
from fcdn.dsp import (
    downsample,
    ersp,
    extract_bands,
    filt_zero_phase,
    fir_bandpass,
    instantaneous_phase,
    notch,
    psd,
)

from oracles import freq_response

FS = 250.0
ALPHA = STANDARD_BANDS["alpha"]


def _set(x, fs=FS):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        x = x[None]
    return EpochSet(fs, x, np.zeros(x.shape[0], dtype=int), ("a",), Montage.standard(max(2, x.shape[1])) if x.shape[1] >= 2 else Montage(("c0", "c1")))


def _two(x, fs=FS):
    """Single-trial set with the signal on both of two channels."""
    x = np.asarray(x, dtype=np.float64)
    return EpochSet(fs, np.stack([x, x])[None], [0], ("a",), Montage(("c0", "c1")))


def _tone(f, n, fs=FS, phase=0.0, amp=1.0):
    return amp * np.cos(2 * np.pi * f * np.arange(n) / fs + phase)


# --- downsample -------------------------------------------------------------------


def test_downsample_rate_and_length():
    s = _two(_tone(10, 4001, fs=1000.0), fs=1000.0)
    d = downsample(s, 4)
    assert d.fs_hz == 250.0
    assert d.n_samples == 1000


def test_downsample_factor_one_identity():
    s = _two(np.random.default_rng(0).standard_normal(100))
    assert downsample(s, 1).equals(s)


def test_downsample_preserves_in_band_sine_amplitude():
    d = downsample(_two(_tone(10, 4000, fs=1000.0), fs=1000.0), 4)
    y = d.epochs[0, 0, 100:-100]
    assert np.max(np.abs(y)) == pytest.approx(1.0, rel=0.01)


def test_downsample_removes_energy_above_new_nyquist():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(8000)
    s = _two(x, fs=1000.0)
    # reference: energy that would alias, before decimation
    y = downsample(s, 4).epochs[0, 0]
    # a 200 Hz tone (above the new 125 Hz Nyquist) must be suppressed below -20 dB
    tone = downsample(_two(_tone(200, 8000, fs=1000.0), fs=1000.0), 4).epochs[0, 0]
    assert np.sqrt(np.mean(tone[200:-200] ** 2)) < 0.1 * np.sqrt(0.5)
    assert np.all(np.isfinite(y))


def test_downsample_errors():
    s = _two(np.zeros(10))
    with pytest.raises(ValueError):
        downsample(s, 0)
    with pytest.raises(ValueError):
        downsample(s, 11)


# --- FIR design -------------------------------------------------------------------


def test_order_30_gives_31_symmetric_taps():
    f = fir_bandpass(FS, ALPHA, 30)
    assert f.taps.size == 31
    assert np.max(np.abs(f.taps - f.taps[::-1])) <= 1e-12


@given(
    st.floats(0.5, 40.0),
    st.floats(1.0, 40.0),
    st.integers(2, 200),
)
def test_taps_always_symmetric(lo, width, order):
    band = BandSpec("b", lo, min(lo + width, 124.0))
    f = fir_bandpass(FS, band, order)
    assert f.taps.size == order + 1
    assert np.max(np.abs(f.taps - f.taps[::-1])) <= 1e-15 * max(1.0, np.abs(f.taps).max()) * 10


def test_alpha_response_peaks_over_dc_and_60hz():
    taps = fir_bandpass(FS, ALPHA, 30).taps
    centre = abs(freq_response(taps, 10.5, FS))
    assert centre > abs(freq_response(taps, 0.0, FS))
    assert centre > abs(freq_response(taps, 60.0, FS))


def test_response_method_matches_oracle():
    f = fir_bandpass(FS, ALPHA, 30)
    for hz in (0.0, 3.0, 10.5, 60.0, 124.0):
        assert f.response(hz)[0] == pytest.approx(freq_response(f.taps, hz, FS), abs=1e-12)


def test_bad_band_edges_rejected():
    with pytest.raises(ValueError):
        fir_bandpass(FS, BandSpec("x", 13.0, 8.0))
    with pytest.raises(ValueError):
        fir_bandpass(FS, BandSpec("x", 8.0, 200.0))
    with pytest.raises(ValueError):
        fir_bandpass(FS, BandSpec("x", 0.0, 4.0))


# --- zero-phase filtering -------------------------------------------------------------


def test_band_centre_sine_has_zero_lag():
    x = _tone(10.5, 1000)
    y = filt_zero_phase(_two(x), fir_bandpass(FS, ALPHA, 30)).epochs[0, 0]
    core = slice(100, 900)
    lags = range(-12, 13)
    xc = [np.dot(x[core], np.roll(y, -lag)[core]) for lag in lags]
    assert list(lags)[int(np.argmax(xc))] == 0


def test_zero_in_zero_out():
    y = filt_zero_phase(_two(np.zeros(300)), fir_bandpass(FS, ALPHA)).epochs
    assert np.all(y == 0)


def test_dc_attenuated_below_one_percent():
    y = filt_zero_phase(_two(np.full(500, 3.0)), fir_bandpass(FS, ALPHA, 30)).epochs[0, 0]
    assert np.sqrt(np.mean(y**2)) < 0.01 * 3.0


def test_filter_rate_mismatch():
    with pytest.raises(ValueError):
        filt_zero_phase(_two(np.zeros(100)), fir_bandpass(500.0, ALPHA))


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
def test_filtering_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 2, 200))
    fir = fir_bandpass(FS, ALPHA)

    def run(v):
        return filt_zero_phase(EpochSet(FS, v[None], [0], ("a",), Montage(("c0", "c1"))), fir).epochs[0]

    lhs = run(a * x + b * y)
    rhs = a * run(x) + b * run(y)
    scale = max(1e-12, np.abs(lhs).max(), np.abs(rhs).max())
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * scale + 1e-12


# --- band extraction --------------------------------------------------------------------


def test_three_bands_keep_reference_shape():
    x = np.random.default_rng(0).standard_normal((2, 64, 1000))
    s = EpochSet(FS, x, [0, 0], ("a",), Montage.standard(64))
    out = extract_bands(s, list(STANDARD_BANDS.values()))
    assert len(out) == 3
    assert all(o.epochs.shape == (2, 64, 1000) for o in out)


def test_empty_band_list():
    assert extract_bands(_two(np.zeros(100)), []) == []


def _band_power(y, f, n, fs=FS):
    spec = np.abs(np.fft.rfft(y * np.hanning(n))) ** 2
    freqs = np.fft.rfftfreq(n, 1 / fs)
    return spec[np.argmin(np.abs(freqs - f))]


def test_two_tone_separation():
    n = 2500
    x = _tone(2.0, n) + _tone(10.0, n)
    core = slice(300, n - 300)
    m = n - 600
    alpha = extract_bands(_two(x), [ALPHA])[0].epochs[0, 0, core]
    assert _band_power(alpha, 10.0, m) > 10 * _band_power(alpha, 2.0, m)
    # a 3.5 Hz-wide band needs more taps than the default 31 to isolate 2 Hz from 10 Hz
    delta = extract_bands(_two(x), [STANDARD_BANDS["delta"]], order=250)[0].epochs[0, 0, core]
    assert _band_power(delta, 2.0, m) > 10 * _band_power(delta, 10.0, m)


def test_delta_at_order_30_cannot_resolve_its_band():
    # 31 Hamming taps at 250 Hz have a main lobe about 26 Hz wide, far wider than the band
    f = fir_bandpass(FS, STANDARD_BANDS["delta"], 30)
    assert abs(f.response(10.0)[0]) > abs(f.response(2.0)[0])


# --- phase ----------------------------------------------------------------------------


def test_phase_slope_matches_frequency():
    f = 7.0
    ph = instantaneous_phase(_two(_tone(f, 500))).phases[0, 0]
    core = slice(50, 450)
    t = np.arange(500)[core] / FS
    slope = np.polyfit(t, np.unwrap(ph[core]), 1)[0]
    assert slope == pytest.approx(2 * np.pi * f, rel=0.01)


def test_quadrature_phase_difference():
    t = np.arange(500) / FS
    s = EpochSet(FS, np.stack([np.sin(2 * np.pi * 10 * t), np.cos(2 * np.pi * 10 * t)])[None], [0], ("a",), Montage(("c0", "c1")))
    ph = instantaneous_phase(s).phases[0]
    d = np.angle(np.exp(1j * (ph[1] - ph[0])))[50:450]
    assert np.all(np.abs(d - np.pi / 2) < 0.05)


def test_duplicate_channel_zero_difference():
    ph = instantaneous_phase(_two(np.random.default_rng(2).standard_normal(300))).phases[0]
    assert np.array_equal(ph[0], ph[1])


def test_phase_range_and_short_input():
    ph = instantaneous_phase(_two(np.random.default_rng(3).standard_normal(301))).phases
    assert np.all(ph > -np.pi) and np.all(ph <= np.pi)
    with pytest.raises(ValueError):
        instantaneous_phase(_two(np.arange(3.0)))


@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_phase_amplitude_invariant(c, seed):
    x = np.random.default_rng(seed).standard_normal(128)
    a = instantaneous_phase(_two(x)).phases
    b = instantaneous_phase(_two(c * x)).phases
    diff = np.angle(np.exp(1j * (a - b)))
    assert np.max(np.abs(diff)) <= 1e-9


# --- spectra ------------------------------------------------------------------------------


def test_psd_peak_at_tone():
    freqs, p = psd(_two(_tone(10.0, 1000)), 0)
    df = freqs[1] - freqs[0]
    assert abs(freqs[np.argmax(p)] - 10.0) <= df
    assert freqs[0] >= 0.1 and freqs[-1] <= 60.0


def test_psd_zero_and_bad_channel():
    _, p = psd(_two(np.zeros(500)), 1)
    assert np.all(p == 0)
    with pytest.raises(ValueError):
        psd(_two(np.zeros(500)), 2)


def test_white_noise_psd_is_flat():
    ratios = []
    for seed in range(20):
        x = np.random.default_rng(seed).standard_normal((20, 2, 1000))
        s = EpochSet(FS, x, np.zeros(20, dtype=int), ("a",), Montage(("c0", "c1")))
        _, p = psd(s, 0, 1.0, 60.0)
        ratios.append(p.max() / np.median(p))
    assert max(ratios) < 5


def _ersp_set(amp_after=1.0, n=20, seed=0):
    rng = np.random.default_rng(seed)
    T = 1500  # -2 s .. 4 s
    t = np.arange(T) / FS - 2.0
    x = np.empty((n, 2, T))
    for i in range(n):
        s = np.cos(2 * np.pi * 10 * t + rng.uniform(0, 2 * np.pi))
        s = np.where(t >= 0, amp_after * s, s)
        x[i] = s + 0.01 * rng.standard_normal((2, T))
    return EpochSet(FS, x, np.zeros(n, dtype=int), ("a",), Montage(("c0", "c1")))


def test_ersp_stationary_is_flat():
    m = ersp(_ersp_set(1.0), 0, tmin=-2.0, n_times=400)
    assert m.power.shape == (m.freqs.size, 400)
    assert np.all(np.diff(m.freqs) > 0)
    row = m.power[np.argmin(np.abs(m.freqs - 10.0))]
    assert np.all(np.abs(row) < 1.0)


def test_ersp_doubling_gives_6_db():
    m = ersp(_ersp_set(2.0), 0, tmin=-2.0, n_times=400)
    row = m.power[np.argmin(np.abs(m.freqs - 10.0))]
    late = row[m.times >= 1.0]
    assert np.median(late) == pytest.approx(20 * math.log10(2), abs=0.5)


def test_ersp_errors():
    s = _ersp_set(1.0, n=2)
    with pytest.raises(ValueError):
        ersp(s, 0, tmin=-2.0, f_range=(0.5, 200.0))
    with pytest.raises(ValueError):
        ersp(s, 0, tmin=0.0)


def test_notch_removes_line_noise():
    x = _tone(60.0, 2500) + _tone(10.0, 2500)
    y = notch(_two(x)).epochs[0, 0, 250:-250]
    assert _band_power(y, 60.0, 2000) < 1e-3 * _band_power(y, 10.0, 2000)
