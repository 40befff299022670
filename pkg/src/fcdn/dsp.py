"""Resampling, FIR band extraction, instantaneous phase, and spectral analysis.

Band extraction uses Hamming-windowed sinc kernels applied forward and
backward, so the net response is |H|^2 with zero phase. Each lowpass
kernel is normalised to unit DC gain before two are subtracted to form a
band-pass; the difference therefore has an exact null at DC whatever the
order. At 31 taps and 250 Hz the transition band is ~27 Hz wide, so the
delta and theta pass-bands are not resolved and their responses peak near
10 Hz. Raise ``order`` when that matters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .data import BandSpec, EpochSet


@dataclass(frozen=True, eq=False)
class FirFilter:
    taps: np.ndarray
    order: int
    fs_hz: float
    band: BandSpec | None = None
    cutoff_hz: float | None = None

    def __post_init__(self) -> None:
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.size != self.order + 1:
            raise ValueError("filter length must be order + 1")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

    def response(self, freqs_hz: np.ndarray | float) -> np.ndarray:
        """Complex single-pass frequency response at ``freqs_hz``."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        n = np.arange(self.taps.size)
        return np.exp(-2j * np.pi * np.outer(f / self.fs_hz, n)) @ self.taps


@dataclass(frozen=True, eq=False)
class PhaseSeries:
    phases: np.ndarray

    def __post_init__(self) -> None:
        ph = np.asarray(self.phases, dtype=np.float64)
        if ph.ndim != 3:
            raise ValueError("phases must be N x K x T")
        if not np.all(np.isfinite(ph)):
            raise ValueError("non-finite phase")
        if np.any(ph <= -np.pi) or np.any(ph > np.pi):
            raise ValueError("phases must lie in (-pi, pi]")
        ph = ph.view()
        ph.flags.writeable = False
        object.__setattr__(self, "phases", ph)

    @property
    def K(self) -> int:
        return self.phases.shape[1]


@dataclass(frozen=True, eq=False)
class TimeFreqMap:
    freqs: np.ndarray
    times: np.ndarray
    power: np.ndarray  # dB relative to baseline, F x P

    def to_csv(self, path: str | Path) -> None:
        """Long format: one ``freq_hz, time_s, power_db`` row per cell, frequency-major."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["freq_hz", "time_s", "power_db"])
            for i, f in enumerate(self.freqs):
                for j, t in enumerate(self.times):
                    writer.writerow([repr(float(f)), repr(float(t)), repr(float(self.power[i, j]))])


def psd_to_csv(freqs: np.ndarray, power: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["freq_hz", "power"])
        writer.writerows([repr(float(f)), repr(float(p))] for f, p in zip(freqs, power))


def _lowpass_kernel(fc_norm: float, order: int) -> np.ndarray:
    """Hamming-windowed sinc, unit gain at DC. ``fc_norm`` in cycles/sample."""
    m = np.arange(order + 1) - order / 2
    h = np.hamming(order + 1) * 2 * fc_norm * np.sinc(2 * fc_norm * m)
    h = h / h.sum()
    return 0.5 * (h + h[::-1])


def fir_bandpass(fs_hz: float, band: BandSpec, order: int = 30) -> FirFilter:
    band.validate(fs_hz)
    if order < 2:
        raise ValueError("order must be >= 2")
    taps = _lowpass_kernel(band.f_hi / fs_hz, order) - _lowpass_kernel(band.f_lo / fs_hz, order)
    taps = 0.5 * (taps + taps[::-1])
    return FirFilter(taps=taps, order=order, fs_hz=float(fs_hz), band=band)


def fir_lowpass(fs_hz: float, cutoff_hz: float, order: int) -> FirFilter:
    if not 0 < cutoff_hz < fs_hz / 2:
        raise ValueError("cutoff must lie in (0, fs/2)")
    return FirFilter(
        taps=_lowpass_kernel(cutoff_hz / fs_hz, order), order=order, fs_hz=float(fs_hz), cutoff_hz=cutoff_hz
    )


def _zero_phase(x: np.ndarray, taps: np.ndarray, pad: int) -> np.ndarray:
    xp = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(pad, pad)], mode="reflect")
    y = signal.lfilter(taps, 1.0, xp, axis=-1)
    y = signal.lfilter(taps, 1.0, y[..., ::-1], axis=-1)[..., ::-1]
    return y[..., pad : pad + x.shape[-1]]


def filt_zero_phase(epochset: EpochSet, fir: FirFilter) -> EpochSet:
    """Forward-backward FIR with reflection padding of ``order`` samples per edge."""
    if abs(fir.fs_hz - epochset.fs_hz) > 1e-9 * epochset.fs_hz:
        raise ValueError(f"filter designed for {fir.fs_hz} Hz, data at {epochset.fs_hz} Hz")
    x = np.asarray(epochset.epochs, dtype=np.float64)
    return epochset.with_epochs(_zero_phase(x, fir.taps, fir.order))


def downsample(epochset: EpochSet, factor: int) -> EpochSet:
    """Anti-alias (cutoff 0.45 x new Nyquist) then keep every ``factor``-th sample."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor > epochset.n_samples:
        raise ValueError("factor exceeds trial length")
    if factor == 1:
        return epochset
    new_fs = epochset.fs_hz / factor
    lp = fir_lowpass(epochset.fs_hz, 0.45 * new_fs / 2, order=20 * factor)
    y = filt_zero_phase(epochset, lp).epochs
    n_out = epochset.n_samples // factor
    return epochset.with_epochs(np.ascontiguousarray(y[..., ::factor][..., :n_out]), fs_hz=new_fs)


def notch(epochset: EpochSet, freq_hz: float = 60.0, quality: float = 30.0) -> EpochSet:
    """Second-order IIR notch, applied forward-backward."""
    if not 0 < freq_hz < epochset.fs_hz / 2:
        raise ValueError("notch frequency must lie in (0, fs/2)")
    b, a = signal.iirnotch(freq_hz, quality, fs=epochset.fs_hz)
    return epochset.with_epochs(signal.filtfilt(b, a, np.asarray(epochset.epochs, dtype=np.float64), axis=-1))


def extract_bands(epochset: EpochSet, bands: Sequence[BandSpec], order: int = 30) -> list[EpochSet]:
    return [filt_zero_phase(epochset, fir_bandpass(epochset.fs_hz, b, order)) for b in bands]


def analytic_phase(x: np.ndarray) -> np.ndarray:
    """Analytic-signal phase along the last axis, wrapped to (-pi, pi]."""
    ph = np.angle(signal.hilbert(np.asarray(x, dtype=np.float64), axis=-1))
    return np.where(ph <= -np.pi, np.pi, ph)


def instantaneous_phase(epochset: EpochSet) -> PhaseSeries:
    if epochset.n_samples < 4:
        raise ValueError("need at least 4 samples for the analytic signal")
    return PhaseSeries(analytic_phase(epochset.epochs))


def psd(
    epochset: EpochSet, channel: int, f_lo: float = 0.1, f_hi: float = 60.0, nperseg: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Welch power spectral density of one channel, averaged over trials."""
    if not 0 <= channel < epochset.n_channels:
        raise ValueError(f"channel index {channel} out of range")
    if nperseg is None:
        nperseg = min(epochset.n_samples, int(round(epochset.fs_hz)))
    freqs, pxx = signal.welch(
        np.asarray(epochset.epochs[:, channel, :], dtype=np.float64),
        fs=epochset.fs_hz,
        nperseg=nperseg,
        axis=-1,
    )
    keep = (freqs >= f_lo) & (freqs <= f_hi)
    return freqs[keep], pxx.mean(axis=0)[keep]


def ersp(
    epochset: EpochSet,
    channel: int,
    tmin: float,
    baseline_ms: tuple[float, float] = (-500.0, 0.0),
    f_range: tuple[float, float] = (0.5, 50.0),
    n_times: int = 400,
    window_s: float = 1.0,
) -> TimeFreqMap:
    """Event-related spectral perturbation via a Hann-windowed short-time DFT.

    ``tmin`` is the time (s) of the first sample relative to the event.
    Power is averaged over trials at ``n_times`` evenly spaced window
    centres and expressed in dB relative to the mean power of the windows
    that end inside the baseline interval, so no post-event sample leaks
    into the reference.
    """
    if not 0 <= channel < epochset.n_channels:
        raise ValueError(f"channel index {channel} out of range")
    fs = epochset.fs_hz
    if not 0 <= f_range[0] < f_range[1] <= fs / 2:
        raise ValueError(f"f_range {f_range} must lie within [0, fs/2 = {fs / 2}]")
    nwin = int(round(window_s * fs))
    T = epochset.n_samples
    if nwin < 2 or nwin > T:
        raise ValueError("analysis window longer than the epoch")
    tmax = tmin + (T - 1) / fs
    b0, b1 = baseline_ms[0] / 1000.0, baseline_ms[1] / 1000.0
    if b0 >= b1 or b0 < tmin or b1 > tmax:
        raise ValueError("baseline outside epoch")

    starts = np.round(np.linspace(0, T - nwin, n_times)).astype(int)
    times = tmin + (starts + nwin / 2) / fs
    freqs = np.fft.rfftfreq(nwin, d=1.0 / fs)
    fmask = (freqs >= f_range[0]) & (freqs <= f_range[1])

    x = np.asarray(epochset.epochs[:, channel, :], dtype=np.float64)
    segs = np.lib.stride_tricks.sliding_window_view(x, nwin, axis=-1)[:, starts, :]
    spec = np.fft.rfft(segs * signal.windows.hann(nwin, sym=False), axis=-1)
    power = np.mean(np.abs(spec) ** 2, axis=0)[:, fmask].T  # F x P

    # baseline windows overlap the interval but contain nothing after its end
    w_start = tmin + starts / fs
    w_end = w_start + (nwin - 1) / fs
    in_base = (w_end >= b0) & (w_end <= b1 + 0.5 / fs)
    if not in_base.any():
        raise ValueError("baseline outside epoch: no analysis window ends inside it")
    base = power[:, in_base].mean(axis=1, keepdims=True)
    tiny = np.finfo(np.float64).tiny
    db = 10 * np.log10((power + tiny) / (base + tiny))
    return TimeFreqMap(freqs=freqs[fmask], times=times, power=db)
