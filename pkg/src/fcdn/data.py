"""Domain types, the dataset container, and the synthetic phase-coupled generator.

``EpochSet`` is the currency passed between every stage. It is a frozen
dataclass whose arrays are marked read-only; transformations return new
sets via :meth:`EpochSet.with_epochs` or :meth:`EpochSet.subset`.

Randomness in :func:`synth_generate` comes from NumPy's ``PCG64`` bit
generator (``numpy.random.default_rng``), seeded with the 64-bit
``SynthSpec.seed``. PCG64 output is specified and identical across
platforms, so a seed reproduces the same bytes everywhere.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .container import read_container, write_container
from .errors import FormatError

logger = logging.getLogger(__name__)

DATASET_MAGIC = "fcdn-eeg/1"

# 10-20 labels of the 64-electrode cap, front to back; the last four are
# the inferior temporal sites that complete the 64.
STANDARD_CHANNELS = (
    "Fp1", "Fp2", "AF7", "AF5", "AFz", "AF6", "AF8",
    "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT7", "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", "FT8",
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8",
    "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8",
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2", "Iz",
    "FT9", "FT10", "TP9", "TP10",
)

CLASS_NAMES = ("phone", "water", "door", "food")


def _readonly(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class Montage:
    channel_names: tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(str(n) for n in self.channel_names)
        object.__setattr__(self, "channel_names", names)
        if len(names) < 2:
            raise ValueError("montage needs at least 2 channels")
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")

    @property
    def K(self) -> int:
        return len(self.channel_names)

    def index(self, name: str) -> int:
        return self.channel_names.index(name)

    @classmethod
    def standard(cls, K: int) -> "Montage":
        """First ``K`` standard labels, padded with ``Ch<k>`` beyond 64."""
        names = list(STANDARD_CHANNELS[:K])
        names += [f"Ch{k}" for k in range(len(names), K)]
        return cls(tuple(names))


@dataclass(frozen=True)
class BandSpec:
    name: str
    f_lo: float
    f_hi: float

    def validate(self, fs_hz: float) -> None:
        if not (0 < self.f_lo < self.f_hi < fs_hz / 2):
            raise ValueError(
                f"band {self.name!r} [{self.f_lo}, {self.f_hi}] Hz must satisfy "
                f"0 < f_lo < f_hi < fs/2 = {fs_hz / 2}"
            )


STANDARD_BANDS = {
    "delta": BandSpec("delta", 0.5, 4.0),
    "theta": BandSpec("theta", 4.0, 8.0),
    "alpha": BandSpec("alpha", 8.0, 13.0),
}


@dataclass(frozen=True, eq=False)
class EpochSet:
    """N trials x K channels x T samples with class labels.

    ``origins`` maps each trial to the index of the recorded trial it was
    derived from; augmentation copies share their source's origin so that
    splitting can keep them together. It defaults to ``arange(N)``.
    """

    fs_hz: float
    epochs: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    montage: Montage
    origins: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.epochs)
        if x.dtype not in (np.float32, np.float64):
            x = x.astype(np.float64)
        if x.ndim != 3:
            raise ValueError(f"epochs must be N x K x T, got shape {x.shape}")
        n, k, t = x.shape
        if n == 0:
            raise ValueError("empty set")
        if t < 2:
            raise ValueError("need at least 2 samples per trial")
        if not (self.fs_hz > 0 and math.isfinite(self.fs_hz)):
            raise ValueError("fs_hz must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite sample")
        if k != self.montage.K:
            raise ValueError(f"montage has {self.montage.K} channels, epochs have {k}")
        y = np.asarray(self.labels)
        if y.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {y.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        names = tuple(str(c) for c in self.class_names)
        if len(names) < 1:
            raise ValueError("need at least one class")
        if y.min() < 0 or y.max() >= len(names):
            raise ValueError("label out of range")
        origins = np.arange(n) if self.origins is None else np.asarray(self.origins, dtype=np.int64)
        if origins.shape != (n,):
            raise ValueError("origins must have one entry per trial")
        object.__setattr__(self, "fs_hz", float(self.fs_hz))
        object.__setattr__(self, "epochs", _readonly(x))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "origins", _readonly(origins))

    @property
    def n_trials(self) -> int:
        return self.epochs.shape[0]

    @property
    def n_channels(self) -> int:
        return self.epochs.shape[1]

    @property
    def n_samples(self) -> int:
        return self.epochs.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def with_epochs(self, epochs: np.ndarray, fs_hz: float | None = None) -> "EpochSet":
        """Same labels and metadata, new sample array (trial count must match)."""
        return EpochSet(
            fs_hz=self.fs_hz if fs_hz is None else fs_hz,
            epochs=epochs,
            labels=self.labels,
            class_names=self.class_names,
            montage=self.montage,
            origins=self.origins,
        )

    def with_labels(self, labels: np.ndarray) -> "EpochSet":
        return EpochSet(self.fs_hz, self.epochs, labels, self.class_names, self.montage, self.origins)

    def subset(self, indices: Sequence[int] | np.ndarray) -> "EpochSet":
        idx = np.asarray(indices, dtype=np.int64)
        return EpochSet(
            fs_hz=self.fs_hz,
            epochs=self.epochs[idx],
            labels=self.labels[idx],
            class_names=self.class_names,
            montage=self.montage,
            origins=self.origins[idx],
        )

    def equals(self, other: "EpochSet") -> bool:
        """Bit-exact equality of samples, labels, and metadata."""
        return (
            self.fs_hz == other.fs_hz
            and self.epochs.dtype == other.epochs.dtype
            and np.array_equal(self.epochs, other.epochs)
            and np.array_equal(self.labels, other.labels)
            and self.class_names == other.class_names
            and self.montage == other.montage
            and np.array_equal(self.origins, other.origins)
        )


def concat_epochsets(sets: Sequence[EpochSet]) -> EpochSet:
    """Stack trials of compatible sets; origins are offset to stay distinct."""
    if not sets:
        raise ValueError("nothing to concatenate")
    first = sets[0]
    for s in sets[1:]:
        if s.montage != first.montage:
            raise ValueError("montage mismatch")
        if s.fs_hz != first.fs_hz or s.n_samples != first.n_samples:
            raise ValueError("sampling rate or trial length mismatch")
        if s.class_names != first.class_names:
            raise ValueError("class names mismatch")
    origins, offset = [], 0
    for s in sets:
        origins.append(s.origins + offset)
        offset += int(s.origins.max()) + 1
    return EpochSet(
        fs_hz=first.fs_hz,
        epochs=np.concatenate([s.epochs for s in sets]),
        labels=np.concatenate([s.labels for s in sets]),
        class_names=first.class_names,
        montage=first.montage,
        origins=np.concatenate(origins),
    )


# --- container -----------------------------------------------------------------


def save_epochset(epochset: EpochSet, path: str | Path) -> None:
    """Write ``<path>.json`` + ``<path>.f32``.

    Samples are stored as 32-bit floats; float32 sets round-trip bit-exactly,
    float64 sets are rounded on the way out.
    """
    if epochset.n_trials == 0:
        raise ValueError("empty set")
    if epochset.epochs.dtype != np.float32:
        logger.debug("rounding float64 samples to float32 for storage")
    manifest = {
        "magic": DATASET_MAGIC,
        "fs_hz": epochset.fs_hz,
        "channels": list(epochset.montage.channel_names),
        "n_trials": epochset.n_trials,
        "samples_per_trial": epochset.n_samples,
        "classes": list(epochset.class_names),
        "labels": [int(v) for v in epochset.labels],
    }
    if not np.array_equal(epochset.origins, np.arange(epochset.n_trials)):
        manifest["origins"] = [int(v) for v in epochset.origins]
    write_container(path, manifest, epochset.epochs.reshape(-1))


def load_epochset(path: str | Path) -> EpochSet:
    manifest, blob = read_container(path, DATASET_MAGIC)
    try:
        n = int(manifest["n_trials"])
        t = int(manifest["samples_per_trial"])
        channels = list(manifest["channels"])
        classes = list(manifest["classes"])
        labels = np.asarray(manifest["labels"], dtype=np.int64)
        fs = float(manifest["fs_hz"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed manifest: {exc}") from exc
    k = len(channels)
    if n < 1:
        raise FormatError("empty set")
    if blob.size != n * k * t:
        raise FormatError(f"blob length mismatch: expected {n * k * t} floats, found {blob.size}")
    if labels.shape != (n,):
        raise FormatError("label count does not match n_trials")
    if labels.size and (labels.min() < 0 or labels.max() >= len(classes)):
        raise FormatError("label out of range")
    if not np.all(np.isfinite(blob)):
        raise FormatError("non-finite sample")
    origins = manifest.get("origins")
    try:
        return EpochSet(
            fs_hz=fs,
            epochs=blob.astype(np.float32).reshape(n, k, t),
            labels=labels,
            class_names=tuple(classes),
            montage=Montage(tuple(channels)),
            origins=None if origins is None else np.asarray(origins, dtype=np.int64),
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


# --- synthetic generator ---------------------------------------------------------


@dataclass(frozen=True)
class Coupling:
    """A shared band-limited source on two channels; ``k2`` lags ``k1`` by ``phase_offset``."""

    k1: int
    k2: int
    band: BandSpec
    phase_offset: float
    amplitude: float


@dataclass(frozen=True)
class SynthSpec:
    K: int
    T: int
    fs_hz: float
    n_per_class: int
    C: int
    plan: tuple[tuple[Coupling, ...], ...]
    noise: float = 1.0
    seed: int = 0
    channel_names: tuple[str, ...] | None = None
    class_names: tuple[str, ...] | None = None

    def validate(self) -> None:
        if self.K < 2 or self.T < 4 or self.n_per_class < 1 or self.C < 1:
            raise ValueError("K >= 2, T >= 4, n_per_class >= 1 and C >= 1 are required")
        if not self.fs_hz > 0:
            raise ValueError("fs_hz must be positive")
        if self.noise < 0:
            raise ValueError("noise amplitude must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if len(self.plan) != self.C:
            raise ValueError(f"coupling plan has {len(self.plan)} classes, expected {self.C}")
        for couplings in self.plan:
            for c in couplings:
                if not (0 <= c.k1 < self.K and 0 <= c.k2 < self.K) or c.k1 == c.k2:
                    raise ValueError(f"bad coupling channels ({c.k1}, {c.k2})")
                if not 0 <= c.phase_offset < 2 * math.pi:
                    raise ValueError("phase offsets must lie in [0, 2*pi)")
                if c.amplitude < 0:
                    raise ValueError("coupling amplitude must be >= 0")
                c.band.validate(self.fs_hz)
                if _band_bins(c.band, self.T, self.fs_hz).size == 0:
                    raise ValueError(f"band {c.band.name!r} has no DFT bins at T={self.T}")
        if self.channel_names is not None and len(self.channel_names) != self.K:
            raise ValueError("channel_names length must equal K")
        if self.class_names is not None and len(self.class_names) != self.C:
            raise ValueError("class_names length must equal C")


def default_plan(K: int = 8, C: int = 4) -> tuple[tuple[Coupling, ...], ...]:
    """One coupled pair per class over the leading channels, alternating alpha/theta.

    The trailing channels stay uncoupled so every band has a clear minimum
    in its connectivity profile.
    """
    if K < 4:
        raise ValueError("default plan needs K >= 4")
    n_coupled = max(2, min(K - 2, 6))
    pairs = [(i, (i + 1) % n_coupled) for i in range(0, n_coupled, 2)]
    pairs += [(i, (i + 3) % n_coupled) for i in range(1, n_coupled, 2)]
    bands = (STANDARD_BANDS["alpha"], STANDARD_BANDS["alpha"], STANDARD_BANDS["theta"], STANDARD_BANDS["theta"])
    plan = []
    for c in range(C):
        k1, k2 = pairs[c % len(pairs)]
        plan.append((Coupling(k1, k2, bands[c % 4], (c + 1) * math.pi / 6, 1.0),))
    return tuple(plan)


def _band_bins(band: BandSpec, T: int, fs_hz: float) -> np.ndarray:
    freqs = np.fft.rfftfreq(T, d=1.0 / fs_hz)
    inside = (freqs >= band.f_lo) & (freqs <= band.f_hi) & (freqs > 0)
    if T % 2 == 0:
        inside[-1] = False
    return np.flatnonzero(inside)


def pink_noise(rng: np.random.Generator, shape: tuple[int, ...], T: int) -> np.ndarray:
    """Unit-RMS 1/f noise via spectral shaping (1/sqrt(f) magnitude, random phase)."""
    n_bins = T // 2 + 1
    mag = np.zeros(n_bins)
    mag[1:] = 1.0 / np.sqrt(np.arange(1, n_bins))
    phase = rng.uniform(0.0, 2 * np.pi, size=shape + (n_bins,))
    x = np.fft.irfft(mag * np.exp(1j * phase), n=T, axis=-1)
    rms = np.sqrt(np.mean(x**2, axis=-1, keepdims=True))
    return x / np.where(rms > 0, rms, 1.0)


def _coupled_pair(
    rng: np.random.Generator, n: int, coupling: Coupling, T: int, fs_hz: float
) -> tuple[np.ndarray, np.ndarray]:
    bins = _band_bins(coupling.band, T, fs_hz)
    spec = np.zeros((n, T // 2 + 1), dtype=complex)
    spec[:, bins] = rng.standard_normal((n, bins.size)) + 1j * rng.standard_normal((n, bins.size))
    a = np.fft.irfft(spec, n=T, axis=-1)
    b = np.fft.irfft(spec * np.exp(-1j * coupling.phase_offset), n=T, axis=-1)
    rms = np.sqrt(np.mean(a**2, axis=-1, keepdims=True))
    scale = coupling.amplitude / np.where(rms > 0, rms, 1.0)
    return a * scale, b * scale


def synth_generate(spec: SynthSpec) -> EpochSet:
    """Generate a labelled set in which each class drives its own coupled channel pairs.

    Every channel carries independent pink noise of RMS ``spec.noise``. A
    coupling adds one band-limited random source to ``k1`` and the same
    source rotated by ``-phase_offset`` (per frequency component) to ``k2``,
    so their analytic-signal phases differ by exactly the offset.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.repeat(np.arange(spec.C), spec.n_per_class))
    n = labels.size
    x = spec.noise * pink_noise(rng, (n, spec.K), spec.T)
    for c, couplings in enumerate(spec.plan):
        idx = np.flatnonzero(labels == c)
        for coupling in couplings:
            a, b = _coupled_pair(rng, idx.size, coupling, spec.T, spec.fs_hz)
            x[idx, coupling.k1] += a
            x[idx, coupling.k2] += b
    names = spec.channel_names or Montage.standard(spec.K).channel_names
    classes = spec.class_names or tuple(
        CLASS_NAMES[c] if spec.C <= len(CLASS_NAMES) else f"class{c}" for c in range(spec.C)
    )
    return EpochSet(
        fs_hz=spec.fs_hz,
        epochs=x.astype(np.float32),
        labels=labels,
        class_names=classes,
        montage=Montage(tuple(names)),
    )
