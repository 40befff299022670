"""Phase-locking connectivity and the channel-weighting layer built on it."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import BandSpec, EpochSet, Montage
from .dsp import PhaseSeries, instantaneous_phase


@dataclass(frozen=True, eq=False)
class PlvMatrix:
    """Symmetric K x K phase-locking matrix with zero diagonal."""

    S: np.ndarray
    band: BandSpec | None = None

    def __post_init__(self) -> None:
        S = np.asarray(self.S, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("PLV matrix must be square")
        if not np.array_equal(S, S.T):
            raise ValueError("PLV matrix must be symmetric")
        if np.any(np.diag(S) != 0):
            raise ValueError("PLV matrix diagonal must be zero")
        if np.any(S < 0) or np.any(S > 1):
            raise ValueError("PLV entries must lie in [0, 1]")
        S = S.view()
        S.flags.writeable = False
        object.__setattr__(self, "S", S)

    @property
    def K(self) -> int:
        return self.S.shape[0]

    def upper(self) -> np.ndarray:
        return self.S[np.triu_indices(self.K, k=1)]


@dataclass(frozen=True, eq=False)
class ChannelWeights:
    w: np.ndarray
    band: BandSpec | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a finite vector")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        w = w.view()
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @property
    def K(self) -> int:
        return self.w.size

    @classmethod
    def ones(cls, K: int, band: BandSpec | None = None) -> "ChannelWeights":
        return cls(np.ones(K), band)

    def to_json(self, path: str | Path, montage: Montage | None = None) -> None:
        doc = {
            "band": None if self.band is None else self.band.name,
            "channels": None if montage is None else list(montage.channel_names),
            "weights": [float(v) for v in self.w],
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class EdgeList:
    edges: tuple[tuple[int, int, float], ...]
    threshold: float

    def to_csv(self, path: str | Path, montage: Montage) -> None:
        names = montage.channel_names
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k1_name", "k2_name", "score"])
            for k1, k2, score in self.edges:
                writer.writerow([names[k1], names[k2], repr(score)])

    def to_json(self, path: str | Path, montage: Montage) -> None:
        names = montage.channel_names
        doc = {
            "threshold": self.threshold,
            "edges": [{"k1": names[a], "k2": names[b], "score": s} for a, b, s in self.edges],
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _phases(phases: PhaseSeries | np.ndarray) -> np.ndarray:
    return phases.phases if isinstance(phases, PhaseSeries) else np.asarray(phases, dtype=np.float64)


def plv_pair(phases: PhaseSeries | np.ndarray, k1: int, k2: int) -> float:
    """|mean over trials and samples of exp(i (phi_k1 - phi_k2))|."""
    ph = _phases(phases)
    K = ph.shape[1]
    if not (0 <= k1 < K and 0 <= k2 < K):
        raise IndexError(f"channel pair ({k1}, {k2}) out of range for K={K}")
    theta = ph[:, k1, :] - ph[:, k2, :]
    return float(min(1.0, abs(np.mean(np.exp(1j * theta)))))


def plv_matrix(phases: PhaseSeries | np.ndarray, band: BandSpec | None = None) -> PlvMatrix:
    """All pairs at once: the strict upper triangle, then S = plv + plv^T."""
    ph = _phases(phases)
    n, K, T = ph.shape
    acc = np.zeros((K, K), dtype=complex)
    step = max(1, 2**22 // (K * T))
    for start in range(0, n, step):
        z = np.exp(1j * ph[start : start + step]).transpose(1, 0, 2).reshape(K, -1)
        acc += z @ z.conj().T
    cross = np.abs(acc) / (n * T)
    upper = np.triu(np.clip(cross, 0.0, 1.0), k=1)
    return PlvMatrix(upper + upper.T, band)


def channel_weights(mat: PlvMatrix) -> ChannelWeights:
    """Column sums of S, min-max scaled to [0, 1]; constant sums give 0.5 everywhere."""
    sums = mat.S.sum(axis=0)
    lo, hi = sums.min(), sums.max()
    if hi == lo:
        return ChannelWeights(np.full(mat.K, 0.5), mat.band)
    return ChannelWeights(np.clip((sums - lo) / (hi - lo), 0.0, 1.0), mat.band)


def apply_weights(epochset: EpochSet, weights: ChannelWeights) -> EpochSet:
    if weights.K != epochset.n_channels:
        raise ValueError(f"{weights.K} weights for {epochset.n_channels} channels")
    x = np.asarray(epochset.epochs, dtype=np.float64) * weights.w[None, :, None]
    return epochset.with_epochs(x)


def strong_edges(mat: PlvMatrix, threshold: float = 0.9) -> EdgeList:
    if not 0 <= threshold < 1:
        raise ValueError("threshold must lie in [0, 1)")
    iu, ju = np.triu_indices(mat.K, k=1)
    scores = mat.S[iu, ju]
    keep = scores > threshold
    edges = sorted(
        ((int(a), int(b), float(s)) for a, b, s in zip(iu[keep], ju[keep], scores[keep])),
        key=lambda e: (-e[2], e[0], e[1]),
    )
    return EdgeList(tuple(edges), float(threshold))


def plv_similarity(a: PlvMatrix, b: PlvMatrix) -> float:
    """Pearson correlation of the two strict upper triangles."""
    if a.K != b.K:
        raise ValueError(f"channel count mismatch: {a.K} vs {b.K}")
    x, y = a.upper(), b.upper()
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("PLV vector has zero variance")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(xc**2)), np.sqrt(np.sum(yc**2))
    if sx == 0 or sy == 0:
        raise ValueError("PLV vector has zero variance")
    return float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))


def fit_channel_weights(
    band_sets: Sequence[EpochSet], bands: Sequence[BandSpec] | None = None
) -> list[ChannelWeights]:
    """Pooled-over-trials weights per band-filtered set (pass training trials only)."""
    bands = list(bands) if bands is not None else [None] * len(band_sets)
    return [channel_weights(plv_matrix(instantaneous_phase(s), b)) for s, b in zip(band_sets, bands)]
