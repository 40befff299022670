"""Augmentation, splitting, accuracy, paired permutation tests, and window replay."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .data import EpochSet, concat_epochsets

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class SplitPlan:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int | None = None
    stratified: bool = True

    def __post_init__(self) -> None:
        parts = [set(self.train), set(self.val), set(self.test)]
        if sum(len(p) for p in parts) != len(self.train) + len(self.val) + len(self.test):
            raise ValueError("duplicate index inside a split")
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise ValueError("splits overlap")

    def all_indices(self) -> list[int]:
        return sorted(self.train + self.val + self.test)

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test), "seed": self.seed}


# --- augmentation ----------------------------------------------------------------------


def augment_gaussian(epochset: EpochSet, factor: int = 5, sigma_rel: float = 0.05, seed: int = 0) -> EpochSet:
    """Originals followed by ``factor - 1`` blocks of noisy copies.

    Noise on a copy is i.i.d. Gaussian with standard deviation ``sigma_rel``
    times the source trial's per-channel standard deviation. Copies keep the
    label and origin of their source.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be >= 0")
    if factor == 1:
        return epochset
    x = epochset.epochs
    rng = np.random.default_rng(seed)
    scale = sigma_rel * x.std(axis=2, keepdims=True)
    blocks = [x]
    for _ in range(factor - 1):
        if sigma_rel == 0:
            blocks.append(x.copy())
        else:
            blocks.append((x + rng.standard_normal(x.shape) * scale).astype(x.dtype))
    return EpochSet(
        fs_hz=epochset.fs_hz,
        epochs=np.concatenate(blocks),
        labels=np.tile(epochset.labels, factor),
        class_names=epochset.class_names,
        montage=epochset.montage,
        origins=np.tile(epochset.origins, factor),
    )


# --- splitting ---------------------------------------------------------------------------


def _groups(epochset: EpochSet) -> tuple[np.ndarray, np.ndarray, dict[int, np.ndarray]]:
    """Distinct origins, the label of each, and the trial indices of each."""
    origins = epochset.origins
    uniq, first = np.unique(origins, return_index=True)
    members = {int(o): np.flatnonzero(origins == o) for o in uniq}
    labels = epochset.labels[first]
    for o, idx in members.items():
        if np.any(epochset.labels[idx] != epochset.labels[idx[0]]):
            raise ValueError(f"trials sharing origin {o} carry different labels")
    return uniq, labels, members


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer counts summing to ``n``; ties in the remainder go to earlier slots."""
    exact = [n * f for f in fractions]
    counts = [int(np.floor(e + 1e-9)) for e in exact]
    rema = [e - c for e, c in zip(exact, counts)]
    order = sorted(range(len(fractions)), key=lambda i: (-round(rema[i], 9), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _expand(groups: Sequence[int], members: dict[int, np.ndarray]) -> tuple[int, ...]:
    if not len(groups):
        return ()
    return tuple(sorted(int(i) for g in groups for i in members[int(g)]))


def split_62_2(epochset: EpochSet, seed: int = 0, stratified: bool = True, min_per_class: int = 5) -> SplitPlan:
    """60/20/20 split by origin group, stratified by class, largest-remainder rounding."""
    uniq, glabels, members = _groups(epochset)
    rng = np.random.default_rng(seed)
    strata = np.unique(glabels) if stratified else [None]
    parts: list[list[int]] = [[], [], []]
    for c in strata:
        pool = uniq if c is None else uniq[glabels == c]
        if len(pool) < min_per_class:
            raise ValueError(f"too few trials in class {c}: {len(pool)} < {min_per_class}")
        pool = rng.permutation(pool)
        n_tr, n_va, _ = largest_remainder(len(pool), SPLIT_FRACTIONS)
        parts[0].extend(pool[:n_tr])
        parts[1].extend(pool[n_tr : n_tr + n_va])
        parts[2].extend(pool[n_tr + n_va :])
    return SplitPlan(*(_expand(p, members) for p in parts), seed=seed, stratified=stratified)


def kfold(epochset: EpochSet, k: int = 5, seed: int = 0) -> list[SplitPlan]:
    """Stratified, origin-grouped folds; each plan has an empty validation part."""
    if k < 2:
        raise ValueError("k must be >= 2")
    uniq, glabels, members = _groups(epochset)
    if k > len(uniq):
        raise ValueError(f"k={k} exceeds the {len(uniq)} independent trials")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    slot = 0
    for c in np.unique(glabels):
        for g in rng.permutation(uniq[glabels == c]):
            folds[slot % k].append(int(g))
            slot += 1
    plans = []
    for i in range(k):
        rest = [g for j in range(k) if j != i for g in folds[j]]
        plans.append(SplitPlan(_expand(rest, members), (), _expand(folds[i], members), seed=seed))
    return plans


def loso(subject_sets: Sequence[EpochSet], target_index: int) -> tuple[EpochSet, EpochSet]:
    """Train on every subject but ``target_index``; test on that one."""
    if len(subject_sets) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    if not 0 <= target_index < len(subject_sets):
        raise IndexError(f"target index {target_index} out of range")
    montage = subject_sets[0].montage
    for s in subject_sets:
        if s.montage != montage:
            raise ValueError("montage mismatch between subjects")
    rest = [s for i, s in enumerate(subject_sets) if i != target_index]
    return concat_epochsets(rest), subject_sets[target_index]


# --- statistics -------------------------------------------------------------------------


def accuracy(pred, true) -> float:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError("length mismatch")
    if pred.size == 0:
        raise ValueError("empty prediction vector")
    return float(np.mean(pred == true))


EXACT_LIMIT = 12


def permutation_test_paired(a, b, n_perm: int = 10000, seed: int = 0) -> float:
    """Two-sided sign-flip test on paired differences.

    The statistic is the mean difference. Up to 12 pairs every sign pattern
    is enumerated and p = (#|stat| >= |observed|) / 2^n; beyond that
    ``n_perm`` random patterns give p = (count + 1) / (n_perm + 1).
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length vectors")
    d = a - b
    n = d.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    observed = abs(d.sum())
    tol = 1e-12 * max(1.0, float(np.abs(d).sum()))
    if n <= EXACT_LIMIT:
        signs = 1 - 2 * ((np.arange(2**n)[:, None] >> np.arange(n)) & 1)
        count = int(np.sum(np.abs(signs @ d) >= observed - tol))
        return count / 2**n
    rng = np.random.default_rng(seed)
    count = 0
    for start in range(0, n_perm, 4096):
        m = min(4096, n_perm - start)
        signs = rng.choice((-1.0, 1.0), size=(m, n))
        count += int(np.sum(np.abs(signs @ d) >= observed - tol))
    return (count + 1) / (n_perm + 1)


# --- pseudo-online replay ------------------------------------------------------------------


class WindowClassifier(Protocol):
    """Anything that maps an EpochSet of windows to N x C class probabilities."""

    def predict_proba(self, epochset: EpochSet) -> np.ndarray: ...


def window_schedule(n_samples: int, fs_hz: float, window_s: float = 2.0, overlap: float = 0.5) -> list[tuple[int, int]]:
    """(start, stop) sample ranges of every window that fits inside the trial."""
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    win = int(round(window_s * fs_hz))
    if win < 1:
        raise ValueError("window shorter than one sample")
    if win > n_samples:
        raise ValueError(f"window of {win} samples longer than the {n_samples}-sample trial")
    step = max(1, int(round(win * (1 - overlap))))
    spans = [(s, s + win) for s in range(0, n_samples - win + 1, step)]
    if not spans:
        raise ValueError("no windows fit")
    return spans


@dataclass
class PseudoOnlineResult:
    trial_ids: np.ndarray
    true_labels: np.ndarray
    window_labels: np.ndarray  # N x W
    window_probs: np.ndarray  # N x W x C
    fused: np.ndarray
    correct_windows: np.ndarray
    success: np.ndarray
    threshold: float
    strict: bool
    spans: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_windows(self) -> int:
        return self.window_labels.shape[1]

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.success))

    @property
    def fused_accuracy(self) -> float:
        return accuracy(self.fused, self.true_labels)

    def rows(self) -> list[dict]:
        out = []
        for i, t in enumerate(self.trial_ids):
            row = {"trial": int(t)}
            for w in range(self.n_windows):
                row[f"window{w + 1}"] = int(self.window_labels[i, w])
            row.update(fused=int(self.fused[i]), correct_windows=int(self.correct_windows[i]), success=int(self.success[i]))
            out.append(row)
        return out

    def to_csv(self, path: str | Path) -> None:
        rows = self.rows()
        header = ["trial"] + [f"window{w + 1}" for w in range(self.n_windows)] + ["fused", "correct_windows", "success"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "strict": self.strict,
            "n_windows": self.n_windows,
            "spans": [list(s) for s in self.spans],
            "success_rate": self.success_rate,
            "fused_accuracy": self.fused_accuracy,
            "trials": self.rows(),
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def _pad_edge(x: np.ndarray, length: int) -> np.ndarray:
    if x.shape[-1] >= length:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, length - x.shape[-1])), mode="edge")


def pseudo_online(
    classifier: WindowClassifier,
    epochset: EpochSet,
    window_s: float = 2.0,
    overlap: float = 0.5,
    success_threshold: float = 0.75,
    strict: bool = False,
    trials: Sequence[int] | None = None,
) -> PseudoOnlineResult:
    """Replay trials through sliding windows and fuse the window decisions.

    ``classifier.predict_proba`` is called once per window position, in
    order, with that window of every replayed trial. Windows shorter than
    the classifier's ``input_length`` (when it has one) are right-padded by
    repeating the last sample. A trial succeeds when the fraction of correct
    windows is >= ``success_threshold`` (> when ``strict``).
    """
    idx = np.arange(epochset.n_trials) if trials is None else np.asarray(trials, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("no trials to replay")
    subset = epochset.subset(idx)
    spans = window_schedule(subset.n_samples, subset.fs_hz, window_s, overlap)
    length = getattr(classifier, "input_length", None)
    probs = []
    for start, stop in spans:
        x = np.asarray(subset.epochs[:, :, start:stop])
        if length is not None:
            x = _pad_edge(x, int(length))
        p = np.asarray(classifier.predict_proba(subset.with_epochs(x)), dtype=np.float64)
        if p.shape != (subset.n_trials, subset.n_classes):
            raise ValueError(f"classifier returned shape {p.shape}, expected {(subset.n_trials, subset.n_classes)}")
        probs.append(p)
    P = np.stack(probs, axis=1)  # N x W x C
    window_labels = P.argmax(axis=2)
    fused = P.mean(axis=1).argmax(axis=1)
    correct = (window_labels == subset.labels[:, None]).sum(axis=1)
    frac = correct / len(spans)
    success = frac > success_threshold if strict else frac >= success_threshold
    return PseudoOnlineResult(
        trial_ids=idx,
        true_labels=np.asarray(subset.labels),
        window_labels=window_labels,
        window_probs=P,
        fused=fused,
        correct_windows=correct,
        success=success,
        threshold=success_threshold,
        strict=strict,
        spans=spans,
    )


def pseudo_online_runs(
    classifier: WindowClassifier, epochset: EpochSet, runs: Sequence[Sequence[int]], **kwargs
) -> list[PseudoOnlineResult]:
    """One replay per explicit list of trial indices."""
    return [pseudo_online(classifier, epochset, trials=list(r), **kwargs) for r in runs]

