"""Scripted window classifiers for replay tests."""

from __future__ import annotations

import numpy as np

from fcdn.data import EpochSet, Montage


def tagged_set(labels, n_samples=1250, fs_hz=250.0, n_classes=4) -> EpochSet:
    """Trials whose channel 0 holds the trial id so a stub can recognise them in any order."""
    labels = np.asarray(labels)
    n = len(labels)
    x = np.zeros((n, 2, n_samples))
    x[:, 0, :] = np.arange(n)[:, None]
    return EpochSet(fs_hz, x, labels, tuple(f"c{i}" for i in range(n_classes)), Montage.standard(2))


class PatternStub:
    """Predicts the true label on windows marked correct and the next class otherwise.

    ``pattern[trial][window]`` is the hand-specified correctness. Window index
    comes from the call order; trial identity from the tag in channel 0.
    """

    def __init__(self, labels, pattern, n_classes=4):
        self.labels = np.asarray(labels)
        self.pattern = np.asarray(pattern, dtype=bool)
        self.n_classes = n_classes
        self.calls = 0
        self.window_lengths: list[int] = []

    def predict_proba(self, epochset: EpochSet) -> np.ndarray:
        w = self.calls
        self.calls += 1
        self.window_lengths.append(epochset.n_samples)
        ids = epochset.epochs[:, 0, 0].astype(int)
        out = np.full((len(ids), self.n_classes), 0.1 / (self.n_classes - 1))
        for row, t in enumerate(ids):
            y = self.labels[t]
            guess = y if self.pattern[t, w] else (y + 1) % self.n_classes
            out[row, guess] = 0.9
        return out
