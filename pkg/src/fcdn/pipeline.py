"""End-to-end glue: band extraction, connectivity weights, training, and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .connectivity import ChannelWeights, fit_channel_weights
from .data import STANDARD_BANDS, BandSpec, EpochSet, concat_epochsets
from .dsp import extract_bands
from .evaluation import SplitPlan, accuracy, augment_gaussian, kfold, loso, split_62_2
from .model import FcdnConfig, FcdnModel, TrainHistory, build, predict, train

DEFAULT_BANDS: tuple[BandSpec, ...] = tuple(STANDARD_BANDS.values())


def band_sets(epochset: EpochSet, bands: Sequence[BandSpec] = DEFAULT_BANDS, order: int = 30) -> list[EpochSet]:
    """One zero-phase band-filtered copy of ``epochset`` per band (trials filtered independently)."""
    return extract_bands(epochset, bands, order)


def subset_bands(sets: Sequence[EpochSet], indices) -> list[EpochSet]:
    return [s.subset(indices) for s in sets]


def fit_weights(train_band_sets: Sequence[EpochSet], bands: Sequence[BandSpec] = DEFAULT_BANDS) -> list[ChannelWeights]:
    return fit_channel_weights(train_band_sets, bands)


@dataclass
class FcdnClassifier:
    """Raw trials in, class probabilities out; usable by :func:`pseudo_online`."""

    model: FcdnModel
    bands: tuple[BandSpec, ...] = DEFAULT_BANDS
    filter_order: int = 30

    @property
    def input_length(self) -> int:
        return self.model.config.T

    def predict_proba(self, epochset: EpochSet) -> np.ndarray:
        return predict(self.model, band_sets(epochset, self.bands, self.filter_order))[1]

    def predict(self, epochset: EpochSet) -> np.ndarray:
        return self.predict_proba(epochset).argmax(axis=1)


@dataclass
class HoldoutResult:
    model: FcdnModel
    history: TrainHistory
    plan: SplitPlan
    test_accuracy: float
    weights: list[ChannelWeights]


def run_holdout(
    epochset: EpochSet,
    config: FcdnConfig,
    split_seed: int = 0,
    use_fc: bool = True,
    augment_factor: int = 1,
    sigma_rel: float = 0.05,
    bands: Sequence[BandSpec] = DEFAULT_BANDS,
    filter_order: int = 30,
    shuffle_train_labels: bool = False,
    log_path: str | Path | None = None,
    plan: SplitPlan | None = None,
    filtered: Sequence[EpochSet] | None = None,
    teacher: FcdnModel | None = None,
) -> HoldoutResult:
    """Split, augment the training part, fit FC weights on it, train, and score the test part.

    ``shuffle_train_labels`` permutes the training and validation labels
    (test labels stay true), which should drive test accuracy to chance.
    ``filtered`` may carry precomputed band sets of ``epochset``.
    """
    plan = plan or split_62_2(epochset, seed=split_seed)
    filtered = list(filtered) if filtered is not None else band_sets(epochset, bands, filter_order)
    tr, va, te = (subset_bands(filtered, list(ix)) for ix in (plan.train, plan.val, plan.test))
    if shuffle_train_labels:
        rng = np.random.default_rng(split_seed + 7919)
        y_tr, y_va = rng.permutation(tr[0].labels), rng.permutation(va[0].labels)
        tr = [s.with_labels(y_tr) for s in tr]
        va = [s.with_labels(y_va) for s in va]
    if augment_factor > 1:
        # noise goes on the raw trials, which are then filtered like everything else
        raw = epochset.subset(list(plan.train)).with_labels(tr[0].labels)
        tr = band_sets(augment_gaussian(raw, augment_factor, sigma_rel, seed=split_seed), bands, filter_order)
    weights = fit_weights(tr, bands) if use_fc else [ChannelWeights.ones(epochset.n_channels, b) for b in bands]
    model = build(config, weights)
    model, history = train(model, teacher, tr, va, config, log_path)
    labels, _ = predict(model, te)
    return HoldoutResult(model, history, plan, accuracy(labels, te[0].labels), weights)


def inner_split(epochset: EpochSet, train_idx: Sequence[int], test_idx: Sequence[int], seed: int) -> SplitPlan:
    """Carve a validation part out of ``train_idx`` (origin-grouped, stratified).

    Of the training trials, the 20% share a 60/20/20 split would hold out for
    validation becomes the validation part; the rest stays in training.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    inner = split_62_2(epochset.subset(train_idx), seed=seed)
    tr = sorted(int(train_idx[i]) for i in inner.train + inner.test)
    va = sorted(int(train_idx[i]) for i in inner.val)
    return SplitPlan(tuple(tr), tuple(va), tuple(int(i) for i in test_idx), seed=seed)


def run_cv(
    epochset: EpochSet, config: FcdnConfig, k: int = 5, seed: int = 0, **holdout_kwargs
) -> list[HoldoutResult]:
    """k-fold cross-validation; each fold retrains from scratch with an inner validation part."""
    filtered = holdout_kwargs.pop("filtered", None)
    if filtered is None:
        filtered = band_sets(epochset, holdout_kwargs.get("bands", DEFAULT_BANDS), holdout_kwargs.get("filter_order", 30))
    results = []
    for i, fold in enumerate(kfold(epochset, k, seed)):
        plan = inner_split(epochset, fold.train, fold.test, seed + i)
        results.append(run_holdout(epochset, config, split_seed=seed + i, plan=plan, filtered=filtered, **holdout_kwargs))
    return results


def run_loso(
    subject_sets: Sequence[EpochSet], target_index: int, config: FcdnConfig, seed: int = 0, **holdout_kwargs
) -> HoldoutResult:
    """Train on all other subjects (with an inner validation part) and test on the target."""
    train_set, test_set = loso(subject_sets, target_index)
    combined = concat_epochsets([train_set, test_set])
    n_train = train_set.n_trials
    plan = inner_split(combined, range(n_train), range(n_train, combined.n_trials), seed)
    return run_holdout(combined, config, split_seed=seed, plan=plan, **holdout_kwargs)


def evaluate_holdout(classifier, epochset: EpochSet, seed: int = 0) -> dict:
    """Accuracy of ``classifier`` on the test part of the seeded 60/20/20 split."""
    plan = split_62_2(epochset, seed=seed)
    test = epochset.subset(list(plan.test))
    pred = np.asarray(classifier.predict_proba(test)).argmax(axis=1)
    return {"n_test": test.n_trials, "accuracy": accuracy(pred, test.labels), "test_indices": list(plan.test)}
