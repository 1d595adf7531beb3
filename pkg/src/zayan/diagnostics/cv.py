"""Stratified k-fold evaluation of the full pretrain + fine-tune pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..data import Dataset, standardize, stratified_kfold
from ..pretrain import PretrainConfig, pretrain
from ..transformer import ZayanModel, ZayanTConfig, finetune
from .metrics import confusion_matrix


def fold_seed(seed: int, fold: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, fold, stream]).generate_state(1)[0])


@dataclass
class FoldOutcome:
    fold: int
    test_index: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    model: ZayanModel | None = field(default=None, repr=False)
    test_rows: np.ndarray | None = field(default=None, repr=False)
    gram_offdiag: tuple[float, float] = (float("nan"), float("nan"))

    @property
    def accuracy(self) -> float:
        return float((self.probs.argmax(axis=1) == self.labels).mean())


@dataclass
class CVResult:
    fold_accuracies: np.ndarray
    mean: float
    std: float
    confusion_matrices: list[np.ndarray]
    folds: list[FoldOutcome] = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return len(self.fold_accuracies)

    def summary(self) -> str:
        return f"{100 * self.mean:.2f}±{100 * self.std:.2f}"

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """Out-of-fold probabilities and labels in original row order."""
        idx = np.concatenate([f.test_index for f in self.folds])
        order = np.argsort(idx)
        probs = np.concatenate([f.probs for f in self.folds])[order]
        labels = np.concatenate([f.labels for f in self.folds])[order]
        return probs, labels

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "fold_accuracies": self.fold_accuracies.tolist(),
            "mean": self.mean,
            "std": self.std,
            "summary": self.summary(),
            "confusion_matrices": [c.tolist() for c in self.confusion_matrices],
            "gram_offdiag": [list(f.gram_offdiag) for f in self.folds],
        }


def run_fold(train: Dataset, test: Dataset, pre_cfg: PretrainConfig, t_cfg: ZayanTConfig,
             fold: int, seed: int, keep_model: bool = False) -> FoldOutcome:
    tr, stats = standardize(train)
    te, _ = standardize(test, stats)
    enc, Z, hist = pretrain(tr, replace(pre_cfg, seed=fold_seed(seed, fold, 1)))
    model, _ = finetune(tr, enc, Z, replace(t_cfg, seed=fold_seed(seed, fold, 2)), scaler=stats)
    probs = model.predict_proba(te.features)
    return FoldOutcome(
        fold, np.array([], dtype=np.int64), te.labels.copy(), probs,
        model if keep_model else None, te.features.copy() if keep_model else None,
        (hist.initial_gram_offdiag, hist.final_gram_offdiag),
    )


def cross_validate(d: Dataset, pre_cfg: PretrainConfig, t_cfg: ZayanTConfig, k: int = 5,
                   seed: int = 0, keep_models: bool = False) -> CVResult:
    """Per fold: standardize on train, pretrain, fine-tune, then score the held-out rows.

    The standard deviation is the population one (``ddof=0``).
    """
    outcomes = []
    for split in stratified_kfold(d, k, seed):
        o = run_fold(d.subset(split.train), d.subset(split.test), pre_cfg, t_cfg, split.fold, seed, keep_models)
        o.test_index = split.test.copy()
        outcomes.append(o)
    acc = np.array([o.accuracy for o in outcomes])
    cms = [confusion_matrix(o.labels, o.probs.argmax(axis=1), d.n_classes) for o in outcomes]
    return CVResult(acc, float(acc.mean()), float(acc.std()), cms, outcomes)
