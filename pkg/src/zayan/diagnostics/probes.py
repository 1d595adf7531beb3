"""Inference-time probes that perturb inputs and re-run a trained model.

Any object exposing ``predict_proba(X)``, ``logits(X)`` and ``embed(X)`` over
rows of standardized features can be probed; :class:`zayan.transformer.ZayanModel`
is the usual one. Every probe takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..augment import AugmentConfig, augment_matrix
from .geometry import knn_label_agreement
from .metrics import entropy

HEAVY_NOISE_SIGMA = 3.0
OOD_NOISE_SIGMA = 1.0


def _accuracy(model, X, labels) -> float:
    return float((model.predict_proba(X).argmax(axis=1) == labels).mean())


def _rows(X, labels=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("test rows must be a 2-D array")
    if labels is None:
        return X
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (X.shape[0],):
        raise ValueError("labels do not match the number of rows")
    return X, labels


def nested_feature_subsets(m: int, fractions, rng: np.random.Generator) -> list[np.ndarray]:
    """Prefixes of one random feature order, so larger fractions contain smaller ones."""
    order = rng.permutation(m)
    return [np.sort(order[: int(round(f * m))]) for f in fractions]


@dataclass(frozen=True)
class RobustnessPoint:
    fraction: float
    n_perturbed: int
    accuracy: float
    knn_agree: float | None


def robustness_sweep(
    model, X, labels, fractions=(0.0, 0.1, 0.25, 0.5, 0.75, 1.0), mode: str = "shuffle",
    seed: int = 0, train_means=None, knn_k: int = 5,
) -> list[RobustnessPoint]:
    """Accuracy as a growing subset of features is shuffled or replaced by train means.

    ``train_means`` defaults to zeros, the train mean of standardized features.
    ``knn_agree`` is the fraction of rows whose label matches the majority label of
    their ``knn_k`` nearest clean-embedding neighbours; it does not depend on the
    perturbation and is repeated per row of the sweep for side-by-side reading.
    """
    X, labels = _rows(X, labels)
    if mode not in ("shuffle", "drop"):
        raise ValueError(f"mode must be 'shuffle' or 'drop', got {mode!r}")
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    n, m = X.shape
    means = np.zeros(m) if train_means is None else np.asarray(train_means, dtype=np.float64)
    rng = np.random.default_rng([seed, 0x5EE9])
    subsets = nested_feature_subsets(m, fractions, rng)
    # one permutation per feature, shared by every fraction that perturbs it
    perms = [rng.permutation(n) for _ in range(m)]
    agree = knn_label_agreement(model.embed(X), labels, knn_k) if n > knn_k else None
    out = []
    for f, cols in zip(fractions, subsets):
        Xp = X.copy()
        for j in cols:
            Xp[:, j] = X[perms[j], j] if mode == "shuffle" else means[j]
        out.append(RobustnessPoint(f, len(cols), _accuracy(model, Xp, labels), agree))
    return out


SANITY_MODES = ("full", "zero", "mean", "shuffle_rows", "heavy_noise")


def sanity_input(X, mode: str, rng: np.random.Generator, means=None) -> np.ndarray:
    X = _rows(X)
    if mode == "full":
        return X.copy()
    if mode == "zero":
        return np.zeros_like(X)
    if mode == "mean":
        mu = X.mean(axis=0) if means is None else np.asarray(means, dtype=np.float64)
        return np.broadcast_to(mu, X.shape).copy()
    if mode == "shuffle_rows":
        return X[rng.permutation(X.shape[0])]
    if mode == "heavy_noise":
        return X + rng.normal(0.0, HEAVY_NOISE_SIGMA, size=X.shape)
    raise ValueError(f"unknown sanity mode {mode!r}")


def sanity_modes(model, X, labels, seed: int = 0, means=None) -> dict[str, float]:
    """Accuracy under each of the five sanity modes.

    ``mean`` fills every row with ``means`` (column means of ``X`` by default).
    """
    X, labels = _rows(X, labels)
    rng = np.random.default_rng([seed, 0x5A71])
    return {mode: _accuracy(model, sanity_input(X, mode, rng, means), labels) for mode in SANITY_MODES}


OOD_REGIMES = ("id", "noise", "permute", "constant")


def ood_inputs(X, rng: np.random.Generator) -> dict[str, np.ndarray]:
    X = _rows(X)
    perm = X.copy()
    for j in range(X.shape[1]):
        perm[:, j] = X[rng.permutation(X.shape[0]), j]
    return {
        "id": X,
        "noise": X + rng.normal(0.0, OOD_NOISE_SIGMA, size=X.shape),
        "permute": perm,
        "constant": np.broadcast_to(X.mean(axis=0), X.shape).copy(),
    }


def ood_confidence_report(model, X, seed: int = 0) -> dict[str, dict[str, float]]:
    rng = np.random.default_rng([seed, 0x00D])
    out = {}
    for name, Xr in ood_inputs(X, rng).items():
        p = model.predict_proba(Xr)
        out[name] = {"mean_max_confidence": float(p.max(axis=1).mean()),
                     "mean_entropy": float(entropy(p).mean())}
    return out


@dataclass(frozen=True)
class SensitivityResult:
    eps: float
    n_directions: int
    per_row: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.per_row.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.per_row))

    def to_dict(self) -> dict:
        return {"eps": self.eps, "n_directions": self.n_directions, "mean": self.mean, "median": self.median}


def local_sensitivity(model, X, eps: float = 0.1, n_directions: int = 8, seed: int = 0) -> SensitivityResult:
    """Mean L2 change of the logits when each row moves ``eps`` along random unit directions."""
    X = _rows(X)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if n_directions < 1:
        raise ValueError("n_directions must be >= 1")
    n, m = X.shape
    if eps == 0:
        return SensitivityResult(0.0, n_directions, np.zeros(n))
    rng = np.random.default_rng([seed, 0x5E5])
    u = rng.normal(size=(n, n_directions, m))
    u /= np.linalg.norm(u, axis=2, keepdims=True)
    base = model.logits(X)
    moved = model.logits((X[:, None, :] + eps * u).reshape(n * n_directions, m))
    moved = moved.reshape(n, n_directions, -1)
    disp = np.linalg.norm(moved - base[:, None, :], axis=2).mean(axis=1)
    return SensitivityResult(float(eps), n_directions, disp)


@dataclass(frozen=True)
class FeatureImportance:
    baseline: float
    drops: np.ndarray
    ranking: np.ndarray

    def to_dict(self, feature_names=None) -> dict:
        names = feature_names or [str(j) for j in range(len(self.drops))]
        return {
            "baseline_accuracy": self.baseline,
            "ranking": [{"feature": names[j], "index": int(j), "drop": float(self.drops[j])}
                        for j in self.ranking],
        }


def permutation_importance(model, X, labels, seed: int = 0) -> FeatureImportance:
    """Accuracy drop when one column at a time is permuted; ranked by drop, ties by index."""
    X, labels = _rows(X, labels)
    rng = np.random.default_rng([seed, 0x1A9])
    base = _accuracy(model, X, labels)
    drops = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        Xp = X.copy()
        Xp[:, j] = X[rng.permutation(X.shape[0]), j]
        drops[j] = base - _accuracy(model, Xp, labels)
    ranking = np.lexsort((np.arange(len(drops)), -drops))
    return FeatureImportance(base, drops, ranking)


def majority_vote(votes: np.ndarray, n_classes: int) -> np.ndarray:
    """Row-wise mode of integer votes with shape (n, v); ties go to the lowest class."""
    counts = np.zeros((votes.shape[0], n_classes), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(votes.shape[0]), votes.shape[1]), votes.ravel()), 1)
    return counts.argmax(axis=1)


@dataclass(frozen=True)
class TTAResult:
    votes: int
    clean_accuracy: float
    tta_accuracy: float
    change_fraction: float

    def to_dict(self) -> dict:
        return {"votes": self.votes, "clean_accuracy": self.clean_accuracy,
                "tta_accuracy": self.tta_accuracy, "change_fraction": self.change_fraction}


def tta_consistency(model, X, labels, cfg: AugmentConfig | None = None, votes: int = 5, seed: int = 0) -> TTAResult:
    X, labels = _rows(X, labels)
    if votes < 1 or votes % 2 == 0:
        raise ValueError("votes must be a positive odd number")
    cfg = cfg or AugmentConfig()
    rng = np.random.default_rng([seed, 0x77A])
    p = model.predict_proba(X)
    clean = p.argmax(axis=1)
    ballots = np.column_stack([model.predict_proba(augment_matrix(X, cfg, rng)).argmax(axis=1)
                               for _ in range(votes)])
    voted = majority_vote(ballots, p.shape[1])
    return TTAResult(votes, float((clean == labels).mean()), float((voted == labels).mean()),
                     float((voted != clean).mean()))
