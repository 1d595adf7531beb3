"""Answer sheets for comparing human labelling against the model on the same rows."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FIXED_COLUMNS = ("global_index", "true_label", "model_pred", "model_confidence", "human_label")


def export_turing_sheet(
    model, X, labels, path, n_max: int = 50, seed: int = 0, feature_names=None,
    class_names=None, global_index=None,
) -> Path:
    """Write up to ``n_max`` randomly chosen rows, model answers included, to ``path``.

    ``global_index`` maps row positions to indices in the original file.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, m = X.shape
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(m)]
    cls = list(class_names) if class_names is not None else [str(c) for c in range(int(labels.max()) + 1)]
    gidx = np.arange(n) if global_index is None else np.asarray(global_index)
    rng = np.random.default_rng([seed, 0x7E5])
    rows = np.sort(rng.permutation(n)[: min(n_max, n)])
    p = model.predict_proba(X[rows])
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(FIXED_COLUMNS) + names)
            for r, pr in zip(rows, p):
                k = int(pr.argmax())
                w.writerow([int(gidx[r]), cls[labels[r]], cls[k], f"{pr[k]:.6f}", ""]
                           + [repr(float(v)) for v in X[r]])
    except OSError as exc:
        raise OSError(f"cannot write answer sheet to {path}: {exc}") from exc
    return path


@dataclass(frozen=True)
class TuringScore:
    n_rows: int
    n_labelled: int
    human_accuracy: float | None
    model_accuracy: float | None
    agreement: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def score_turing_sheet(path) -> TuringScore:
    """Score the filled ``human_label`` column; blank answers are skipped."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not set(FIXED_COLUMNS) <= set(rows[0]):
        raise ValueError(f"{path} is missing answer-sheet columns")
    done = [r for r in rows if r["human_label"].strip()]
    k = len(done)
    if k == 0:
        return TuringScore(len(rows), 0, None, None, None)
    h = [r["human_label"].strip() for r in done]
    return TuringScore(
        len(rows), k,
        sum(a == r["true_label"] for a, r in zip(h, done)) / k,
        sum(r["model_pred"] == r["true_label"] for r in done) / k,
        sum(a == r["model_pred"] for a, r in zip(h, done)) / k,
    )
