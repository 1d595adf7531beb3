"""Geometry of feature embeddings and pooled sample representations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANCE_THRESHOLDS = (0.5, 0.8, 0.9, 0.95, 0.99)
KNN_KS = (1, 3, 5, 10, 20)


def participation_ratio(eigenvalues) -> float:
    lam = np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None)
    s2 = float((lam ** 2).sum())
    if s2 == 0.0:
        return 0.0
    return float(lam.sum() ** 2 / s2)


def components_for_variance(eigenvalues, thresholds=VARIANCE_THRESHOLDS) -> dict[float, int]:
    """Smallest number of leading components whose share of variance reaches each threshold."""
    lam = np.sort(np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None))[::-1]
    total = lam.sum()
    if total == 0:
        return {t: 0 for t in thresholds}
    cum = np.cumsum(lam) / total
    # tolerance keeps 0.8 from needing one more component when cum is 0.7999999999
    return {t: int(np.searchsorted(cum, t - 1e-12) + 1) for t in thresholds}


def cosine_similarity_matrix(E: np.ndarray) -> np.ndarray:
    E = np.asarray(E, dtype=np.float64)
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    U = E / np.where(norms > 0, norms, 1.0)
    return U @ U.T


def _neighbour_order(E: np.ndarray) -> np.ndarray:
    """Other rows sorted by decreasing cosine similarity; ties by index."""
    S = cosine_similarity_matrix(E)
    n = S.shape[0]
    np.fill_diagonal(S, -np.inf)
    idx = np.broadcast_to(np.arange(n), (n, n))
    order = np.lexsort((idx, -S), axis=1)
    return order[:, : n - 1]


def _knn_vote(order, labels, k, n_classes):
    nb = labels[order[:, :k]]
    counts = np.zeros((len(labels), n_classes), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(len(labels)), k), nb.ravel()), 1)
    return counts.argmax(axis=1)


def loo_knn_accuracy(E, labels, ks=KNN_KS) -> dict[int, float | None]:
    """Leave-one-out cosine kNN accuracy; ``None`` when ``k`` exceeds ``n - 1``.

    Vote ties go to the lowest class index.
    """
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    order = _neighbour_order(E)
    c = int(labels.max()) + 1
    return {int(k): (float((_knn_vote(order, labels, k, c) == labels).mean()) if k <= len(labels) - 1 else None)
            for k in ks}


def knn_label_agreement(E, labels, k: int = 5) -> float:
    return float(loo_knn_accuracy(E, labels, (k,))[k])


def offdiag_mean_abs(G: np.ndarray) -> float:
    m = G.shape[0]
    return float((np.abs(G).sum() - np.abs(np.diag(G)).sum()) / (m * (m - 1)))


@dataclass(frozen=True)
class GramDiagnostics:
    offdiag_mean_abs: float
    offdiag_max_abs: float
    eigenvalues: np.ndarray
    participation_ratio: float

    def to_dict(self) -> dict:
        return {"offdiag_mean_abs": self.offdiag_mean_abs, "offdiag_max_abs": self.offdiag_max_abs,
                "eigenvalues": self.eigenvalues.tolist(), "participation_ratio": self.participation_ratio}


def gram_diagnostics(Z) -> GramDiagnostics:
    """Statistics of ``G = ZᵀZ`` for a d×m matrix of unit feature columns."""
    Z = np.asarray(getattr(Z, "Z", Z), dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ValueError("need a d x m matrix with m >= 2")
    G = Z.T @ Z
    off = np.abs(G[~np.eye(G.shape[0], dtype=bool)])
    lam = np.sort(np.linalg.eigvalsh(G))[::-1]
    return GramDiagnostics(offdiag_mean_abs(G), float(off.max()), lam, participation_ratio(lam))


@dataclass(frozen=True)
class EmbeddingGeometry:
    pca_eigenvalues: np.ndarray
    participation_ratio: float
    components_for_variance: dict
    loo_knn: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pca_eigenvalues": self.pca_eigenvalues.tolist(),
            "participation_ratio": self.participation_ratio,
            "components_for_variance": {str(t): v for t, v in self.components_for_variance.items()},
            "loo_knn": {str(k): v for k, v in self.loo_knn.items()},
        }


def embedding_geometry(E, labels=None, ks=KNN_KS) -> EmbeddingGeometry:
    """PCA spectrum, effective dimension and LOO kNN for (n, d) sample embeddings."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 2:
        raise ValueError("need at least two embedding rows")
    C = np.cov(E, rowvar=False, bias=True)
    lam = np.sort(np.linalg.eigvalsh(np.atleast_2d(C)))[::-1]
    lam = np.clip(lam, 0.0, None)
    knn = loo_knn_accuracy(E, labels, ks) if labels is not None else {}
    return EmbeddingGeometry(lam, participation_ratio(lam), components_for_variance(lam), knn)
