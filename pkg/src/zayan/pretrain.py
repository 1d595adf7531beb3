"""Feature-level zero-anchor contrastive pretraining.

Each feature column is encoded by one shared value network. A scalar value
``x`` of feature ``j`` goes through ``MLP(x * w + e_j W + b)``, where ``e_j`` is
a learned identity embedding for the feature. A column (or a view of one) is
embedded by mean-pooling the per-scalar outputs and L2-normalizing; a single
sample is embedded feature by feature, normalizing each output. Both paths
use the same parameters, so a length-1 column view and a sample embedding of
the same value coincide.

Matrices of feature embeddings follow the ``d x m`` layout: column ``j`` is
the embedding of feature ``j``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, FeatureColumnView, augment_views
from .data import Dataset
from .numerics import (
    Dropout,
    Linear,
    Module,
    NonFiniteError,
    OptimizerState,
    Tensor,
    adam_step,
    as_tensor,
    gelu,
    l2_normalize,
    logsumexp,
    no_grad,
    param,
)


class PretrainError(RuntimeError):
    pass


def feature_key(name: str) -> int:
    """Stable integer key for per-feature random streams."""
    return zlib.crc32(name.encode("utf-8"))


class EncoderState(Module):
    """Shared scalar value network plus one identity embedding per feature."""

    def __init__(self, feature_names, emb_dim: int, hidden_dim: int, dropout: float, seed: int):
        if emb_dim < 2:
            raise ValueError(f"emb_dim must be >= 2, got {emb_dim}")
        if hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {hidden_dim}")
        self.feature_names = tuple(feature_names)
        self.emb_dim = emb_dim
        self.hidden_dim = hidden_dim
        rng = np.random.default_rng([seed, 0x5EED])
        ident = np.stack([
            np.random.default_rng([seed, feature_key(n)]).normal(size=emb_dim) for n in self.feature_names
        ])
        self.identity = param(ident)
        self.value_weight = param(rng.normal(size=hidden_dim))
        self.identity_proj = Linear(emb_dim, hidden_dim, rng)
        self.out = Linear(hidden_dim, emb_dim, rng)
        self.drop = Dropout(dropout)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _scalar_outputs(self, values: np.ndarray, feature_axis: int, rng) -> Tensor:
        """Un-normalized value-network outputs, one per scalar in ``values``."""
        cond = self.identity_proj(self.identity)  # (m, hidden)
        x = Tensor(np.asarray(values, dtype=np.float64)[..., None])
        if feature_axis == 0:  # values (m, B)
            pre = x * self.value_weight + cond.reshape(self.n_features, 1, self.hidden_dim)
        else:  # values (B, m)
            pre = x * self.value_weight + cond
        return self.out(self.drop(gelu(pre), rng))

    def column_embeddings(self, columns: np.ndarray, rng=None) -> Tensor:
        """(m, B) column values -> (m, d) unit rows, mean-pooled over B."""
        columns = np.asarray(columns, dtype=np.float64)
        if columns.shape[0] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns, got {columns.shape[0]}")
        return l2_normalize(self._scalar_outputs(columns, 0, rng).mean(axis=1))

    def sample_embeddings(self, X: np.ndarray, rng=None) -> Tensor:
        """(n, m) rows -> (n, m, d) per-feature unit embeddings."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected rows of length {self.n_features}, got shape {X.shape}")
        return l2_normalize(self._scalar_outputs(X, 1, rng))

    def feature_matrix(self, X: np.ndarray, chunk: int = 256) -> "FeatureEmbeddingMatrix":
        """Clean-column embeddings over all rows of ``X`` (dropout off, chunked)."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                total = np.zeros((self.n_features, self.emb_dim))
                for s in range(0, X.shape[0], chunk):
                    out = self._scalar_outputs(X[s:s + chunk].T, 0, None)
                    total += out.data.sum(axis=1)
                rows = total / X.shape[0]
                rows /= np.maximum(np.linalg.norm(rows, axis=1, keepdims=True), 1e-12)
        finally:
            self.train(was_training)
        return FeatureEmbeddingMatrix(rows.T)


@dataclass(frozen=True)
class FeatureEmbeddingMatrix:
    Z: np.ndarray  # (d, m)

    def __post_init__(self):
        Z = np.array(self.Z, dtype=np.float64)
        norms = np.linalg.norm(Z, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("feature embedding columns must have unit norm")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @property
    def d(self) -> int:
        return self.Z.shape[0]

    @property
    def m(self) -> int:
        return self.Z.shape[1]

    def gram(self) -> np.ndarray:
        return self.Z.T @ self.Z


def encode_column(view: FeatureColumnView | np.ndarray, feature_index: int, enc: EncoderState) -> np.ndarray:
    """Unit embedding of one column view, dropout off."""
    if not 0 <= feature_index < enc.n_features:
        raise IndexError(f"feature_index {feature_index} out of range")
    values = view.values if isinstance(view, FeatureColumnView) else np.asarray(view, dtype=np.float64)
    with no_grad():
        cond = enc.identity_proj(enc.identity[feature_index:feature_index + 1])
        pre = Tensor(values[:, None]) * enc.value_weight + cond
        out = enc.out(gelu(pre)).mean(axis=0)
    v = out.data
    n = np.linalg.norm(v)
    if not np.isfinite(v).all() or n == 0:
        raise NonFiniteError("encode_column")
    return v / n


def embed_sample(x: np.ndarray, enc: EncoderState) -> np.ndarray:
    """(m,) row -> (m, d) per-feature unit embeddings."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (enc.n_features,):
        raise ValueError(f"expected a row of length {enc.n_features}, got shape {x.shape}")
    was_training = enc.training
    enc.eval()
    try:
        with no_grad():
            return enc.sample_embeddings(x[None, :]).data[0]
    finally:
        enc.train(was_training)


# -- objectives -----------------------------------------------------------


def infonce_feature_loss(Z1, Z2, tau: float, include_positive: bool = False) -> Tensor:
    """Feature-level InfoNCE between two ``d x m`` view matrices.

    ``-sum_j log(exp(s_jj / tau) / sum_{k != j} exp(s_jk / tau))`` with ``s`` the
    cosine similarity between column ``j`` of ``Z1`` and column ``k`` of ``Z2``.
    The positive pair is left out of the denominator unless
    ``include_positive`` is set, which gives the usual InfoNCE.
    """
    Z1, Z2 = as_tensor(Z1), as_tensor(Z2)
    if tau <= 0:
        raise ValueError("tau must be positive")
    m = Z1.shape[1]
    if m < 2:
        raise ValueError("need at least two features")
    if Z2.shape != Z1.shape:
        raise ValueError(f"view shapes differ: {Z1.shape} vs {Z2.shape}")
    A = l2_normalize(Z1, axis=0)
    B = l2_normalize(Z2, axis=0)
    S = (A.T @ B) * (1.0 / tau)
    eye = np.eye(m, dtype=bool)
    positive = (S * Tensor(eye.astype(np.float64))).sum(axis=1)
    denom = logsumexp(S, axis=1, where=None if include_positive else ~eye)
    return -(positive - denom).sum()


def redundancy_penalty(Z) -> Tensor:
    """``||Z^T Z - I||_F^2`` for a ``d x m`` embedding matrix."""
    if isinstance(Z, FeatureEmbeddingMatrix):
        Z = Z.Z
    Z = as_tensor(Z)
    G = Z.T @ Z - Tensor(np.eye(Z.shape[1]))
    return (G * G).sum()


def mi_lower_bound(loss: float, m: int) -> float:
    if m < 2:
        raise ValueError("need m >= 2")
    return math.log(m) - float(loss)


def mean_offdiag_abs(G: np.ndarray) -> float:
    m = G.shape[0]
    off = ~np.eye(m, dtype=bool)
    return float(np.abs(G[off]).mean())


# -- training -------------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 100
    tau: float = 0.5
    redundancy_weight: float = 2.0
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 128
    emb_dim: int = 64
    hidden_dim: int = 256
    dropout: float = 0.1
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    include_positive_in_denominator: bool = False
    use_infonce: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.redundancy_weight < 0:
            raise ValueError(f"redundancy weight must be >= 0, got {self.redundancy_weight}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    infonce: float
    redundancy: float
    total: float
    mi_lower_bound: float
    gram_offdiag: float

    def to_line(self) -> str:
        return " ".join(f"{k}={v!r}" for k, v in vars(self).items())


@dataclass
class PretrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    initial_gram_offdiag: float = float("nan")
    final_gram_offdiag: float = float("nan")

    def to_text(self) -> str:
        head = f"initial_gram_offdiag={self.initial_gram_offdiag!r} final_gram_offdiag={self.final_gram_offdiag!r}"
        return "\n".join([head] + [r.to_line() for r in self.records]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PretrainHistory":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        kv = [dict(tok.split("=", 1) for tok in ln.split()) for ln in lines]
        recs = [
            EpochRecord(int(r["epoch"]), *(float(r[k]) for k in
                        ("infonce", "redundancy", "total", "mi_lower_bound", "gram_offdiag")))
            for r in kv[1:]
        ]
        return cls(recs, float(kv[0]["initial_gram_offdiag"]), float(kv[0]["final_gram_offdiag"]))


def pretrain(d: Dataset, cfg: PretrainConfig) -> tuple[EncoderState, FeatureEmbeddingMatrix, PretrainHistory]:
    """Optimize the encoder on ``InfoNCE + lambda * redundancy``, one step per epoch.

    Each epoch draws ``batch_size`` rows without replacement, builds two
    augmented views per column from a stream keyed on (seed, epoch, feature
    name), and computes the redundancy term on the first view. The returned
    matrix is computed from the clean columns of all rows.
    """
    X = np.asarray(d.features, dtype=np.float64)
    n, m = X.shape
    enc = EncoderState(d.feature_names, cfg.emb_dim, cfg.hidden_dim, cfg.dropout, cfg.seed)
    params = enc.parameters()
    opt = OptimizerState(cfg.lr, cfg.weight_decay)
    history = PretrainHistory(initial_gram_offdiag=mean_offdiag_abs(enc.feature_matrix(X).gram()))
    keys = [feature_key(name) for name in d.feature_names]
    row_rng = np.random.default_rng([cfg.seed, 0xB47C])
    b = min(cfg.batch_size, n)

    enc.train()
    for epoch in range(cfg.epochs):
        Xb = X[row_rng.choice(n, size=b, replace=False)]
        v1 = np.empty((m, b))
        v2 = np.empty((m, b))
        for j in range(m):
            a, c = augment_views(Xb[:, j], cfg.augment, np.random.default_rng([cfg.seed, epoch, keys[j]]))
            v1[j], v2[j] = a.values, c.values
        drop_rng = np.random.default_rng([cfg.seed, epoch, 0xD80])
        try:
            z1 = enc.column_embeddings(v1, drop_rng).T
            z2 = enc.column_embeddings(v2, drop_rng).T
            red = redundancy_penalty(z1)
            if cfg.use_infonce:
                cl = infonce_feature_loss(z1, z2, cfg.tau, cfg.include_positive_in_denominator)
                total = cl + red * cfg.redundancy_weight
            else:
                cl = Tensor(0.0)
                total = red * cfg.redundancy_weight
            params.zero_grad()
            total.backward()
        except NonFiniteError as exc:
            raise PretrainError(f"non-finite loss at epoch {epoch}: {exc}") from exc
        adam_step(params, opt)
        history.records.append(EpochRecord(
            epoch, cl.item(), red.item(), total.item(),
            mi_lower_bound(cl.item(), m), mean_offdiag_abs(z1.data.T @ z1.data),
        ))
    enc.eval()
    Z = enc.feature_matrix(X)
    history.final_gram_offdiag = mean_offdiag_abs(Z.gram())
    return enc, Z, history
