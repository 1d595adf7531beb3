"""Transformer classifier over per-sample feature embeddings.

Tokens are the per-feature embeddings ``z_ij`` of a row plus a learned
position vector ``p_j`` per feature. A stack of pre-norm encoder blocks maps
them to ``h_ij`` (no final normalization, so the block stack can represent the
identity), the tokens are mean-pooled, and a two-layer MLP head produces
class logits.

Training minimizes cross-entropy plus ``gamma`` times the summed squared
distance between ``h_ij`` and ``z_ij``.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, ScalerStats
from .numerics import (
    Dropout,
    EncoderLayer,
    Linear,
    Module,
    NonFiniteError,
    OptimizerState,
    ParameterSet,
    Tensor,
    adam_step,
    as_tensor,
    gelu,
    load_matrix,
    load_tensors,
    log_softmax,
    no_grad,
    param,
    save_matrix,
    save_tensors,
)
from .pretrain import EncoderState, FeatureEmbeddingMatrix


class FinetuneError(RuntimeError):
    pass


@dataclass(frozen=True)
class ZayanTConfig:
    num_layers: int = 2
    nhead: int = 4
    ff_dim: int = 128
    dropout: float = 0.1
    gamma: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 32
    finetune_encoder: bool = False
    ce_reduction: str = "mean"
    token_source: str = "sample"
    pos_init: str = "random"
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.nhead < 1:
            raise ValueError("nhead must be >= 1")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.ce_reduction not in ("mean", "sum"):
            raise ValueError(f"ce_reduction must be 'mean' or 'sum', got {self.ce_reduction!r}")
        if self.token_source not in ("sample", "frozen"):
            raise ValueError(f"token_source must be 'sample' or 'frozen', got {self.token_source!r}")
        if self.pos_init not in ("random", "from_z"):
            raise ValueError(f"pos_init must be 'random' or 'from_z', got {self.pos_init!r}")


class ZayanTransformer(Module):
    def __init__(self, n_features: int, dim: int, n_classes: int, cfg: ZayanTConfig, pos_init=None):
        if dim % cfg.nhead:
            raise ValueError(f"nhead ({cfg.nhead}) must divide the embedding width ({dim})")
        rng = np.random.default_rng([cfg.seed, 0x7F])
        pos = rng.normal(0.0, 0.02, size=(n_features, dim)) if pos_init is None else np.array(pos_init)
        self.dim = dim
        self.pos = param(pos)
        self.layers = [EncoderLayer(dim, cfg.nhead, cfg.ff_dim, rng, cfg.dropout) for _ in range(cfg.num_layers)]
        self.head_fc1 = Linear(dim, cfg.ff_dim, rng)
        self.head_drop = Dropout(cfg.dropout)
        self.head_fc2 = Linear(cfg.ff_dim, n_classes, rng)

    def __call__(self, tokens, rng=None):
        """(B, m, d) embeddings -> (logits (B, C), H (B, m, d), pooled (B, d))."""
        tokens = as_tensor(tokens)
        if tokens.shape[-1] != self.dim:
            raise ValueError(f"token width {tokens.shape[-1]} does not match model width {self.dim}")
        h = tokens + self.pos
        for layer in self.layers:
            h = layer(h, rng)
        pooled = h.mean(axis=1)
        logits = self.head_fc2(self.head_drop(gelu(self.head_fc1(pooled)), rng))
        return logits, h, pooled


# -- losses ---------------------------------------------------------------


def preservation_loss(tokens, zrefs) -> Tensor:
    """``sum_i sum_j ||z_ij - h_ij||^2`` over a batch of (B, m, d) arrays."""
    tokens, zrefs = as_tensor(tokens), as_tensor(zrefs)
    if tokens.shape != zrefs.shape:
        raise ValueError(f"shape mismatch: {tokens.shape} vs {zrefs.shape}")
    diff = zrefs - tokens
    return (diff * diff).sum()


def cross_entropy(logits, labels, reduction: str = "mean") -> Tensor:
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError("label out of range")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    nll = -(log_softmax(logits, axis=1) * Tensor(onehot)).sum()
    return nll * (1.0 / n) if reduction == "mean" else nll


def total_loss(logits, labels, tokens, zrefs, gamma: float, reduction: str = "mean"):
    """Return ``(total, ce, preserve)``; ``total = ce + gamma * preserve``.

    Cross-entropy is averaged over the batch by default (``reduction="sum"``
    gives the plain sum); the preservation term is always a plain sum.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    ce = cross_entropy(logits, labels, reduction)
    pres = preservation_loss(tokens, zrefs)
    return ce + pres * gamma, ce, pres


# -- model bundle ---------------------------------------------------------


@dataclass
class PredictionBatch:
    probs: np.ndarray
    logits: np.ndarray
    tokens: np.ndarray
    pooled: np.ndarray

    @property
    def predicted(self) -> np.ndarray:
        # argmax returns the lowest index among ties
        return self.probs.argmax(axis=1)

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, i) -> "Prediction":
        return Prediction(self.probs[i], int(self.predicted[i]), self.tokens[i])


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    predicted: int
    tokens: np.ndarray


@dataclass
class ZayanModel:
    encoder: EncoderState
    Z: FeatureEmbeddingMatrix
    transformer: ZayanTransformer
    config: ZayanTConfig
    class_names: tuple[str, ...]
    scaler: ScalerStats | None = None
    latencies_ms: list[float] = field(default_factory=list, repr=False)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.encoder.feature_names

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def token_inputs(self, X: np.ndarray, rng=None):
        """Per-sample token embeddings for rows of standardized features."""
        if self.config.token_source == "frozen":
            return Tensor(np.broadcast_to(self.Z.Z.T, (X.shape[0],) + self.Z.Z.T.shape).copy())
        return self.encoder.sample_embeddings(X, rng)

    def predict_batch(self, rows: np.ndarray) -> PredictionBatch:
        """Eval-mode forward pass; wall-clock time is appended to ``latencies_ms``."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        start = time.perf_counter()
        self.encoder.eval()
        self.transformer.eval()
        with no_grad():
            z = self.token_inputs(rows)
            logits, h, pooled = self.transformer(z)
        lg = logits.data
        e = np.exp(lg - lg.max(axis=1, keepdims=True))
        probs = e / e.sum(axis=1, keepdims=True)
        self.latencies_ms.append((time.perf_counter() - start) * 1e3)
        return PredictionBatch(probs, lg, h.data, pooled.data)

    def _batched(self, X, attr, batch_size=256):
        X = np.asarray(X, dtype=np.float64)
        parts = [getattr(self.predict_batch(X[s:s + batch_size]), attr) for s in range(0, X.shape[0], batch_size)]
        return np.concatenate(parts, axis=0)

    def predict_proba(self, X, batch_size: int = 256) -> np.ndarray:
        return self._batched(X, "probs", batch_size)

    def logits(self, X, batch_size: int = 256) -> np.ndarray:
        return self._batched(X, "logits", batch_size)

    def embed(self, X, batch_size: int = 256) -> np.ndarray:
        """Pooled sample representations."""
        return self._batched(X, "pooled", batch_size)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def latency_stats(self) -> dict:
        lat = np.asarray(self.latencies_ms)
        if lat.size == 0:
            return {"n_batches": 0}
        p50, p90, p99 = np.percentile(lat, [50, 90, 99])
        return {"n_batches": int(lat.size), "mean_ms": float(lat.mean()),
                "p50_ms": float(p50), "p90_ms": float(p90), "p99_ms": float(p99)}

    # -- persistence --------------------------------------------------

    def save(self, directory, extra: dict | None = None) -> list[Path]:
        """Write the bundle; ``extra`` (e.g. a config hash) is stored under ``model.json["extra"]``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        enc = dict(self.encoder.parameters().snapshot())
        if self.scaler is not None:
            enc["scaler.mean"] = self.scaler.mean
            enc["scaler.std"] = self.scaler.std
            enc["scaler.zero_variance"] = self.scaler.zero_variance.astype(np.float64)
        save_tensors(out / "encoder.bin", enc)
        save_matrix(out / "z.bin", self.Z.Z)
        save_tensors(out / "transformer.bin", self.transformer.parameters().snapshot())
        meta = {
            "format": 1,
            "feature_names": list(self.feature_names),
            "class_names": list(self.class_names),
            "encoder": {"emb_dim": self.encoder.emb_dim, "hidden_dim": self.encoder.hidden_dim,
                        "dropout": self.encoder.drop.p},
            "transformer": asdict(self.config),
            "extra": extra or {},
        }
        (out / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return [out / n for n in ("encoder.bin", "z.bin", "transformer.bin", "model.json")]

    @classmethod
    def load(cls, directory) -> "ZayanModel":
        src = Path(directory)
        if not (src / "model.json").exists():
            raise FileNotFoundError(f"no model bundle in {src}")
        meta = json.loads((src / "model.json").read_text())
        cfg = ZayanTConfig(**meta["transformer"])
        e = meta["encoder"]
        enc = EncoderState(meta["feature_names"], e["emb_dim"], e["hidden_dim"], e["dropout"], seed=0)
        tensors = load_tensors(src / "encoder.bin")
        scaler = None
        if "scaler.mean" in tensors:
            scaler = ScalerStats(tensors.pop("scaler.mean"), tensors.pop("scaler.std"),
                                 tensors.pop("scaler.zero_variance").astype(bool))
        enc.parameters().load(tensors)
        Z = FeatureEmbeddingMatrix(load_matrix(src / "z.bin"))
        t = ZayanTransformer(Z.m, Z.d, len(meta["class_names"]), cfg)
        t.parameters().load(load_tensors(src / "transformer.bin"))
        return cls(enc.eval(), Z, t.eval(), cfg, tuple(meta["class_names"]), scaler)


def forward(x: np.ndarray, model: ZayanModel) -> Prediction:
    """Single-row prediction."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.encoder.n_features,):
        raise ValueError(f"expected a row of length {model.encoder.n_features}")
    return model.predict_batch(x[None, :])[0]


def predict_batch(rows: np.ndarray, model: ZayanModel) -> PredictionBatch:
    return model.predict_batch(rows)


@dataclass
class FinetuneHistory:
    ce: list[float] = field(default_factory=list)
    preserve: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def to_text(self) -> str:
        return "".join(
            f"epoch={e} ce={c!r} preserve={p!r} train_accuracy={a!r}\n"
            for e, (c, p, a) in enumerate(zip(self.ce, self.preserve, self.train_accuracy))
        )


def finetune(
    d: Dataset,
    enc: EncoderState,
    Z: FeatureEmbeddingMatrix,
    cfg: ZayanTConfig,
    scaler: ScalerStats | None = None,
) -> tuple[ZayanModel, FinetuneHistory]:
    """Minibatch training of the Transformer classifier on standardized ``d``.

    The passed encoder is never modified. With ``cfg.finetune_encoder`` a copy
    is trained jointly and gradients reach it through both loss terms;
    otherwise token embeddings are computed once, treated as constants, and
    the model keeps a reference to the original encoder.

    Training accuracy in the history is the running accuracy of the training
    forward passes of each epoch (dropout active).
    """
    if enc.emb_dim != Z.d:
        raise ValueError("encoder width does not match the embedding matrix")
    if enc.n_features != d.n_features:
        raise ValueError("encoder feature count does not match the dataset")
    encoder = copy.deepcopy(enc) if cfg.finetune_encoder else enc
    pos = Z.Z.T if cfg.pos_init == "from_z" else None
    net = ZayanTransformer(d.n_features, Z.d, d.n_classes, cfg, pos_init=pos)
    model = ZayanModel(encoder, Z, net, cfg, d.class_names, scaler)
    params = net.parameters()
    if cfg.finetune_encoder:
        params = params | ParameterSet(dict(encoder.named_parameters("encoder.")))
    opt = OptimizerState(cfg.lr, cfg.weight_decay)

    X = np.asarray(d.features, dtype=np.float64)
    y = d.labels
    n = X.shape[0]
    cached = None
    if not cfg.finetune_encoder:
        encoder.eval()
        with no_grad():
            cached = model.token_inputs(X).data

    rng = np.random.default_rng([cfg.seed, 0xF17E])
    history = FinetuneHistory()
    best, stale = np.inf, 0
    net.train()
    if cfg.finetune_encoder:
        encoder.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        ce_sum = pres_sum = 0.0
        correct = 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            try:
                if cached is not None:
                    z = Tensor(cached[idx])
                else:
                    z = model.token_inputs(X[idx], rng)
                logits, h, _ = net(z, rng)
                loss, ce, pres = total_loss(logits, y[idx], h, z, cfg.gamma, cfg.ce_reduction)
                params.zero_grad()
                loss.backward()
            except NonFiniteError as exc:
                raise FinetuneError(f"non-finite loss at epoch {epoch}, batch starting {s}: {exc}") from exc
            adam_step(params, opt)
            k = len(idx)
            ce_sum += ce.item() * (k if cfg.ce_reduction == "mean" else 1)
            pres_sum += pres.item()
            correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
        history.ce.append(ce_sum / n)
        history.preserve.append(pres_sum / n)
        history.train_accuracy.append(correct / n)
        if cfg.patience is not None:
            if history.ce[-1] < best - 1e-9:
                best, stale = history.ce[-1], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    history.stopped_early = True
                    break
    net.eval()
    encoder.eval()
    return model, history
