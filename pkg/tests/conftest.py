import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class SoftmaxModel:
    """Linear softmax classifier with the probe interface; embeddings are the raw rows."""

    def __init__(self, W, b=None):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.zeros(self.W.shape[1]) if b is None else np.asarray(b, dtype=np.float64)

    def logits(self, X):
        return np.asarray(X, dtype=np.float64) @ self.W + self.b

    def predict_proba(self, X):
        z = self.logits(X)
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def embed(self, X):
        return np.asarray(X, dtype=np.float64)


@pytest.fixture
def softmax_model():
    return SoftmaxModel


@pytest.fixture(scope="session")
def tiny_trained():
    """A small pretrained + fine-tuned model on separable synthetic data."""
    from zayan.data import make_synthetic, standardize
    from zayan.pretrain import PretrainConfig, pretrain
    from zayan.transformer import ZayanTConfig, finetune

    d = make_synthetic(120, 5, 2, redundancy_groups=3, noise=0.3, seed=3, class_sep=8.0)
    std, stats = standardize(d)
    enc, Z, _ = pretrain(std, PretrainConfig(epochs=10, emb_dim=8, hidden_dim=16, seed=1))
    model, hist = finetune(std, enc, Z, ZayanTConfig(num_layers=1, nhead=2, ff_dim=16, epochs=15, lr=3e-3,
                                                     gamma=0.01, seed=2), scaler=stats)
    return std, model
