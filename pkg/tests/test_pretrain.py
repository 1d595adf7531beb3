import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zayan import pretrain as pt
from zayan.augment import AugmentConfig
from zayan.data import make_synthetic, standardize
from zayan.numerics import NonFiniteError, ParameterSet, Tensor, check_gradients, param
from zayan.pretrain import (
    EncoderState,
    FeatureEmbeddingMatrix,
    PretrainConfig,
    PretrainError,
    PretrainHistory,
    embed_sample,
    encode_column,
    infonce_feature_loss,
    mean_offdiag_abs,
    mi_lower_bound,
    pretrain,
    redundancy_penalty,
)


def infonce_loop(Z1, Z2, tau, include_positive=False):
    d, m = Z1.shape
    cos = lambda a, b: sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))
    total = 0.0
    for j in range(m):
        pos = math.exp(cos(Z1[:, j], Z2[:, j]) / tau)
        den = sum(math.exp(cos(Z1[:, j], Z2[:, k]) / tau) for k in range(m) if include_positive or k != j)
        total -= math.log(pos / den)
    return total


def pairwise_redundancy(Z):
    m = Z.shape[1]
    total = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                zi, zj = Z[:, i], Z[:, j]
                total += (float(zi @ zj) / (np.linalg.norm(zi) * np.linalg.norm(zj))) ** 2
    return total


def unit_columns(rng, d, m):
    Z = rng.normal(size=(d, m))
    return Z / np.linalg.norm(Z, axis=0)


@given(st.integers(2, 8), st.integers(2, 6), st.floats(0.05, 2.0), st.booleans(), st.integers(0, 10_000))
def test_infonce_matches_double_loop(d, m, tau, incl, seed):
    rng = np.random.default_rng(seed)
    Z1, Z2 = rng.normal(size=(d, m)), rng.normal(size=(d, m))
    got = infonce_feature_loss(Z1, Z2, tau, include_positive=incl).item()
    assert got == pytest.approx(infonce_loop(Z1, Z2, tau, incl), rel=1e-10, abs=1e-10)


def test_infonce_closed_forms():
    assert infonce_feature_loss(np.eye(2), np.eye(2), 1.0).item() == pytest.approx(-2.0, abs=1e-9)
    same = np.ones((4, 3))
    assert infonce_feature_loss(same, same, 0.7).item() == pytest.approx(3 * math.log(2), abs=1e-9)


def test_infonce_is_scale_invariant_per_column():
    rng = np.random.default_rng(0)
    Z1, Z2 = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    s = np.array([0.1, 2.0, 7.0, 0.5])
    a = infonce_feature_loss(Z1, Z2, 0.3).item()
    assert infonce_feature_loss(Z1 * s, Z2, 0.3).item() == pytest.approx(a, rel=1e-12)


def test_infonce_validation():
    with pytest.raises(ValueError):
        infonce_feature_loss(np.eye(2), np.eye(2), 0.0)
    with pytest.raises(ValueError):
        infonce_feature_loss(np.ones((3, 1)), np.ones((3, 1)), 1.0)
    with pytest.raises(ValueError):
        infonce_feature_loss(np.ones((3, 2)), np.ones((3, 3)), 1.0)


@given(st.integers(2, 12), st.integers(2, 10), st.integers(0, 10_000))
def test_redundancy_forms_agree(d, m, seed):
    Z = unit_columns(np.random.default_rng(seed), d, m)
    assert redundancy_penalty(Z).item() == pytest.approx(pairwise_redundancy(Z), rel=1e-9, abs=1e-9)


def test_redundancy_zero_for_orthonormal_and_hand_value():
    assert redundancy_penalty(np.eye(4)[:, :3]).item() == pytest.approx(0.0, abs=1e-15)
    Z = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert redundancy_penalty(Z).item() == pytest.approx(2.0)


@pytest.mark.parametrize("seed", range(3))
def test_objective_gradients(seed):
    rng = np.random.default_rng(seed)
    Z1, Z2 = param(rng.normal(size=(4, 3))), param(rng.normal(size=(4, 3)))
    ps = ParameterSet({"z1": Z1, "z2": Z2})
    assert check_gradients(lambda: infonce_feature_loss(Z1, Z2, 0.5), ps).passed
    assert check_gradients(lambda: redundancy_penalty(Z1), ParameterSet({"z1": Z1})).passed


def test_mi_lower_bound():
    assert mi_lower_bound(-2.0, 2) == pytest.approx(math.log(2) + 2)
    with pytest.raises(ValueError):
        mi_lower_bound(0.0, 1)


def test_mean_offdiag_abs():
    G = np.array([[1.0, -0.5, 0.1], [-0.5, 1.0, 0.0], [0.1, 0.0, 1.0]])
    assert mean_offdiag_abs(G) == pytest.approx((0.5 + 0.1) * 2 / 6)


def test_feature_matrix_requires_unit_columns():
    with pytest.raises(ValueError):
        FeatureEmbeddingMatrix(np.ones((3, 2)))
    Z = FeatureEmbeddingMatrix(np.eye(3)[:, :2])
    assert (Z.d, Z.m) == (3, 2)
    np.testing.assert_array_equal(Z.gram(), np.eye(2))


def make_encoder(names=("a", "b", "c", "d"), seed=0):
    return EncoderState(list(names), emb_dim=6, hidden_dim=10, dropout=0.0, seed=seed)


def test_embeddings_are_unit_norm_and_consistent():
    rng = np.random.default_rng(0)
    enc = make_encoder().eval()
    X = rng.normal(size=(15, 4))
    Z = enc.feature_matrix(X, chunk=4)
    np.testing.assert_allclose(np.linalg.norm(Z.Z, axis=0), 1.0, rtol=1e-12)
    for j in range(4):
        np.testing.assert_allclose(encode_column(X[:, j], j, enc), Z.Z[:, j], rtol=1e-10, atol=1e-12)
    E = embed_sample(X[0], enc)
    assert E.shape == (4, 6)
    np.testing.assert_allclose(np.linalg.norm(E, axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(E, enc.sample_embeddings(X[:3]).data[0], rtol=1e-12)


def test_encoder_is_permutation_equivariant():
    rng = np.random.default_rng(1)
    names = ["a", "b", "c", "d"]
    X = rng.normal(size=(12, 4))
    perm = rng.permutation(4)
    Z = make_encoder(names).feature_matrix(X).Z
    Zp = make_encoder([names[i] for i in perm]).feature_matrix(X[:, perm]).Z
    np.testing.assert_allclose(Zp, Z[:, perm], atol=1e-12)


def test_encode_column_index_check():
    with pytest.raises(IndexError):
        encode_column(np.zeros(3), 9, make_encoder())


def small_data(seed=0):
    return standardize(make_synthetic(80, 5, 2, redundancy_groups=2, noise=0.2, seed=seed))[0]


def test_pretrain_is_deterministic_and_logs_each_epoch():
    d = small_data()
    cfg = PretrainConfig(epochs=4, emb_dim=6, hidden_dim=8, batch_size=32, seed=3)
    enc1, Z1, h1 = pretrain(d, cfg)
    enc2, Z2, h2 = pretrain(d, cfg)
    np.testing.assert_array_equal(Z1.Z, Z2.Z)
    assert len(h1.records) == 4
    assert h1.to_text() == h2.to_text()
    r = h1.records[-1]
    assert r.total == pytest.approx(r.infonce + cfg.redundancy_weight * r.redundancy)
    assert r.mi_lower_bound == pytest.approx(math.log(5) - r.infonce)


def test_pretrain_changes_with_seed():
    d = small_data()
    a = pretrain(d, PretrainConfig(epochs=2, emb_dim=6, hidden_dim=8, seed=0))[1].Z
    b = pretrain(d, PretrainConfig(epochs=2, emb_dim=6, hidden_dim=8, seed=1))[1].Z
    assert not np.array_equal(a, b)


def test_pretrain_lowers_objective():
    d = small_data(1)
    _, _, h = pretrain(d, PretrainConfig(epochs=60, emb_dim=8, hidden_dim=16, lr=3e-3,
                                         augment=AugmentConfig(sigma=0.05), seed=0))
    first = np.mean([r.total for r in h.records[:5]])
    last = np.mean([r.total for r in h.records[-5:]])
    assert last < first


def test_history_text_round_trip():
    d = small_data()
    _, _, h = pretrain(d, PretrainConfig(epochs=3, emb_dim=4, hidden_dim=6))
    back = PretrainHistory.from_text(h.to_text())
    assert back.to_text() == h.to_text()


def test_pretrain_wraps_numeric_failure(monkeypatch):
    def boom(*a, **k):
        raise NonFiniteError("exp", "forced")
    monkeypatch.setattr(pt, "infonce_feature_loss", boom)
    with pytest.raises(PretrainError, match="epoch 0"):
        pretrain(small_data(), PretrainConfig(epochs=2, emb_dim=4, hidden_dim=6))


@pytest.mark.parametrize("kw", [{"epochs": 0}, {"tau": 0.0}, {"redundancy_weight": -1.0}, {"batch_size": 1}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PretrainConfig(**kw)


def test_encoder_gradients():
    rng = np.random.default_rng(4)
    enc = make_encoder(("a", "b", "c"))
    cols = rng.normal(size=(3, 6))
    rep = check_gradients(lambda: redundancy_penalty(enc.column_embeddings(cols).T) +
                          infonce_feature_loss(enc.column_embeddings(cols).T,
                                               enc.column_embeddings(cols * 0.9).T, 0.5),
                          enc.parameters())
    assert rep.passed, rep.failures()
    assert isinstance(enc.column_embeddings(cols), Tensor)


def test_mi_bound_zero_point_and_rising_trend():
    assert mi_lower_bound(math.log(7), 7) == pytest.approx(0.0, abs=1e-15)
    deltas = []
    for s in range(5):
        d = standardize(make_synthetic(200, 8, 2, redundancy_groups=3, noise=0.3, seed=s))[0]
        _, _, h = pretrain(d, PretrainConfig(epochs=60, emb_dim=16, hidden_dim=32, seed=s))
        mi = [r.mi_lower_bound for r in h.records]
        deltas.append(np.mean(mi[-10:]) - np.mean(mi[:10]))
    assert np.median(deltas) > 0


@pytest.mark.parametrize("seed", range(10))
def test_value_network_is_not_constant_at_init(seed):
    enc = EncoderState(["a", "b"], emb_dim=8, hidden_dim=16, dropout=0.0, seed=seed).eval()
    u = encode_column(np.zeros(20), 0, enc)
    v = encode_column(np.ones(20), 0, enc)
    assert float(u @ v) < 1.0
    np.testing.assert_array_equal(u, encode_column(np.zeros(20), 0, enc))
