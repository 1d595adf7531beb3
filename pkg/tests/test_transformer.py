import math

import numpy as np
import pytest

from zayan.data import make_synthetic, standardize
from zayan.numerics import ParameterSet, check_gradients, param
from zayan.pretrain import EncoderState, PretrainConfig, pretrain
from zayan.transformer import (
    ZayanModel,
    ZayanTConfig,
    ZayanTransformer,
    cross_entropy,
    finetune,
    forward,
    predict_batch,
    preservation_loss,
    total_loss,
)


def preservation_loop(H, Z):
    total = 0.0
    for i in range(H.shape[0]):
        for j in range(H.shape[1]):
            total += sum((Z[i, j, k] - H[i, j, k]) ** 2 for k in range(H.shape[2]))
    return total


def test_preservation_matches_loop():
    rng = np.random.default_rng(0)
    H, Z = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 4, 5))
    assert preservation_loss(H, Z).item() == pytest.approx(preservation_loop(H, Z), rel=1e-12)
    assert preservation_loss(np.array([[[0.0, 1.0]]]), np.array([[[1.0, 0.0]]])).item() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        preservation_loss(H, Z[:, :3])


def test_cross_entropy_reference_values():
    assert cross_entropy(np.zeros((4, 3)), [0, 1, 2, 0]).item() == pytest.approx(math.log(3))
    big = np.array([[50.0, -50.0], [-50.0, 50.0]])
    assert cross_entropy(big, [0, 1]).item() == pytest.approx(0.0, abs=1e-12)
    assert cross_entropy(np.zeros((4, 3)), [0, 1, 2, 0], "sum").item() == pytest.approx(4 * math.log(3))
    with pytest.raises(ValueError, match="label"):
        cross_entropy(np.zeros((2, 3)), [0, 3])


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
def test_total_loss_gradients(gamma):
    rng = np.random.default_rng(int(gamma * 10))
    logits = param(rng.normal(size=(4, 3)))
    H = param(rng.normal(size=(4, 2, 3)))
    Z = rng.normal(size=(4, 2, 3))
    labels = [0, 2, 1, 1]
    loss, ce, pres = total_loss(logits, labels, H, Z, gamma)
    assert loss.item() == pytest.approx(ce.item() + gamma * pres.item())
    rep = check_gradients(lambda: total_loss(logits, labels, H, Z, gamma)[0],
                          ParameterSet({"logits": logits, "h": H}))
    assert rep.passed, rep.failures()


def test_network_gradients_end_to_end():
    rng = np.random.default_rng(1)
    cfg = ZayanTConfig(num_layers=1, nhead=2, ff_dim=6, dropout=0.0)
    net = ZayanTransformer(3, 4, 2, cfg)
    z = rng.normal(size=(2, 3, 4))

    def loss():
        logits, h, _ = net(z)
        return total_loss(logits, [0, 1], h, z, 0.3)[0]

    rep = check_gradients(loss, net.parameters())
    assert rep.passed, rep.failures()


def test_config_and_shape_validation():
    with pytest.raises(ValueError):
        ZayanTConfig(num_layers=0)
    with pytest.raises(ValueError):
        ZayanTConfig(gamma=-1)
    with pytest.raises(ValueError):
        ZayanTransformer(3, 6, 2, ZayanTConfig(nhead=4))
    net = ZayanTransformer(3, 4, 2, ZayanTConfig(nhead=2))
    with pytest.raises(ValueError, match="width"):
        net(np.zeros((1, 3, 5)))


def test_outputs_are_probabilities_and_pooled_mean(tiny_trained):
    d, model = tiny_trained
    b = model.predict_batch(d.features[:10])
    np.testing.assert_allclose(b.probs.sum(axis=1), 1.0, rtol=1e-12)
    assert np.all(b.probs >= 0)
    np.testing.assert_allclose(b.pooled, b.tokens.mean(axis=1), rtol=1e-12)
    single = forward(d.features[3], model)
    np.testing.assert_allclose(single.probs, b.probs[3], rtol=1e-10)
    assert single.predicted == b.predicted[3]
    np.testing.assert_array_equal(predict_batch(d.features[:5], model).probs, model.predict_proba(d.features[:5]))
    with pytest.raises(ValueError):
        forward(d.features[:2], model)


def test_prediction_is_deterministic(tiny_trained):
    d, model = tiny_trained
    np.testing.assert_array_equal(model.predict_proba(d.features), model.predict_proba(d.features))
    # batching does not change results
    np.testing.assert_allclose(model.predict_proba(d.features, batch_size=7),
                               model.predict_proba(d.features), rtol=1e-12)


def test_trained_model_beats_chance(tiny_trained):
    d, model = tiny_trained
    assert (model.predict(d.features) == d.labels).mean() > 0.9


def separable(n=32, seed=0):
    return standardize(make_synthetic(n, 4, 2, redundancy_groups=4, noise=0.1, seed=seed, class_sep=8.0))[0]


def test_fits_separable_training_set():
    d = separable()
    enc = EncoderState(list(d.feature_names), 8, 16, 0.0, seed=0)
    Z = enc.eval().feature_matrix(d.features)
    cfg = ZayanTConfig(num_layers=1, nhead=2, ff_dim=16, dropout=0.0, gamma=0.0, lr=3e-3,
                       epochs=200, batch_size=32)
    model, hist = finetune(d, enc, Z, cfg)
    assert (model.predict(d.features) == d.labels).mean() == 1.0
    assert len(hist.ce) == 200


def test_frozen_encoder_untouched_and_finetuned_copy_moves():
    d = separable(40, 1)
    enc = EncoderState(list(d.feature_names), 8, 16, 0.0, seed=0)
    Z = enc.eval().feature_matrix(d.features)
    before = {k: v.copy() for k, v in enc.parameters().snapshot().items()}
    cfg = ZayanTConfig(num_layers=1, nhead=2, ff_dim=8, epochs=3, gamma=0.1)
    model, _ = finetune(d, enc, Z, cfg)
    assert model.encoder is enc
    for k, v in enc.parameters().snapshot().items():
        np.testing.assert_array_equal(v, before[k])
    joint, _ = finetune(d, enc, Z, ZayanTConfig(num_layers=1, nhead=2, ff_dim=8, epochs=3, finetune_encoder=True))
    for k, v in enc.parameters().snapshot().items():
        np.testing.assert_array_equal(v, before[k])
    moved = joint.encoder.parameters().snapshot()
    assert any(not np.array_equal(moved[k], before[k]) for k in before)


def test_large_gamma_keeps_tokens_closer():
    d = separable(48, 2)
    enc = EncoderState(list(d.feature_names), 8, 16, 0.0, seed=0)
    Z = enc.eval().feature_matrix(d.features)

    def displacement(gamma):
        cfg = ZayanTConfig(num_layers=1, nhead=2, ff_dim=16, dropout=0.0, gamma=gamma, lr=3e-3, epochs=40)
        model, _ = finetune(d, enc, Z, cfg)
        b = model.predict_batch(d.features)
        z = model.token_inputs(d.features).data
        return float(((b.tokens - z) ** 2).sum(axis=(1, 2)).mean())

    assert displacement(1.0) < displacement(0.0)


def test_token_source_and_pos_init_options():
    d = separable(40, 3)
    enc = EncoderState(list(d.feature_names), 8, 16, 0.0, seed=0)
    Z = enc.eval().feature_matrix(d.features)
    frozen, _ = finetune(d, enc, Z, ZayanTConfig(num_layers=1, nhead=2, ff_dim=8, epochs=2, token_source="frozen"))
    p = frozen.predict_proba(d.features)
    # identical tokens for every row give identical predictions
    np.testing.assert_allclose(p, np.broadcast_to(p[0], p.shape), rtol=1e-12)
    cfg = ZayanTConfig(num_layers=1, nhead=2, ff_dim=8, epochs=1, lr=1e-12, weight_decay=0.0, pos_init="from_z")
    fz, _ = finetune(d, enc, Z, cfg)
    np.testing.assert_allclose(fz.transformer.pos.data, Z.Z.T, atol=1e-9)


def test_early_stopping_flag():
    d = separable(40, 4)
    enc = EncoderState(list(d.feature_names), 8, 16, 0.0, seed=0)
    Z = enc.eval().feature_matrix(d.features)
    _, hist = finetune(d, enc, Z, ZayanTConfig(num_layers=1, nhead=2, ff_dim=8, epochs=50, lr=1e-12,
                                               weight_decay=0.0, patience=2, dropout=0.0))
    assert hist.stopped_early and len(hist.ce) < 50


def test_save_load_round_trip(tmp_path, tiny_trained):
    d, model = tiny_trained
    model.save(tmp_path / "m", extra={"config_hash": "abc"})
    back = ZayanModel.load(tmp_path / "m")
    np.testing.assert_array_equal(back.predict_proba(d.features), model.predict_proba(d.features))
    assert back.class_names == model.class_names
    assert back.config == model.config
    np.testing.assert_array_equal(back.scaler.mean, model.scaler.mean)
    with pytest.raises(FileNotFoundError):
        ZayanModel.load(tmp_path / "nope")


def test_finetune_checks_shapes():
    d = separable(40, 5)
    enc, Z, _ = pretrain(d, PretrainConfig(epochs=1, emb_dim=4, hidden_dim=6))
    other = EncoderState(["a", "b"], 4, 6, 0.0, seed=0)
    with pytest.raises(ValueError):
        finetune(d, other, other.feature_matrix(d.features[:, :2]), ZayanTConfig(nhead=2, epochs=1))
