import math

import numpy as np
import pytest

from binsed.errors import NumericError, ValidationError
from binsed.neural.layers import (
    BatchNorm,
    BiLSTM,
    Conv2D,
    Dense,
    Dropout,
    MaxPoolFeature,
    ReLU,
    bce_grad_logits,
    bce_loss,
    bilstm_forward,
    conv2d_forward,
    lstm_forward,
    output_layer,
    sigmoid,
)
from binsed.neural.model import build_model, default_pools
from binsed.neural.optim import AdamConfig, AdamState, adam_step
from binsed.neural.train import Recording, TrainConfig, make_sequences, predict, predict_proba, train

F64 = np.float64


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def numeric_grad(f, arr, h=1e-6, max_entries=40, rng=None):
    """Central differences of scalar ``f()`` w.r.t. (a random subset of) ``arr``'s entries."""
    rng = rng or np.random.default_rng(0)
    flat = arr.reshape(-1)
    idx = np.arange(flat.size)
    if flat.size > max_entries:
        idx = rng.choice(flat.size, max_entries, replace=False)
    g = np.zeros(idx.size)
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[n] = (fp - fm) / (2 * h)
    return idx, g


def check_layer(layer, x, tol, train=True, seed=0):
    """Finite-difference check of input and parameter gradients for loss = sum(out * R)."""
    R = np.random.default_rng(42).standard_normal(layer.forward(x, train, np.random.default_rng(seed)).shape)

    def loss():
        return float(np.sum(layer.forward(x, train, np.random.default_rng(seed)) * R))

    loss()
    dx = layer.backward(R)
    idx, num = numeric_grad(loss, x)
    assert rel_err(dx.reshape(-1)[idx], num) < tol, "input gradient"
    grads = dict(layer.grads)
    for name, p in layer.params.items():
        idx, num = numeric_grad(loss, p)
        assert rel_err(grads[name].reshape(-1)[idx], num) < tol, name


def test_conv_gradients(rng):
    layer = Conv2D(2, 3, (3, 3), rng, F64)
    layer.params["b"][:] = rng.standard_normal(3)
    check_layer(layer, rng.standard_normal((2, 6, 5, 2)), 1e-4)


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((4, 5, 2))
    k = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    out = conv2d_forward(x, k, b)
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    for t in range(4):
        for l in range(5):
            ref = np.einsum("ijc,ijcf->f", xp[t:t + 3, l:l + 3], k) + b
            np.testing.assert_allclose(out[t, l], ref)


def test_batchnorm_gradients(rng):
    layer = BatchNorm(3, F64)
    layer.params["gamma"][:] = rng.uniform(0.5, 2, 3)
    layer.params["beta"][:] = rng.standard_normal(3)
    x = rng.standard_normal((2, 6, 4, 3)) * 2 + 1
    check_layer(layer, x, 1e-4, train=True)
    check_layer(layer, x, 1e-4, train=False)


def test_batchnorm_running_stats(rng):
    layer = BatchNorm(2, F64)
    x = rng.standard_normal((4, 5, 3, 2)) * 3 + 2
    layer.forward(x, train=True)
    np.testing.assert_allclose(layer.buffers["running_mean"], 0.1 * x.mean(axis=(0, 1, 2)))
    np.testing.assert_allclose(layer.buffers["running_var"], 0.9 + 0.1 * x.var(axis=(0, 1, 2)))


def test_relu_pool_dropout_gradients(rng):
    x = rng.standard_normal((2, 6, 6, 3))
    check_layer(ReLU(), x, 1e-4)
    check_layer(MaxPoolFeature(3), x, 1e-4)
    check_layer(Dropout(0.5), x, 1e-4, train=True, seed=7)


def test_dropout_inverted_scaling(rng):
    d = Dropout(0.5)
    x = np.ones((200, 200))
    y = d.forward(x, train=True, rng=rng)
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.02
    assert d.forward(x, train=False) is x


def test_bilstm_gradients(rng):
    layer = BiLSTM(4, 3, rng, F64)
    for p in layer.params.values():
        p += 0.3 * rng.standard_normal(p.shape)
    check_layer(layer, rng.standard_normal((2, 6, 4)), 1e-3)


def test_dense_gradients(rng):
    layer = Dense(5, 3, rng, F64)
    layer.params["b"][:] = rng.standard_normal(3)
    check_layer(layer, rng.standard_normal((2, 6, 5)), 1e-4)


def test_lstm_reverse_symmetry(rng):
    W, U, b = rng.standard_normal((3, 8)), rng.standard_normal((2, 8)), rng.standard_normal(8)
    x = rng.standard_normal((1, 6, 3))
    fwd, _ = lstm_forward(x[:, ::-1], W, U, b)
    bwd, _ = lstm_forward(x, W, U, b, reverse=True)
    np.testing.assert_allclose(bwd, fwd[:, ::-1])


def test_functional_bilstm_matches_layer(rng):
    layer = BiLSTM(4, 3, rng, F64)
    x = rng.standard_normal((6, 4))
    np.testing.assert_allclose(bilstm_forward(x, layer.params), layer.forward(x[None])[0])
    mask = np.zeros((6, 6))
    assert np.all(bilstm_forward(x, layer.params, mask) == 0)


def test_lstm_nonfinite_reports_frame():
    W = np.full((1, 4), np.nan)
    with pytest.raises(NumericError, match="frame 0"):
        lstm_forward(np.ones((1, 3, 1)), W, np.zeros((1, 4)), np.zeros(4))


def test_sigmoid_stable():
    x = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5
    np.testing.assert_allclose(s + sigmoid(-x), 1.0)


def test_output_layer_range(rng):
    y = output_layer(rng.standard_normal((4, 6)) * 100, rng.standard_normal((6, 2)), np.zeros(2))
    assert np.all((y >= 0) & (y <= 1))
    with pytest.raises(ValidationError):
        output_layer(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))


def test_bce_values():
    assert bce_loss(np.array([[0.5]]), np.array([[1.0]])) == pytest.approx(math.log(2))
    assert bce_loss(np.array([[0.25]]), np.array([[0.0]])) == pytest.approx(-math.log(0.75))
    assert bce_loss(np.array([[0.25]]), np.array([[1.0]])) == pytest.approx(-math.log(0.25))
    # clipping keeps the loss finite at 0/1
    assert math.isfinite(bce_loss(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]])))
    with pytest.raises(ValidationError):
        bce_loss(np.zeros((2, 2)), np.zeros((2, 3)))


def test_bce_mask_and_grad(rng):
    p = rng.uniform(0.1, 0.9, (2, 5, 3))
    y = (rng.random((2, 5, 3)) > 0.5).astype(float)
    m = np.ones((2, 5))
    m[1, 3:] = 0
    assert bce_loss(p, y, m) == pytest.approx(bce_loss(p[m.astype(bool)], y[m.astype(bool)]))
    # gradient w.r.t. logits, checked by finite differences through the sigmoid
    z = np.log(p / (1 - p))
    g = bce_grad_logits(sigmoid(z), y, m)
    _, num = numeric_grad(lambda: bce_loss(sigmoid(z), y, m), z, max_entries=z.size)
    np.testing.assert_allclose(g.reshape(-1), num, atol=1e-8)
    edge = bce_grad_logits(np.array([1e-7, 0.5]), np.array([1.0, 1.0]))
    assert edge[0] == 0.0


def test_adam_first_step():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.array([0.5, -3.0])}, AdamState(), AdamConfig())
    np.testing.assert_allclose(p["w"], [1.0 - 9.99999e-4, -2.0 + 9.999997e-4], rtol=0, atol=1e-9)


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ValidationError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


def test_default_pools():
    assert default_pools(40) == (2, 2, 2)
    assert default_pools(400) == (5, 4, 4)
    assert default_pools(60) == (2, 2, 3)
    assert np.prod(default_pools(20)) == 4
    with pytest.raises(ValidationError):
        default_pools(42)


def _toy(dropout=0.5, seed=3):
    return build_model({"mel": (20, 2), "tdoa": (5, 3)}, ("a", "b"), hidden=3, dropout=dropout,
                       filters=3, seed=seed, dtype=F64)


def test_composed_model_gradients(rng):
    model = _toy()
    vols = {"mel": rng.standard_normal((2, 6, 20, 2)), "tdoa": rng.standard_normal((2, 6, 5, 3))}
    y = (rng.random((2, 6, 2)) > 0.5).astype(float)
    mask = np.ones((2, 6))
    mask[1, 4:] = 0

    def loss():
        return bce_loss(model.forward(vols, train=True, rng=np.random.default_rng(11)), y, mask)

    probs = model.forward(vols, train=True, rng=np.random.default_rng(11))
    grads = {k: v.copy() for k, v in model.backward(probs, y, mask).items()}
    for name, p in model.params.items():
        tol = 1e-3 if name.startswith("rnn") else 1e-4
        idx, num = numeric_grad(loss, p, max_entries=15)
        if np.linalg.norm(num) < 1e-9:  # dead units (e.g. relu outputs dropped) carry no signal
            assert np.linalg.norm(grads[name].reshape(-1)[idx]) < 1e-7
            continue
        assert rel_err(grads[name].reshape(-1)[idx], num) < tol, name


def test_model_shapes_and_inputs(rng):
    model = build_model({"mel": (40, 2), "gcc": (60, 3), "acr": (400, 2)}, ("a",), hidden=4, filters=100)
    vols = {"mel": rng.standard_normal((7, 40, 2)), "gcc": rng.standard_normal((7, 60, 3)),
            "acr": rng.standard_normal((7, 400, 2))}
    model.forward(vols)
    assert model._branch_shapes == [(1, 7, 5, 100)] * 3
    assert model.forward(vols).shape == (7, 1)
    with pytest.raises(ValidationError):
        model.forward({"mel": vols["mel"]})
    with pytest.raises(ValidationError):
        model.forward({**vols, "gcc": rng.standard_normal((7, 40, 3))})


def test_state_roundtrip():
    a, b = _toy(seed=1), _toy(seed=2)
    b.load_state(a.state())
    for k, v in a.params.items():
        np.testing.assert_array_equal(v, b.params[k])


def _recording(rng, T, rid="r"):
    vols = {"mel": rng.standard_normal((T, 20, 2)), "tdoa": rng.standard_normal((T, 5, 3))}
    return Recording(rid, "c", vols, (rng.random((T, 2)) > 0.5).astype(np.uint8))


def test_sequences_pad_and_mask(rng):
    inputs, targets, mask = make_sequences([_recording(rng, 23)], 10)
    assert inputs["mel"].shape == (3, 10, 20, 2)
    assert mask.sum() == 23 and mask[2, 3:].sum() == 0
    assert np.all(inputs["mel"][2, 3:] == 0)


def test_predict_chunking_and_threshold(rng):
    model = _toy()
    rec = _recording(rng, 23)
    p = predict_proba(model, rec.volumes, seq_len=10)
    assert p.shape == (23, 2)
    # chunks are independent: the first chunk alone gives the same probabilities
    first = predict_proba(model, {k: v[:10] for k, v in rec.volumes.items()}, seq_len=10)
    np.testing.assert_allclose(p[:10], first)
    assert predict(model, rec.volumes, threshold=0.0, seq_len=10).values.all()
    assert not predict(model, rec.volumes, threshold=1.0, seq_len=10).values.any()
    with pytest.raises(ValidationError):
        predict(model, {"mel": rec.volumes["mel"]})


def test_train_improves_and_validates(rng):
    model = _toy(dropout=0.0)
    # separable toy task: class a active where mel mean is high
    recs = []
    for i in range(4):
        r = _recording(rng, 40, f"r{i}")
        y = (r.volumes["mel"].mean(axis=(1, 2)) > 0).astype(np.uint8)
        r.volumes["mel"] += 2.0 * y[:, None, None]
        r.targets = np.stack([y, 1 - y], axis=1)
        recs.append(r)
    cfg = TrainConfig(sequence_length=20, batch_size=4, max_epochs=8, patience=8, dropout=0.0, lr=1e-2)
    model, hist = train(model, recs[:3], recs[3:], cfg)
    assert hist.records[-1].loss < hist.records[0].loss
    assert 1 <= hist.best_epoch <= 8
    with pytest.raises(ValidationError):
        train(model, recs[:2], recs[1:2], cfg)
    with pytest.raises(ValidationError):
        train(model, [], recs[1:2], cfg)
