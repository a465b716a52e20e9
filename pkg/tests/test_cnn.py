import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurorrm.cnn import (
    CnnSpec, SgdHyper, TrainingDiverged, cnn_forward, cnn_logits, cnn_train, evaluate,
    init_params, load_cnn, loss_and_grads, mac_count, param_count, param_names, predict,
    save_cnn, standardized, weight_hash,
)

# Per-layer recount for the default spec on the 120 x 213 input (ds = 3),
# written out by hand: (layer, output shape, MACs, parameters).
SPREADSHEET = [
    ("conv 3x3, 1->8", (118, 211, 8), 118 * 211 * 8 * 1 * 9, 8 * (1 * 9 + 1)),
    ("pool 2x2", (59, 105, 8), 0, 0),
    ("conv 3x3, 8->4", (57, 103, 4), 57 * 103 * 4 * 8 * 9, 4 * (8 * 9 + 1)),
    ("pool 2x2", (28, 51, 4), 0, 0),
    ("dense 5712->512", (512,), 5712 * 512, 5712 * 512 + 512),
    ("dense 512->256", (256,), 512 * 256, 512 * 256 + 256),
    ("dense 256->6", (6,), 256 * 6, 256 * 6 + 6),
]


def naive_forward(spec, params, x):
    """Direct loops: valid correlation, ReLU, max pool, dense layers, softmax."""
    h = x[:, :, None].astype(np.float64)
    for l in range(len(spec.conv_filters)):
        w, b = params[f"conv{l}_w"], params[f"conv{l}_b"]
        k, _, c, f = w.shape
        H, W = h.shape[0] - k + 1, h.shape[1] - k + 1
        z = np.zeros((H, W, f))
        for i in range(H):
            for j in range(W):
                for q in range(f):
                    acc = b[q]
                    for di in range(k):
                        for dj in range(k):
                            for ch in range(c):
                                acc += h[i + di, j + dj, ch] * w[di, dj, ch, q]
                    z[i, j, q] = max(acc, 0.0)
        p = spec.pool
        PH, PW = H // p, W // p
        h = np.array([[[z[i * p:(i + 1) * p, j * p:(j + 1) * p, q].max() for q in range(f)]
                       for j in range(PW)] for i in range(PH)])
    v = h.ravel()
    n = len(spec.dense) + 1
    for l in range(n):
        v = v @ params[f"dense{l}_w"] + params[f"dense{l}_b"]
        if l < n - 1:
            v = np.maximum(v, 0)
    e = np.exp(v - v.max())
    return e / e.sum()


def float64_params(spec, seed, bias=0.0):
    """float64 copy of the initial weights; optional random biases keep ReLUs off the kink."""
    rng = np.random.default_rng(seed + 100)
    out = {k: v.astype(np.float64) for k, v in init_params(spec, seed).items()}
    for k, v in out.items():
        if k.endswith("_b") and bias:
            v[:] = rng.uniform(0.2 * bias, bias, v.shape)
    return out


# -- counting ------------------------------------------------------------------

def test_mac_and_param_count_match_spreadsheet():
    spec = CnnSpec((120, 213), 6)
    shapes = [s for _, _, s in spec.layer_shapes()]
    assert shapes == [row[1] for row in SPREADSHEET]
    assert mac_count(spec) == sum(r[2] for r in SPREADSHEET) == 6_540_656
    assert param_count(spec) == sum(r[3] for r in SPREADSHEET) == 3_058_298
    assert param_count(spec) == sum(v.size for v in init_params(spec, 0).values())


def test_single_layer_counts():
    dense_only = CnnSpec((4, 4), 256, conv_filters=(1,), dense=(512,))
    assert dense_only.layer_shapes()[-1] == ("dense", (512,), (256,))
    assert param_count(dense_only) - param_count(CnnSpec((4, 4), 1, (1,), dense=(512,))) \
        == (512 * 256 + 256) - (512 * 1 + 1)
    one_conv = CnnSpec((5, 5), 1, conv_filters=(8,), dense=())
    assert param_count(one_conv) == 8 * (9 + 1) + (8 * 1 + 1)


def test_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        CnnSpec((4, 4), 6)                         # second conv has nothing left
    with pytest.raises(ValueError):
        CnnSpec((10, 17), 0)
    spec = CnnSpec((10, 17), 6)
    assert spec.flat_features == 8                 # ds = 36 map: 10x17 -> 1x2x4
    assert CnnSpec.from_dict(spec.to_dict()) == spec
    assert param_names(spec)[:2] == ["conv0_w", "conv0_b"]


# -- forward -------------------------------------------------------------------

def test_forward_matches_naive_loops_8x8():
    spec = CnnSpec((8, 8), 3, conv_filters=(2,), dense=(5,))
    params = float64_params(spec, 1)
    params["conv0_b"][:] = [0.05, -0.02]
    x = np.random.default_rng(0).random((8, 8))
    np.testing.assert_allclose(cnn_forward(spec, params, x), naive_forward(spec, params, x),
                               rtol=1e-12)


def test_forward_matches_naive_loops_two_conv():
    spec = CnnSpec((12, 13), 4, dense=(6,))
    params = float64_params(spec, 2)
    x = np.random.default_rng(1).random((12, 13))
    np.testing.assert_allclose(cnn_forward(spec, params, x), naive_forward(spec, params, x),
                               rtol=1e-12)


def test_zero_weights_give_uniform():
    spec = CnnSpec((10, 10), 5, dense=(4,))
    params = {k: np.zeros_like(v) for k, v in init_params(spec, 0).items()}
    np.testing.assert_allclose(cnn_forward(spec, params, np.ones((10, 10))), np.full(5, 0.2))


@given(st.integers(0, 10_000), st.floats(0.1, 50.0))
@settings(max_examples=25, deadline=None)
def test_softmax_normalised(seed, scale):
    spec = CnnSpec((10, 10), 6, dense=(8,))
    x = np.random.default_rng(seed).random((3, 10, 10)) * scale
    p = cnn_forward(spec, init_params(spec, seed % 7), x)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_shape_mismatch_raises():
    spec = CnnSpec((10, 10), 2)
    with pytest.raises(ValueError):
        cnn_logits(spec, init_params(spec, 0), np.zeros((9, 10)))


# -- gradients -------------------------------------------------------------------

def gradient_agreement(spec, params, x, y, loss, eps=1e-6, rtol=1e-3):
    _, grads = loss_and_grads(spec, params, x, y, loss)
    ok = total = 0
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = loss_and_grads(spec, params, x, y, loss)[0]
            p[idx] = old - eps
            down = loss_and_grads(spec, params, x, y, loss)[0]
            p[idx] = old
            num = (up - down) / (2 * eps)
            ana = grads[name][idx]
            total += 1
            ok += abs(ana - num) <= rtol * max(abs(num), abs(ana), 1e-7)
    return ok / total


@pytest.mark.parametrize("loss", ["cross_entropy", "mse"])
def test_gradient_tiny_spec(loss):
    spec = CnnSpec((4, 4), 3, conv_filters=(1,), dense=(4,))
    params = float64_params(spec, 3, bias=0.1)
    x = np.random.default_rng(2).random((5, 4, 4))
    assert gradient_agreement(spec, params, x, np.array([0, 1, 2, 1, 0]), loss) >= 0.95


def test_gradient_two_conv_layers():
    spec = CnnSpec((10, 10), 3, conv_filters=(2, 2), dense=(4,))
    params = float64_params(spec, 4, bias=0.05)
    x = np.random.default_rng(3).random((3, 10, 10))
    assert gradient_agreement(spec, params, x, np.array([2, 0, 1]), "cross_entropy") >= 0.95


# -- training ----------------------------------------------------------------------

def toy_images(n, seed):
    """Class 1 has a bright square in the top-left corner, class 0 in the bottom-right."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.random((n, 12, 12)).astype(np.float32) * 0.2
    x[y == 1, 1:4, 1:4] += 0.8
    x[y == 0, 8:11, 8:11] += 0.8
    return x, y


def test_separable_images_reach_full_accuracy():
    spec = CnnSpec((12, 12), 2, dense=(16, 8))
    xt, yt = toy_images(128, 0)
    xv, yv = toy_images(64, 1)
    params, hist = cnn_train(spec, xt, yt, xv, yv, SgdHyper(epochs=10, batch_size=16))
    assert max(hist.val_accuracy) == 1.0
    assert evaluate(spec, params, xv, yv)[1] == 1.0
    assert np.array_equal(predict(spec, params, xv), yv)


def test_training_is_deterministic_and_early_stops():
    spec = CnnSpec((12, 12), 2, dense=(8,))
    xt, yt = toy_images(64, 0)
    xv, yv = toy_images(16, 1)
    h = SgdHyper(epochs=3, batch_size=16, seed=5)
    a, _ = cnn_train(spec, xt, yt, xv, yv, h)
    b, _ = cnn_train(spec, xt, yt, xv, yv, h)
    assert weight_hash(a) == weight_hash(b)
    _, hist = cnn_train(spec, xt, yt, xv, yv, SgdHyper(epochs=50, batch_size=16, patience=2))
    assert hist.stopped_early or len(hist.val_loss) == 50
    assert hist.best_epoch == int(np.argmin(hist.val_loss))


def test_hyper_and_label_validation():
    with pytest.raises(ValueError):
        SgdHyper(lr=0)
    with pytest.raises(ValueError):
        SgdHyper(momentum=1.0)
    with pytest.raises(ValueError):
        SgdHyper(loss="hinge")
    spec = CnnSpec((12, 12), 2, dense=(8,))
    xt, _ = toy_images(8, 0)
    with pytest.raises(ValueError):
        cnn_train(spec, xt, np.full(8, 2))


def test_divergence_is_reported():
    spec = CnnSpec((12, 12), 2, dense=(8,))
    params = init_params(spec, 0)
    params["dense0_w"][:] = np.nan
    xt, yt = toy_images(16, 0)
    with pytest.raises(TrainingDiverged):
        cnn_train(spec, xt, yt, hyper=SgdHyper(epochs=1), params=params)


def test_checkpoint_round_trip(tmp_path):
    spec = CnnSpec((12, 12), 3, dense=(8,))
    params = init_params(spec, 7)
    save_cnn(tmp_path / "c.ckpt", spec, params, preprocess={"ds": 3}, seed=7)
    spec2, arrays, header = load_cnn(tmp_path / "c.ckpt")
    assert spec2 == spec and header["seed"] == 7
    assert weight_hash(arrays) == weight_hash(params)


def test_standardized_spec_matches_manual_scaling():
    spec = CnnSpec((12, 12), 3, dense=(8,))
    xt, _ = toy_images(40, 0)
    fitted = standardized(spec, xt)
    x64 = xt.astype(np.float64)
    assert fitted.input_mean == pytest.approx(x64.mean(), rel=1e-12)
    assert fitted.input_std == pytest.approx(x64.std(), rel=1e-9)
    params = init_params(spec, 1)
    manual = (xt - fitted.input_mean) / fitted.input_std
    np.testing.assert_allclose(cnn_forward(fitted, params, xt), cnn_forward(spec, params, manual),
                               rtol=1e-5)
    assert CnnSpec.from_dict(fitted.to_dict()) == fitted
    # evaluate and predict must scale exactly once
    y = predict(fitted, params, xt)
    assert np.array_equal(y, np.argmax(cnn_forward(spec, params, manual), axis=1))
    with pytest.raises(ValueError):
        CnnSpec((12, 12), 3, input_std=0.0)
