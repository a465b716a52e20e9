import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurorrm.encoding import SpikeRaster, load_raster, save_raster
from neurorrm.snn import (
    EncodedSet, LayeredSNN, LayerState, NeuronParams, TrainHyper, TrainingDiverged,
    accuracy, batch_output_counts, decode, forward, init_snn, layer_step, load_snn,
    loss_and_grads, predict, prepare, save_snn, spike_rate_loss, train,
)


def finite_difference_check(weights, x, labels, neuron, eps=1e-5, rtol=1e-3):
    """Fraction of weights whose relaxed-mode gradient matches central differences."""
    ws = [w.astype(np.float64) for w in weights]

    def f(wl):
        return loss_and_grads(wl, x, labels, neuron, 0.5, 0.01, relaxed=True,
                              dtype=np.float64)[0]

    _, grads = loss_and_grads(ws, x, labels, neuron, 0.5, 0.01, relaxed=True, dtype=np.float64)
    ok = total = 0
    for l, w in enumerate(ws):
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            up = f(ws)
            w[idx] = old - eps
            down = f(ws)
            w[idx] = old
            num = (up - down) / (2 * eps)
            ana = float(grads[l][idx])
            total += 1
            ok += abs(ana - num) <= rtol * max(abs(num), abs(ana), 1e-6)
    return ok / total


# -- single neuron by hand -----------------------------------------------------------

def test_strong_synapse_fires_immediately():
    st_ = LayerState.zeros(1)
    st_, out = layer_step(st_, np.array([1]), np.array([[2.0]]))
    assert out.tolist() == [1]
    assert st_.i_syn[0] == 2.0 and st_.u[0] == 2.0


def test_weak_synapse_never_fires_without_memory():
    neuron = NeuronParams(tau_syn=1, tau_mem=1)      # lam_syn = lam_mem = 0
    st_ = LayerState.zeros(1)
    for _ in range(20):
        st_, out = layer_step(st_, np.array([1]), np.array([[0.4]]), neuron)
        assert out[0] == 0 and st_.u[0] <= 0.4


def test_reset_after_spike_and_leak():
    neuron = NeuronParams()
    st_ = LayerState.zeros(1)
    seq = []
    for s in [1, 0, 0, 0]:
        st_, out = layer_step(st_, np.array([s]), np.array([[1.2]]), neuron)
        seq.append(int(out[0]))
    # t1: i=1.2, u=1.2 fires; t2: i=0.6, u=0.6 (reset); t3: i=0.3, u=0.75; t4: i=0.15, u=0.7125
    assert seq == [1, 0, 0, 0]
    assert st_.u[0] == pytest.approx(0.7125)


def test_layer_step_rejects_non_binary():
    with pytest.raises(ValueError):
        layer_step(LayerState.zeros(1), np.array([0.5]), np.array([[1.0]]))


def test_forward_matches_layer_step():
    net = init_snn(6, 3, seed=2, hidden=(5, 4), gain=2.0)
    raster = (np.random.default_rng(0).random((6, 10)) < 0.5).astype(np.uint8)
    out, _ = forward(net, raster)
    states = [LayerState.zeros(n) for n in net.sizes[1:]]
    for t in range(10):
        s = raster[:, t]
        for l, w in enumerate(net.weights):
            states[l], s = layer_step(states[l], s, w, net.neuron)
        assert np.array_equal(s, out[:, t])


# -- accounting ----------------------------------------------------------------------

def recount_synops(paths, sizes):
    """Independent recount: reload each dumped raster and weight by fan-out."""
    total = 0
    for l, p in enumerate(paths[:-1]):
        total += int(load_raster(p).spikes.sum()) * sizes[l + 1]
    return total


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_synops_equal_recount_from_dumps(seed, tmp_path):
    net = init_snn(20, 4, seed=seed, hidden=(16, 12, 8), gain=3.0)
    raster = (np.random.default_rng(seed).random((20, 8)) < 0.4).astype(np.uint8)
    _, stats, layers = forward(net, raster, keep_rasters=True)
    paths = []
    for l, r in enumerate(layers):
        p = tmp_path / f"layer{l}.srst"
        save_raster(p, SpikeRaster(r))
        paths.append(p)
    assert stats.total_spikes[1] > 0
    assert stats.synops == recount_synops(paths, net.sizes)
    assert stats.neuron_updates == (16 + 12 + 8 + 4) * 8
    assert [int(r.sum()) for r in layers] == stats.total_spikes


def test_forward_shape_errors():
    net = init_snn(5, 2, 0, hidden=(3,))
    with pytest.raises(ValueError):
        forward(net, np.zeros((4, 8), dtype=np.uint8))


def test_weight_shape_validation():
    with pytest.raises(ValueError):
        LayeredSNN((3, 2), [np.zeros((3, 2), dtype=np.float32)])
    with pytest.raises(ValueError):
        NeuronParams(tau_mem=0.5)


# -- loss, decoding ---------------------------------------------------------------------

def test_spike_rate_loss_arithmetic():
    out = np.zeros((6, 8))
    out[0] = 1
    assert spike_rate_loss(out, 0, 0.5, 0.01) == pytest.approx(0.5 * (0.25 + 5 * 0.0001))
    with pytest.raises(ValueError):
        spike_rate_loss(out, 6, 0.5, 0.01)


@given(st.lists(st.integers(0, 20), min_size=2, max_size=8))
def test_decode_invariant_to_monotone_transform(counts):
    c = np.array(counts, dtype=float)
    assert decode(c) == decode(np.exp(0.3 * c) + 2.0) == decode(c ** 3)


def test_decode_first_max_and_batch():
    assert decode(np.array([1, 3, 3])) == 1
    assert decode(np.array([[0, 2], [5, 1]])).tolist() == [1, 0]


def test_batch_counts_match_event_driven():
    net = init_snn(10, 3, seed=5, hidden=(8, 6), gain=2.5)
    rasters = (np.random.default_rng(1).random((7, 10, 8)) < 0.4).astype(np.uint8)
    counts = batch_output_counts(net, rasters, batch=3)
    wts = prepare(net)
    for i in range(7):
        out, _ = forward(net, rasters[i], prepared=wts)
        assert np.array_equal(out.sum(axis=1), counts[i])
        assert predict(net, rasters[i]) == decode(counts[i])


def test_hard_loss_matches_forward_loss():
    net = init_snn(10, 3, seed=3, hidden=(8,), gain=3.0)
    rasters = (np.random.default_rng(2).random((4, 10, 6)) < 0.5).astype(np.uint8)
    labels = np.array([0, 1, 2, 1])
    loss, _ = loss_and_grads(net.weights, rasters.transpose(0, 2, 1), labels, net.neuron,
                             0.5, 0.01, dtype=np.float64)
    want = np.mean([spike_rate_loss(forward(net, r)[0], y, 0.5, 0.01)
                    for r, y in zip(rasters, labels)])
    assert loss == pytest.approx(want, rel=1e-12)


# -- gradients ---------------------------------------------------------------------------

def test_relaxed_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = init_snn(4, 2, seed=1, hidden=(4, 4), gain=2.0)
    x = (rng.random((3, 6, 4)) < 0.5).astype(np.float64)
    assert finite_difference_check(net.weights, x, np.array([0, 1, 1]), net.neuron) >= 0.95


def test_detached_reset_differs_from_full_gradient():
    rng = np.random.default_rng(1)
    net = init_snn(4, 2, seed=2, hidden=(4,), gain=3.0)
    x = (rng.random((2, 8, 4)) < 0.6).astype(np.float32)
    _, g_full = loss_and_grads(net.weights, x, np.array([0, 1]), net.neuron, 0.5, 0.01)
    _, g_det = loss_and_grads(net.weights, x, np.array([0, 1]), net.neuron, 0.5, 0.01,
                              detach_reset=True)
    assert all(a.shape == b.shape for a, b in zip(g_full, g_det))
    assert any(not np.allclose(a, b) for a, b in zip(g_full, g_det))


# -- training -----------------------------------------------------------------------------

def toy_set(n, T=8, seed=0):
    """Class 0: input 0 always on. Class 1: input 0 silent. Input 1 is always on."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    r = np.zeros((n, 2, T), dtype=np.uint8)
    r[:, 1] = 1
    r[labels == 0, 0] = 1
    return EncodedSet(r, labels)


def test_separable_toy_reaches_full_accuracy():
    net = init_snn(2, 2, seed=0, hidden=(16, 16))
    trained, hist = train(net, toy_set(64), toy_set(32, seed=1),
                          TrainHyper(epochs=20, lr=1e-2, batch_size=16))
    assert max(hist.val_accuracy) == 1.0
    assert accuracy(trained, toy_set(32, seed=1)) == 1.0


def test_training_is_bit_deterministic():
    net = init_snn(2, 2, seed=0, hidden=(8,))
    h = TrainHyper(epochs=3, lr=1e-2, batch_size=8, seed=4)
    a, _ = train(net, toy_set(32), None, h)
    b, _ = train(net, toy_set(32), None, h)
    assert a.weight_hash() == b.weight_hash()
    assert a.weight_hash() != net.weight_hash()


def test_train_hyper_validation():
    with pytest.raises(ValueError):
        TrainHyper(rho=0.0)
    with pytest.raises(ValueError):
        TrainHyper(rho=0.5, rho_f=0.5)
    with pytest.raises(ValueError):
        TrainHyper(lr=0.0)


def test_divergence_is_reported():
    net = init_snn(2, 2, seed=0, hidden=(4,))
    net.weights[0][:] = np.nan
    with pytest.raises(TrainingDiverged):
        train(net, toy_set(8), None, TrainHyper(epochs=1))


def test_checkpoint_round_trip(tmp_path):
    net = init_snn(7, 3, seed=9, hidden=(5, 4))
    save_snn(tmp_path / "m.ckpt", net, encoder={"kind": "tem"}, seed=9)
    back, header = load_snn(tmp_path / "m.ckpt")
    assert back.weight_hash() == net.weight_hash()
    assert back.sizes == net.sizes and back.neuron == net.neuron
    assert header["encoder"] == {"kind": "tem"} and header["seed"] == 9
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"NRMC"


def test_silent_output_decodes_to_first_class():
    assert decode(np.zeros(6)) == 0
    assert decode(np.array([3, 1, 0, 0, 0, 0])) == 0
