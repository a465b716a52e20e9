"""Layered spiking classifier: LIF dynamics, surrogate-gradient BPTT, Adam.

Neuron recursion per layer (all state starts at zero):

    i_t = lam_syn * i_{t-1} + W s_t
    u_t = lam_mem * u_{t-1} * (1 - o_{t-1}) + i_t
    o_t = H(u_t - threshold)            H(0) = 1

with lam = 1 - 1/tau. Training backpropagates through the whole recursion,
replacing dH/du by exp(-|u - threshold| / a) / a.
"""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .checkpoint import load_arrays, save_arrays

log = logging.getLogger(__name__)

HIDDEN_SIZES = (512, 256, 512)


@dataclass(frozen=True)
class NeuronParams:
    tau_syn: float = 2.0
    tau_mem: float = 4.0
    threshold: float = 1.0
    surrogate_width: float = 1.0

    def __post_init__(self):
        if self.tau_syn < 1 or self.tau_mem < 1:
            raise ValueError("time constants must be >= 1 step")
        if self.threshold <= 0 or self.surrogate_width <= 0:
            raise ValueError("threshold and surrogate width must be positive")

    @property
    def lam_syn(self) -> float:
        return 1.0 - 1.0 / self.tau_syn

    @property
    def lam_mem(self) -> float:
        return 1.0 - 1.0 / self.tau_mem


@dataclass
class LayeredSNN:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]             # weights[l] is (sizes[l+1], sizes[l]) float32
    neuron: NeuronParams = NeuronParams()

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.weights) != len(self.sizes) - 1:
            raise ValueError("need one weight matrix per layer transition")
        for l, w in enumerate(self.weights):
            if w.shape != (self.sizes[l + 1], self.sizes[l]):
                raise ValueError(f"layer {l}: weight shape {w.shape}, expected "
                                 f"{(self.sizes[l + 1], self.sizes[l])}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def weight_hash(self) -> str:
        h = hashlib.sha256()
        for w in self.weights:
            h.update(np.ascontiguousarray(w, dtype="<f4").tobytes())
        return h.hexdigest()

    def copy(self) -> "LayeredSNN":
        return LayeredSNN(self.sizes, [w.copy() for w in self.weights], self.neuron)


def init_snn(n_in: int, n_classes: int, seed: int, hidden: Sequence[int] = HIDDEN_SIZES,
             neuron: NeuronParams = NeuronParams(), gain: float = 1.0) -> LayeredSNN:
    """Fan-in scaled uniform init: U(-g*sqrt(3/N_in), g*sqrt(3/N_in)) * threshold."""
    sizes = (n_in, *hidden, n_classes)
    rng = np.random.default_rng(seed)
    ws = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lim = gain * np.sqrt(3.0 / a) * neuron.threshold
        ws.append(rng.uniform(-lim, lim, size=(b, a)).astype(np.float32))
    return LayeredSNN(sizes, ws, neuron)


@dataclass
class RunStats:
    spikes: list[np.ndarray]     # per layer (input first), (T,) spike counts per step
    synops: int
    neuron_updates: int
    wall_clock: float

    @property
    def total_spikes(self) -> list[int]:
        return [int(s.sum()) for s in self.spikes]


@dataclass
class LayerState:
    i_syn: np.ndarray
    u: np.ndarray
    s_prev: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "LayerState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))


def layer_step(state: LayerState, in_spikes: np.ndarray, weights: np.ndarray,
               neuron: NeuronParams = NeuronParams()) -> tuple[LayerState, np.ndarray]:
    """Advance one layer by one step. ``weights`` is (N_out, N_in)."""
    s_in = np.asarray(in_spikes)
    if not np.isin(s_in, (0, 1)).all():
        raise ValueError("layer inputs must be binary")
    drive = np.asarray(weights, dtype=np.float64) @ s_in.astype(np.float64)
    state.i_syn = neuron.lam_syn * state.i_syn + drive
    state.u = neuron.lam_mem * state.u * (1.0 - state.s_prev) + state.i_syn
    out = (state.u >= neuron.threshold).astype(np.uint8)
    state.s_prev = out.astype(np.float64)
    return state, out


def synop_count(rasters: Sequence[np.ndarray], sizes: Sequence[int]) -> int:
    """Spikes of every non-output layer times the next layer's width."""
    return int(sum(int(r.sum()) * sizes[l + 1] for l, r in enumerate(rasters[:-1])))


def forward(net: LayeredSNN, raster: np.ndarray, keep_rasters: bool = False,
            prepared: list[np.ndarray] | None = None):
    """Event-driven forward pass of one example.

    ``raster`` is (N_in, T) binary. Returns the (Z, T) output raster and
    RunStats; with ``keep_rasters`` also the list of all layer rasters.
    """
    spikes = np.asarray(raster)
    if spikes.ndim != 2 or spikes.shape[0] != net.sizes[0]:
        raise ValueError(f"raster shape {spikes.shape} does not match input width {net.sizes[0]}")
    t0 = time.perf_counter()
    p = net.neuron
    wts = prepared if prepared is not None else prepare(net)
    layers = [np.ascontiguousarray(spikes, dtype=np.uint8)]
    for wt in wts:
        out = kernels.lif_layer(wt, layers[-1], p.lam_syn, p.lam_mem, p.threshold)
        assert out.max(initial=0) <= 1
        layers.append(out)
    T = spikes.shape[1]
    stats = RunStats(spikes=[r.sum(axis=0) for r in layers],
                     synops=synop_count(layers, net.sizes),
                     neuron_updates=sum(net.sizes[1:]) * T,
                     wall_clock=time.perf_counter() - t0)
    if keep_rasters:
        return layers[-1], stats, layers
    return layers[-1], stats


def prepare(net: LayeredSNN) -> list[np.ndarray]:
    """Transposed float64 weights in the layout the forward kernel wants.

    Pass the result to ``forward(..., prepared=...)`` when running many
    examples through an unchanged network.
    """
    return [np.ascontiguousarray(w.T, dtype=np.float64) for w in net.weights]


def spike_rate_loss(out: np.ndarray, label: int, rho: float, rho_f: float) -> float:
    """0.5 * sum_k (rate_k - target_k)^2 for one (Z, T) output raster."""
    out = np.asarray(out, dtype=np.float64)
    Z, T = out.shape
    if not 0 <= label < Z:
        raise ValueError("label out of range")
    target = np.full(Z, rho_f)
    target[label] = rho
    rate = out.sum(axis=1) / T
    return float(0.5 * np.sum((rate - target) ** 2))


def decode(counts: np.ndarray) -> np.ndarray | int:
    """Index of the largest count; first maximum wins."""
    counts = np.asarray(counts)
    k = np.argmax(counts, axis=-1)
    return int(k) if np.ndim(k) == 0 else k


def predict(net: LayeredSNN, raster: np.ndarray) -> int:
    out, _ = forward(net, raster)
    return decode(out.sum(axis=1))


# --- batched dense simulation (training and bulk evaluation) -------------------

def _simulate(weights, x, neuron: NeuronParams, relaxed: bool, dtype):
    """x: (B, T, N_in). Returns per-layer lists of inputs, u, s."""
    lam_s, lam_m, th, a = neuron.lam_syn, neuron.lam_mem, neuron.threshold, neuron.surrogate_width
    B, T, _ = x.shape
    ins, us, ss = [], [], []
    s_in = x.astype(dtype, copy=False)
    for w in weights:
        n_out = w.shape[0]
        drive = (s_in.reshape(B * T, -1) @ w.T.astype(dtype, copy=False)).reshape(B, T, n_out)
        u_all = np.empty((B, T, n_out), dtype=dtype)
        s_all = np.empty((B, T, n_out), dtype=dtype)
        i_syn = np.zeros((B, n_out), dtype=dtype)
        u = np.zeros((B, n_out), dtype=dtype)
        s = np.zeros((B, n_out), dtype=dtype)
        for t in range(T):
            i_syn = lam_s * i_syn + drive[:, t]
            u = lam_m * u * (1 - s) + i_syn
            if relaxed:
                s = 1.0 / (1.0 + np.exp(-(u - th) / a))
            else:
                s = (u >= th).astype(dtype)
            u_all[:, t] = u
            s_all[:, t] = s
        ins.append(s_in)
        us.append(u_all)
        ss.append(s_all)
        s_in = s_all
    return ins, us, ss


def batch_output_counts(net: LayeredSNN, rasters: np.ndarray, batch: int = 256) -> np.ndarray:
    """(S, N_in, T) rasters -> (S, Z) output spike counts, dense float64 simulation."""
    out = np.empty((len(rasters), net.sizes[-1]))
    for lo in range(0, len(rasters), batch):
        x = np.asarray(rasters[lo:lo + batch]).transpose(0, 2, 1)
        _, _, ss = _simulate(net.weights, x, net.neuron, False, np.float64)
        out[lo:lo + batch] = ss[-1].sum(axis=1)
    return out


def _targets(labels, Z, rho, rho_f, dtype):
    tgt = np.full((len(labels), Z), rho_f, dtype=dtype)
    tgt[np.arange(len(labels)), labels] = rho
    return tgt


def loss_and_grads(weights, x, labels, neuron: NeuronParams, rho: float, rho_f: float,
                   relaxed: bool = False, detach_reset: bool = False, dtype=np.float32):
    """Mean spike-rate loss over the batch and its gradient for every weight.

    ``x`` is (B, T, N_in). Full BPTT, including the reset path unless
    ``detach_reset``. In relaxed mode the sigmoid replaces the step in both
    passes, which makes the loss smooth and the gradient exact.
    """
    th, a = neuron.threshold, neuron.surrogate_width
    lam_s, lam_m = neuron.lam_syn, neuron.lam_mem
    ins, us, ss = _simulate(weights, x, neuron, relaxed, dtype)
    B, T, Z = ss[-1].shape
    rate = ss[-1].sum(axis=1) / T
    err = rate - _targets(labels, Z, rho, rho_f, dtype)
    loss = float(0.5 * np.sum(err.astype(np.float64) ** 2) / B)

    g_out = np.broadcast_to((err / (T * B))[:, None, :], (B, T, Z)).astype(dtype)
    grads = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        u, s = us[l], ss[l]
        if relaxed:
            h = s * (1 - s) / a
        else:
            h = np.exp(-np.abs(u - th) / a) / a
        n = u.shape[2]
        g_drive = np.empty_like(u)
        gu_next = np.zeros((B, n), dtype=dtype)
        gi_next = np.zeros((B, n), dtype=dtype)
        for t in range(T - 1, -1, -1):
            gs = g_out[:, t]
            if not detach_reset and t + 1 < T:
                gs = gs - lam_m * gu_next * u[:, t]
            gu = gs * h[:, t]
            if t + 1 < T:
                gu = gu + lam_m * gu_next * (1 - s[:, t])
            gi = gu + lam_s * gi_next
            g_drive[:, t] = gi
            gu_next, gi_next = gu, gi
        gd = g_drive.reshape(B * T, n)
        grads[l] = (gd.T @ ins[l].reshape(B * T, -1)).astype(np.float32)
        if l > 0:
            g_out = (gd @ weights[l].astype(dtype, copy=False)).reshape(B, T, -1)
    return loss, grads


# --- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainHyper:
    rho: float = 0.5
    rho_f: float = 0.01
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    detach_reset: bool = False
    restore_best: bool = True

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError("rho must be in (0, 1]")
        if not 0 <= self.rho_f < self.rho:
            raise ValueError("rho_f must satisfy 0 <= rho_f < rho")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")


@dataclass
class EncodedSet:
    rasters: np.ndarray     # (S, N_in, T) uint8
    labels: np.ndarray      # (S,)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.rasters) != len(self.labels):
            raise ValueError("rasters and labels differ in length")

    def __len__(self):
        return len(self.labels)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    pass


class _Adam:
    def __init__(self, params, h: TrainHyper):
        self.h = h
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        h = self.h
        self.t += 1
        c1 = 1 - h.beta1 ** self.t
        c2 = 1 - h.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= h.beta1
            m += (1 - h.beta1) * g
            v *= h.beta2
            v += (1 - h.beta2) * g * g
            p -= (h.lr * (m / c1) / (np.sqrt(v / c2) + h.eps)).astype(p.dtype)


def accuracy(net: LayeredSNN, data: EncodedSet) -> float:
    if len(data) == 0:
        return float("nan")
    pred = decode(batch_output_counts(net, data.rasters))
    return float(np.mean(pred == data.labels))


def train(net: LayeredSNN, train_set: EncodedSet, val_set: EncodedSet | None,
          hyper: TrainHyper = TrainHyper(), progress=None) -> tuple[LayeredSNN, History]:
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.labels.max() >= net.sizes[-1]:
        raise ValueError("label exceeds output width")
    rng = np.random.default_rng(hyper.seed)
    net = net.copy()
    opt = _Adam(net.weights, hyper)
    hist = History()
    best, best_acc = None, -1.0
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(train_set))
        total = 0.0
        for lo in range(0, len(order), hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            x = train_set.rasters[idx].transpose(0, 2, 1)
            loss, grads = loss_and_grads(net.weights, x, train_set.labels[idx], net.neuron,
                                         hyper.rho, hyper.rho_f,
                                         detach_reset=hyper.detach_reset)
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
                raise TrainingDiverged(f"non-finite loss/gradient at epoch {epoch}, "
                                       f"batch starting {lo} (loss={loss})")
            opt.step(net.weights, grads)
            total += loss * len(idx)
        hist.train_loss.append(total / len(train_set))
        if val_set is not None and len(val_set):
            acc = accuracy(net, val_set)
            hist.val_accuracy.append(acc)
            if acc > best_acc:
                best_acc, best, hist.best_epoch = acc, net.copy(), epoch
        if progress:
            progress(epoch, hist)
        log.info("epoch %d loss %.5f val %s", epoch, hist.train_loss[-1],
                 hist.val_accuracy[-1] if hist.val_accuracy else "-")
    if hyper.restore_best and best is not None:
        net = best
    return net, hist


# --- checkpoint ------------------------------------------------------------------

def save_snn(path: str | Path, net: LayeredSNN, encoder: dict | None = None,
             preprocess: dict | None = None, seed: int | None = None,
             manifest: dict | None = None):
    header = {"model": "snn", "sizes": list(net.sizes), "neuron": asdict(net.neuron),
              "encoder": encoder or {}, "preprocess": preprocess or {}, "seed": seed,
              "manifest": manifest or {}}
    save_arrays(path, header, {f"w{l}": w for l, w in enumerate(net.weights)})


def load_snn(path: str | Path) -> tuple[LayeredSNN, dict]:
    header, arrays = load_arrays(path)
    if header.get("model") != "snn":
        raise ValueError(f"{path}: not an SNN checkpoint")
    ws = [arrays[f"w{l}"] for l in range(len(header["sizes"]) - 1)]
    return LayeredSNN(tuple(header["sizes"]), ws, NeuronParams(**header["neuron"])), header
