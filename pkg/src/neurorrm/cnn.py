"""Small convolutional classifier written directly in numpy.

Layout is channels-last throughout: inputs are (B, H, W, C). Convolutions
are valid (no padding), stride 1; pooling is non-overlapping and drops
remainders.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .checkpoint import load_arrays, save_arrays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CnnSpec:
    input_shape: tuple[int, int]          # (H, W) of the pooled grid
    n_classes: int
    conv_filters: tuple[int, ...] = (8, 4)
    kernel: int = 3
    pool: int = 2
    dense: tuple[int, ...] = (512, 256)
    in_channels: int = 1
    # inputs are mapped to (x - input_mean) / input_std before the first conv
    input_mean: float = 0.0
    input_std: float = 1.0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        if not self.input_std > 0:
            raise ValueError("input_std must be positive")
        h, w = self.input_shape
        for _ in self.conv_filters:
            h, w = h - self.kernel + 1, w - self.kernel + 1
            if h < 1 or w < 1:
                raise ValueError(f"input {self.input_shape} too small for the conv stack")
            h, w = h // self.pool, w // self.pool
            if h < 1 or w < 1:
                raise ValueError(f"input {self.input_shape} too small for the pooling stack")

    def layer_shapes(self) -> list[tuple[str, tuple, tuple]]:
        """(kind, input shape, output shape) for every layer."""
        out = []
        h, w = self.input_shape
        c = self.in_channels
        for f in self.conv_filters:
            oh, ow = h - self.kernel + 1, w - self.kernel + 1
            out.append(("conv", (h, w, c), (oh, ow, f)))
            ph, pw = oh // self.pool, ow // self.pool
            out.append(("pool", (oh, ow, f), (ph, pw, f)))
            h, w, c = ph, pw, f
        n = h * w * c
        for d in (*self.dense, self.n_classes):
            out.append(("dense", (n,), (d,)))
            n = d
        return out

    @property
    def flat_features(self) -> int:
        shp = [s for k, _, s in self.layer_shapes() if k == "pool"][-1]
        return int(np.prod(shp))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CnnSpec":
        return cls(tuple(d["input_shape"]), d["n_classes"], tuple(d["conv_filters"]),
                   d["kernel"], d["pool"], tuple(d["dense"]), d.get("in_channels", 1),
                   d.get("input_mean", 0.0), d.get("input_std", 1.0))


def standardized(spec: CnnSpec, x_train) -> CnnSpec:
    """Copy of ``spec`` whose input scaling is fitted to the training inputs.

    One mean and one standard deviation over all training pixels.
    """
    n = len(x_train)
    if n == 0:
        raise ValueError("empty training set")
    # two chunked passes in float64; a full float64 copy of a ds=3 set is several GB
    count, total = 0, 0.0
    for lo in range(0, n, 512):
        c = np.asarray(x_train[lo:lo + 512], dtype=np.float64)
        count += c.size
        total += c.sum()
    mean = total / count
    sq = 0.0
    for lo in range(0, n, 512):
        c = np.asarray(x_train[lo:lo + 512], dtype=np.float64) - mean
        sq += np.sum(c * c)
    std = float(np.sqrt(sq / count))
    return replace(spec, input_mean=float(mean), input_std=std if std > 0 else 1.0)


def param_count(spec: CnnSpec) -> int:
    total = 0
    for kind, i, o in spec.layer_shapes():
        if kind == "conv":
            total += o[2] * (i[2] * spec.kernel ** 2 + 1)
        elif kind == "dense":
            total += i[0] * o[0] + o[0]
    return total


def mac_count(spec: CnnSpec) -> int:
    total = 0
    for kind, i, o in spec.layer_shapes():
        if kind == "conv":
            total += o[0] * o[1] * o[2] * i[2] * spec.kernel ** 2
        elif kind == "dense":
            total += i[0] * o[0]
    return total


def param_names(spec: CnnSpec) -> list[str]:
    names = []
    for l in range(len(spec.conv_filters)):
        names += [f"conv{l}_w", f"conv{l}_b"]
    for l in range(len(spec.dense) + 1):
        names += [f"dense{l}_w", f"dense{l}_b"]
    return names


def init_params(spec: CnnSpec, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform kernels, zero biases."""
    rng = np.random.default_rng(seed)
    p = {}
    k = spec.kernel
    c = spec.in_channels
    for l, f in enumerate(spec.conv_filters):
        fan_in, fan_out = c * k * k, f * k * k
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        p[f"conv{l}_w"] = rng.uniform(-lim, lim, (k, k, c, f)).astype(np.float32)
        p[f"conv{l}_b"] = np.zeros(f, dtype=np.float32)
        c = f
    n = spec.flat_features
    for l, d in enumerate((*spec.dense, spec.n_classes)):
        lim = np.sqrt(6.0 / (n + d))
        p[f"dense{l}_w"] = rng.uniform(-lim, lim, (n, d)).astype(np.float32)
        p[f"dense{l}_b"] = np.zeros(d, dtype=np.float32)
        n = d
    return p


def weight_hash(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f4").tobytes())
    return h.hexdigest()


# --- layers ----------------------------------------------------------------------

def _conv_fwd(x, w, b):
    k = w.shape[0]
    cols = sliding_window_view(x, (k, k), axis=(1, 2))          # (B, oh, ow, C, k, k)
    B, oh, ow = cols.shape[:3]
    cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(B * oh * ow, -1)
    y = cols @ w.reshape(-1, w.shape[3]) + b
    return y.reshape(B, oh, ow, -1), cols


def _conv_bwd(gy, x_shape, cols, w, need_input_grad=True):
    k, _, c, f = w.shape
    B, oh, ow, _ = gy.shape
    g2 = gy.reshape(-1, f)
    gw = (cols.T @ g2).reshape(w.shape)
    gb = g2.sum(axis=0)
    if not need_input_grad:
        return None, gw, gb
    # input gradient = full correlation with the flipped kernel
    pad = k - 1
    gy_pad = np.pad(gy, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    w_flip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    gx, _ = _conv_fwd(gy_pad, w_flip, 0)
    assert gx.shape == tuple(x_shape)
    return gx, gw, gb


def _pool_windows(x, p):
    ph, pw = x.shape[1] // p, x.shape[2] // p
    return [x[:, i:ph * p:p, j:pw * p:p] for i in range(p) for j in range(p)]


def _pool_fwd(x, p):
    """Max over each p x p window; the window argmax is the first maximal entry
    in row-major order."""
    wins = _pool_windows(x, p)
    y = wins[0].copy()
    for v in wins[1:]:
        np.maximum(y, v, out=y)
    return y, None


def _pool_bwd(gy, x, y, p):
    gx = np.zeros(x.shape, dtype=gy.dtype)
    taken = np.zeros(y.shape, dtype=bool)
    ph, pw = y.shape[1:3]
    for idx, v in enumerate(_pool_windows(x, p)):
        hit = (v == y) & ~taken
        i, j = divmod(idx, p)
        gx[:, i:ph * p:p, j:pw * p:p] = np.where(hit, gy, 0)
        taken |= hit
    return gx


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(spec: CnnSpec, x):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float32)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 3:
        x = x[..., None]
    if x.shape[1:] != (*spec.input_shape, spec.in_channels):
        raise ValueError(f"input shape {x.shape[1:]} does not match "
                         f"{(*spec.input_shape, spec.in_channels)}")
    if spec.input_mean != 0.0 or spec.input_std != 1.0:
        x = ((x - spec.input_mean) / spec.input_std).astype(x.dtype, copy=False)
    return x


def _forward(spec, params, x, keep=False):
    cache = []
    h = x
    for l in range(len(spec.conv_filters)):
        z, cols = _conv_fwd(h, params[f"conv{l}_w"], params[f"conv{l}_b"])
        a = np.maximum(z, 0)
        pooled, _ = _pool_fwd(a, spec.pool)
        if keep:
            cache.append((h.shape, cols, a, pooled))
        h = pooled
    h = h.reshape(len(h), -1)
    n_dense = len(spec.dense) + 1
    for l in range(n_dense):
        z = h @ params[f"dense{l}_w"] + params[f"dense{l}_b"]
        if keep:
            cache.append((h, z))
        h = np.maximum(z, 0) if l < n_dense - 1 else z
    return h, cache


def cnn_logits(spec: CnnSpec, params, x) -> np.ndarray:
    return _forward(spec, params, _as_batch(spec, x))[0]


def cnn_forward(spec: CnnSpec, params, x) -> np.ndarray:
    """Class probabilities; a single (H, W) grid gives a (Z,) vector."""
    single = np.ndim(x) == 2
    probs = _softmax(cnn_logits(spec, params, x).astype(np.float64))
    return probs[0] if single else probs


def loss_and_grads(spec: CnnSpec, params, x, labels, loss: str = "cross_entropy"):
    """Mean loss over the batch and gradients for every parameter."""
    x = _as_batch(spec, x)
    labels = np.asarray(labels)
    B = len(x)
    logits, cache = _forward(spec, params, x, keep=True)
    probs = _softmax(logits.astype(np.float64))
    onehot = np.zeros_like(probs)
    onehot[np.arange(B), labels] = 1
    if loss == "cross_entropy":
        value = -np.mean(np.log(np.maximum(probs[np.arange(B), labels], 1e-300)))
        g = (probs - onehot) / B
    elif loss == "mse":
        d = probs - onehot
        value = np.mean(np.sum(d * d, axis=1))
        gp = 2 * d / B
        g = probs * (gp - np.sum(gp * probs, axis=1, keepdims=True))
    else:
        raise ValueError(f"unknown loss {loss!r}")
    g = g.astype(logits.dtype)

    grads = {}
    n_conv = len(spec.conv_filters)
    n_dense = len(spec.dense) + 1
    for l in range(n_dense - 1, -1, -1):
        h, z = cache[n_conv + l]
        if l < n_dense - 1:
            g = g * (z > 0)
        grads[f"dense{l}_w"] = h.T @ g
        grads[f"dense{l}_b"] = g.sum(axis=0)
        g = g @ params[f"dense{l}_w"].T
    for l in range(n_conv - 1, -1, -1):
        x_shape, cols, a, pooled = cache[l]
        if l == n_conv - 1:
            g = g.reshape(pooled.shape)
        g = _pool_bwd(g, a, pooled, spec.pool)
        g *= a > 0
        g, grads[f"conv{l}_w"], grads[f"conv{l}_b"] = _conv_bwd(g, x_shape, cols,
                                                                params[f"conv{l}_w"],
                                                                need_input_grad=l > 0)
    return float(value), grads


# --- training -------------------------------------------------------------------

@dataclass(frozen=True)
class SgdHyper:
    lr: float = 0.01
    momentum: float = 0.9
    nesterov: bool = True
    epochs: int = 25
    batch_size: int = 128
    seed: int = 0
    loss: str = "cross_entropy"
    patience: int = 5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.loss not in ("cross_entropy", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class CnnHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    pass


def evaluate(spec: CnnSpec, params, x, labels, loss: str = "cross_entropy",
             batch: int = 256) -> tuple[float, float]:
    """(mean loss, accuracy) over a dataset."""
    total, correct = 0.0, 0
    for lo in range(0, len(x), batch):
        xb, yb = x[lo:lo + batch], np.asarray(labels[lo:lo + batch])
        p = _softmax(cnn_logits(spec, params, xb).astype(np.float64))
        if loss == "cross_entropy":
            total += -np.sum(np.log(np.maximum(p[np.arange(len(yb)), yb], 1e-300)))
        else:
            oh = np.zeros_like(p)
            oh[np.arange(len(yb)), yb] = 1
            total += np.sum((p - oh) ** 2)
        correct += int(np.sum(np.argmax(p, axis=1) == yb))
    return total / len(x), correct / len(x)


def predict(spec: CnnSpec, params, x, batch: int = 256) -> np.ndarray:
    return np.concatenate([np.argmax(cnn_logits(spec, params, x[lo:lo + batch]), axis=1)
                           for lo in range(0, len(x), batch)])


def cnn_train(spec: CnnSpec, x_train, y_train, x_val=None, y_val=None,
              hyper: SgdHyper = SgdHyper(), params=None, progress=None):
    """SGD with (Nesterov) momentum and early stopping on validation loss.

    Returns (params, history); the parameters are those of the epoch with the
    lowest validation loss when a validation set is given.
    """
    y_train = np.asarray(y_train)
    if len(y_train) == 0:
        raise ValueError("empty training set")
    if y_train.max() >= spec.n_classes:
        raise ValueError("label exceeds class count")
    rng = np.random.default_rng(hyper.seed)
    params = {k: v.copy() for k, v in (params or init_params(spec, hyper.seed)).items()}
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    hist = CnnHistory()
    best, best_loss, bad = None, np.inf, 0
    mu, lr = hyper.momentum, hyper.lr
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(y_train))
        total = 0.0
        for lo in range(0, len(order), hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            value, grads = loss_and_grads(spec, params, x_train[idx], y_train[idx], hyper.loss)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {lo}")
            for k, g in grads.items():
                v = vel[k]
                v *= mu
                v -= lr * g
                if hyper.nesterov:
                    params[k] += mu * v - lr * g
                else:
                    params[k] += v
            total += value * len(idx)
        hist.train_loss.append(total / len(y_train))
        if x_val is not None and len(x_val):
            vl, va = evaluate(spec, params, x_val, y_val, hyper.loss)
            hist.val_loss.append(vl)
            hist.val_accuracy.append(va)
            if vl < best_loss:
                best_loss, bad, hist.best_epoch = vl, 0, epoch
                best = {k: v.copy() for k, v in params.items()}
            else:
                bad += 1
        if progress:
            progress(epoch, hist)
        log.info("epoch %d loss %.5f val %s", epoch, hist.train_loss[-1],
                 hist.val_accuracy[-1] if hist.val_accuracy else "-")
        if best is not None and bad >= hyper.patience:
            hist.stopped_early = True
            break
    return (best if best is not None else params), hist


# --- checkpoint -----------------------------------------------------------------

def save_cnn(path: str | Path, spec: CnnSpec, params, preprocess: dict | None = None,
             seed: int | None = None, manifest: dict | None = None):
    header = {"model": "cnn", "spec": spec.to_dict(), "preprocess": preprocess or {},
              "seed": seed, "manifest": manifest or {}}
    save_arrays(path, header, {k: params[k] for k in param_names(spec)})


def load_cnn(path: str | Path):
    header, arrays = load_arrays(path)
    if header.get("model") != "cnn":
        raise ValueError(f"{path}: not a CNN checkpoint")
    return CnnSpec.from_dict(header["spec"]), arrays, header
