"""Grid preprocessing and spike encoders (Bernoulli rate code and TEM)."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .traffic import TrafficGrid


@dataclass(frozen=True)
class PreprocessParams:
    percentile: float = 99.0
    ds: int = 32

    def __post_init__(self):
        if not 0 < self.percentile <= 100:
            raise ValueError("percentile must be in (0, 100]")
        if int(self.ds) != self.ds or self.ds < 1:
            raise ValueError("ds must be a positive integer")


@dataclass(frozen=True)
class TemParams:
    alpha_u: float = 0.25
    alpha_v: float = 0.25
    threshold: float = 1.0
    replicas: int = 1
    # replica r uses alpha * replica_ratio**r for both decays
    replica_ratio: float = 0.5

    def __post_init__(self):
        if not (0 < self.alpha_u < 1 and 0 < self.alpha_v < 1):
            raise ValueError("alpha_u and alpha_v must lie strictly between 0 and 1")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not 0 < self.replica_ratio <= 1:
            raise ValueError("replica_ratio must be in (0, 1]")

    def decays(self) -> tuple[np.ndarray, np.ndarray]:
        g = self.replica_ratio ** np.arange(self.replicas)
        return self.alpha_u * g, self.alpha_v * g


@dataclass
class SpikeRaster:
    spikes: np.ndarray          # (N, T) uint8 in {0, 1}
    encoder: str = ""
    params: dict | None = None

    def __post_init__(self):
        s = np.asarray(self.spikes)
        if s.ndim != 2:
            raise ValueError("raster must be 2-D (neurons x steps)")
        if s.size and not np.isin(s, (0, 1)).all():
            raise ValueError("raster entries must be 0 or 1")
        self.spikes = s.astype(np.uint8, copy=False)

    @property
    def n_neurons(self) -> int:
        return self.spikes.shape[0]

    @property
    def steps(self) -> int:
        return self.spikes.shape[1]

    def count(self) -> int:
        return int(self.spikes.sum())


# --- preprocessing ------------------------------------------------------------

def pooled_shape(shape: tuple[int, int], ds: int) -> tuple[int, int]:
    return shape[0] // ds, shape[1] // ds


def _max_pool(a: np.ndarray, ds: int) -> np.ndarray:
    """Non-overlapping ds x ds max pool over the last two axes, remainders dropped."""
    m, n = a.shape[-2] // ds, a.shape[-1] // ds
    a = a[..., :m * ds, :n * ds]
    a = a.reshape(a.shape[:-2] + (m, ds, n, ds))
    return a.max(axis=(-3, -1))


def preprocess_map(values: np.ndarray, params: PreprocessParams) -> np.ndarray:
    """Clip, normalise and pool one (m, n) map; returns the 2-D pooled map."""
    v = np.asarray(values, dtype=np.float64)
    if params.ds > min(v.shape):
        raise ValueError(f"ds={params.ds} exceeds grid shape {v.shape}")
    r_p = np.percentile(v, params.percentile)
    v = np.minimum(v, r_p)
    top = v.max()
    if top > 0:
        v = v / top
    else:
        v = np.zeros_like(v)
    return _max_pool(v, params.ds)


def preprocess(grid: TrafficGrid | np.ndarray, params: PreprocessParams = PreprocessParams()
               ) -> np.ndarray:
    """Feature vector in [0, 1], row-major flattened."""
    values = grid.values if isinstance(grid, TrafficGrid) else grid
    return preprocess_map(values, params).ravel()


def preprocess_many(grids, params: PreprocessParams, flatten: bool = True) -> np.ndarray:
    """Stack of (m, n) maps -> (S, features) float32, or (S, m', n') if not flattened."""
    out = None
    for i, g in enumerate(grids):
        f = preprocess_map(g.values if isinstance(g, TrafficGrid) else g, params)
        if out is None:
            out = np.empty((len(grids),) + f.shape, dtype=np.float32)
        out[i] = f
    if out is None:
        raise ValueError("no grids given")
    return out.reshape(len(out), -1) if flatten else out


# --- encoders -------------------------------------------------------------------

def _check_unit(x: np.ndarray):
    if x.size and (np.isnan(x).any() or x.min() < 0 or x.max() > 1):
        raise ValueError("encoder inputs must lie in [0, 1]")


def rate_encode(x: Sequence[float], T: int, seed: int) -> SpikeRaster:
    """Independent Bernoulli(x_i) spike per step."""
    x = np.asarray(x, dtype=np.float64).ravel()
    _check_unit(x)
    if T < 1:
        raise ValueError("T must be >= 1")
    u = np.random.default_rng(seed).random((x.shape[0], T))
    return SpikeRaster((u < x[:, None]).astype(np.uint8), "rate", {"T": T, "seed": seed})


def rate_encode_batch(X: np.ndarray, T: int, seeds: Sequence[int]) -> np.ndarray:
    """(S, N) -> (S, N, T) uint8, sample i drawn with ``seeds[i]``."""
    X = np.asarray(X, dtype=np.float64)
    _check_unit(X)
    out = np.empty(X.shape + (T,), dtype=np.uint8)
    for i, s in enumerate(seeds):
        u = np.random.default_rng(int(s)).random((X.shape[1], T))
        out[i] = u < X[i][:, None]
    return out


def tem_encode(x: Sequence[float], T: int, params: TemParams = TemParams()) -> SpikeRaster:
    """Deterministic integrate-and-fire encoding of a held-constant input.

    Output rows are ordered input-major: row ``i * replicas + r``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    spikes = tem_encode_batch(x[None, :], T, params)[0]
    return SpikeRaster(spikes, "tem", {"T": T, **asdict(params)})


def tem_encode_batch(X: np.ndarray, T: int, params: TemParams = TemParams()) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _check_unit(X)
    if T < 1:
        raise ValueError("T must be >= 1")
    au, av = params.decays()
    return kernels.tem_encode_batch(X, T, au, av, params.threshold)


@dataclass(frozen=True)
class EncoderSpec:
    """Which encoder to use and with what settings."""
    kind: str = "tem"                 # "tem" or "rate"
    T: int = 8
    tem: TemParams = TemParams()

    def __post_init__(self):
        if self.kind not in ("tem", "rate"):
            raise ValueError(f"unknown encoder {self.kind!r}")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    def rows(self, n_features: int) -> int:
        return n_features * (self.tem.replicas if self.kind == "tem" else 1)

    def encode(self, X: np.ndarray, seeds: Sequence[int] | None = None) -> np.ndarray:
        """(S, N) features -> (S, rows, T) uint8 rasters."""
        if self.kind == "tem":
            return tem_encode_batch(X, self.T, self.tem)
        if seeds is None:
            raise ValueError("rate encoding needs per-sample seeds")
        return rate_encode_batch(X, self.T, seeds)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T, "tem": asdict(self.tem)}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(d["kind"], int(d["T"]), TemParams(**d.get("tem", {})))


# --- raster dump ------------------------------------------------------------------

_MAGIC = b"SRST"


def save_raster(path: str | Path, raster: SpikeRaster):
    """Packed-bit dump: magic, u32 header length, JSON header, row-major bits."""
    header = json.dumps({"N": raster.n_neurons, "T": raster.steps,
                         "encoder": raster.encoder, "params": raster.params or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(np.packbits(raster.spikes.ravel()).tobytes())


def load_raster(path: str | Path) -> SpikeRaster:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a raster file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        bits = np.frombuffer(f.read(), dtype=np.uint8)
    N, T = header["N"], header["T"]
    spikes = np.unpackbits(bits, count=N * T).reshape(N, T)
    return SpikeRaster(spikes, header["encoder"], header["params"])
