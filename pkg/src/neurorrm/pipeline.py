"""Dataset directories: labelled samples plus cached pooled features.

A dataset directory holds the oracle output (manifest.json, labels.csv,
demand.csv, catalog.csv/json) and one ``features_ds<k>.npy`` per pooling
stride, each (S, H/k, W/k) float32.
"""
from __future__ import annotations

import hashlib
import json
import logging
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .encoding import PreprocessParams, pooled_shape, preprocess_map
from .oracle import (LabeledDataset, ObjectiveWeights, build_dataset, load_dataset,
                     save_dataset)
from .traffic import default_model

log = logging.getLogger(__name__)


def version_string() -> str:
    """Package version, with ``git describe`` appended when available."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def features_path(directory: str | Path, ds: int) -> Path:
    return Path(directory) / f"features_ds{ds}.npy"


def generate_dataset(directory: str | Path, data_cfg: dict, progress=None,
                     extra_manifest: dict | None = None) -> LabeledDataset:
    """Build, label and store a dataset together with its feature caches."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model = default_model()
    n = int(data_cfg["samples"])
    pct = float(data_cfg["percentile"])
    strides = sorted({int(k) for k in data_cfg["feature_ds"]})
    stores = {k: np.lib.format.open_memmap(features_path(directory, k), mode="w+",
                                           dtype=np.float32,
                                           shape=(n, *pooled_shape(model.shape, k)))
              for k in strides}
    params = {k: PreprocessParams(pct, k) for k in strides}

    def on_grid(i, grid):
        for k, store in stores.items():
            store[i] = preprocess_map(grid.values, params[k])

    weights = ObjectiveWeights(data_cfg["beta0"], data_cfg["beta1"], data_cfg["beta2"])
    grid_path = directory / "grids.f32" if data_cfg.get("store_grids") else None
    ds = build_dataset(model, n, int(data_cfg["seed"]), p_max=float(data_cfg["p_max_w"]),
                       w_max=data_cfg["w_max_hz"], weights=weights,
                       min_support=float(data_cfg["min_support"]), grid_path=grid_path,
                       progress=progress, on_grid=on_grid)
    for store in stores.values():
        store.flush()
    del stores
    extra = {"version": version_string(), "percentile": pct,
             "features": {str(k): {"file": features_path(directory, k).name,
                                   "sha256": file_sha256(features_path(directory, k))}
                          for k in strides}}
    if extra_manifest:
        extra.update(extra_manifest)
    save_dataset(ds, directory, float(data_cfg["min_support"]), extra=extra)
    return ds


def read_manifest(directory: str | Path) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text())


def load_features(directory: str | Path, ds: int, percentile: float | None = None,
                  dataset: LabeledDataset | None = None) -> np.ndarray:
    """(S, H', W') features for stride ``ds``; computed and cached if missing."""
    path = features_path(directory, ds)
    if path.exists():
        return np.load(path, mmap_mode="r")
    manifest = read_manifest(directory)
    pct = float(percentile if percentile is not None else manifest.get("percentile", 99.0))
    dataset = dataset if dataset is not None else load_dataset(directory)
    log.info("computing ds=%d features for %d samples", ds, len(dataset))
    params = PreprocessParams(pct, ds)
    first = preprocess_map(dataset.grid(0).values, params)
    out = np.lib.format.open_memmap(path, mode="w+", dtype=np.float32,
                                    shape=(len(dataset), *first.shape))
    out[0] = first
    for i in range(1, len(dataset)):
        out[i] = preprocess_map(dataset.grid(i).values, params)
    out.flush()
    del out
    manifest.setdefault("features", {})[str(ds)] = {"file": path.name,
                                                    "sha256": file_sha256(path)}
    (Path(directory) / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return np.load(path, mmap_mode="r")


def write_manifest(directory: str | Path, key: str, payload: dict):
    """Record an output in ``directory/manifest.json`` (merging with earlier ones)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["version"] = version_string()
    manifest.setdefault("outputs", {})[key] = payload
    path.write_text(json.dumps(manifest, indent=1, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")
