"""Objective, exhaustive-search solver and labelled dataset construction."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .configspace import (DEFAULT_MIN_SUPPORT, DEFAULT_P_MAX_W, ClassCatalog, ConfigSpace,
                          PayloadConfig, default_w_max, feasible_space, load_catalog,
                          reduce_classes, save_catalog)
from .linkbudget import Beam, CapacityTable, build_capacity_table, default_beams
from .traffic import (GridStackWriter, TrafficGrid, TrafficModel, aggregate_demand,
                      generate_grid, open_grid_stack)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectiveWeights:
    """Penalty weights: per bps of mismatch, per watt, per hertz."""
    beta0: float = 1e-6
    beta1: float = 1e-2
    beta2: float = 1e-10

    def __post_init__(self):
        if min(self.beta0, self.beta1, self.beta2) < 0:
            raise ValueError("objective weights must be non-negative")
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")


def objective(cfg: PayloadConfig, demand: Sequence[float], w: ObjectiveWeights) -> float:
    demand = np.asarray(demand, dtype=float)
    if len(cfg) != demand.shape[0]:
        raise ValueError(f"config has {len(cfg)} beams, demand has {demand.shape[0]}")
    score = 0.0
    for bc, r in zip(cfg.beams, demand):
        score = score + w.beta0 * abs(bc.capacity - r)
    score = score + w.beta1 * cfg.total_power
    score = score + w.beta2 * cfg.total_bandwidth
    return score


def solve_exhaustive(demand: Sequence[float], space: ConfigSpace,
                     w: ObjectiveWeights) -> tuple[PayloadConfig, float]:
    """Global minimiser of the objective over ``space``.

    Ties go to lower total power, then lower total bandwidth, then the
    earlier configuration in enumeration order.
    """
    if len(space) == 0:
        raise ValueError("empty configuration space")
    demand = np.asarray(demand, dtype=float)
    if demand.shape[0] != space.n_beams:
        raise ValueError("demand and configuration space disagree on beam count")
    k, score = kernels.best_config(space.capacity, space.total_power, space.total_bandwidth,
                                   demand, w.beta0, w.beta1, w.beta2)
    return space.config(k), score


def solve_many(demands: np.ndarray, space: ConfigSpace,
               w: ObjectiveWeights) -> tuple[np.ndarray, np.ndarray]:
    """Row indices into ``space`` and scores for a (S, B) demand matrix."""
    if len(space) == 0:
        raise ValueError("empty configuration space")
    return kernels.best_configs(space.capacity, space.total_power, space.total_bandwidth,
                                np.asarray(demands, dtype=float), w.beta0, w.beta1, w.beta2)


@dataclass
class LabeledDataset:
    demands: np.ndarray            # (N, B) bps
    hours: np.ndarray              # (N,)
    sample_seeds: np.ndarray       # (N,)
    labels: np.ndarray             # (N,) class ids into catalog
    catalog: ClassCatalog
    train_idx: np.ndarray
    val_idx: np.ndarray
    seed: int
    model: TrafficModel
    weights: ObjectiveWeights
    p_max: float
    w_max: float
    full_scores: np.ndarray = field(repr=False)     # unrestricted optimum
    label_scores: np.ndarray = field(repr=False)    # objective of the assigned class
    beams: list[Beam] = field(default_factory=default_beams)
    grid_path: Path | None = None
    _grids: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.catalog)

    def grid(self, i: int) -> TrafficGrid:
        """Sample ``i``'s demand map, from the stored stack or regenerated."""
        if self._grids is None and self.grid_path is not None and Path(self.grid_path).exists():
            self._grids, _ = open_grid_stack(self.grid_path)
        if self._grids is not None:
            return TrafficGrid(np.asarray(self._grids[i]), int(self.hours[i]), self.model.bbox,
                               int(self.sample_seeds[i]), self.model.model_hash())
        return generate_grid(self.model, int(self.hours[i]), int(self.sample_seeds[i]))

    def split(self, name: str) -> np.ndarray:
        if name == "train":
            return self.train_idx
        if name in ("val", "validation"):
            return self.val_idx
        if name == "all":
            return np.arange(len(self))
        raise ValueError(f"unknown split {name!r}")


def sample_seed(master: int, index: int) -> int:
    return int(master) ^ int(index)


def sample_hour(seed: int) -> int:
    return int(np.random.default_rng([seed, 24]).integers(24))


def split_indices(n: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def label_demands(demands: np.ndarray, space: ConfigSpace, w: ObjectiveWeights,
                  min_support: float = DEFAULT_MIN_SUPPORT):
    """Solve every sample, prune rare optima, relabel pruned samples.

    Returns (catalog, labels, full_scores, label_scores).
    """
    best, full_scores = solve_many(demands, space, w)
    optima = [space.config(int(k)) for k in best]
    catalog = reduce_classes(optima, min_support)
    position = {cfg: z for z, cfg in enumerate(catalog.classes)}
    restricted = ConfigSpace.from_configs(catalog.classes, space.table)
    labels = np.empty(len(optima), dtype=np.int64)
    label_scores = full_scores.copy()
    dropped = [i for i, cfg in enumerate(optima) if cfg not in position]
    for i, cfg in enumerate(optima):
        if cfg in position:
            labels[i] = position[cfg]
    if dropped:
        k, s = solve_many(demands[dropped], restricted, w)
        for i, kk, ss in zip(dropped, k, s):
            labels[i] = position[restricted.config(int(kk))]
            label_scores[i] = ss
    log.info("labelled %d samples: %d distinct optima, %d kept, %d relabelled",
             len(optima), len(set(optima)), len(catalog), len(dropped))
    return catalog, labels, full_scores, label_scores


def build_dataset(model: TrafficModel, n_samples: int, seed: int,
                  p_max: float = DEFAULT_P_MAX_W, w_max: float | None = None,
                  weights: ObjectiveWeights = ObjectiveWeights(),
                  min_support: float = DEFAULT_MIN_SUPPORT,
                  beams: Sequence[Beam] | None = None,
                  table: CapacityTable | None = None,
                  grid_path=None,
                  progress: Callable[[int, int], None] | None = None,
                  on_grid: Callable[[int, TrafficGrid], None] | None = None) -> LabeledDataset:
    """Generate, aggregate and label ``n_samples`` demand maps.

    Sample ``i`` uses seed ``seed ^ i`` for both its hour and its grid, so any
    subset can be regenerated independently of the others. ``on_grid(i, grid)``
    sees every map as it is produced (e.g. to extract features without
    storing the full stack).
    """
    if n_samples < 10:
        raise ValueError("need at least 10 samples")
    beams = list(beams) if beams is not None else default_beams()
    table = table if table is not None else build_capacity_table()
    if w_max is None:
        w_max = default_w_max(len(beams), table)
    space = feasible_space(len(beams), table, p_max, w_max)
    if len(space) == 0:
        raise ValueError("no feasible configuration under the given constraints")

    seeds = np.array([sample_seed(seed, i) for i in range(n_samples)], dtype=np.int64)
    hours = np.array([sample_hour(s) for s in seeds], dtype=np.int64)
    demands = np.empty((n_samples, len(beams)))
    writer = GridStackWriter(grid_path, model.shape, model.bbox, model.model_hash()) \
        if grid_path is not None else None
    try:
        for i in range(n_samples):
            g = generate_grid(model, int(hours[i]), int(seeds[i]))
            demands[i] = aggregate_demand(g, beams)
            if writer is not None:
                writer.append(g)
            if on_grid is not None:
                on_grid(i, g)
            if progress is not None:
                progress(i + 1, n_samples)
    finally:
        if writer is not None:
            writer.close()

    catalog, labels, full_scores, label_scores = label_demands(demands, space, weights, min_support)
    train_idx, val_idx = split_indices(n_samples, seed)
    return LabeledDataset(demands, hours, seeds, labels, catalog, train_idx, val_idx, seed,
                          model, weights, p_max, w_max, full_scores, label_scores, beams,
                          Path(grid_path) if grid_path is not None else None)


def relabel(ds: LabeledDataset, p_max: float | None = None, w_max: float | None = None,
            weights: ObjectiveWeights | None = None,
            min_support: float = DEFAULT_MIN_SUPPORT,
            table: CapacityTable | None = None) -> LabeledDataset:
    """Re-run the labelling on stored demands with new constraints or weights."""
    table = table if table is not None else build_capacity_table()
    p_max = ds.p_max if p_max is None else p_max
    w_max = ds.w_max if w_max is None else w_max
    weights = ds.weights if weights is None else weights
    space = feasible_space(len(ds.beams), table, p_max, w_max)
    catalog, labels, full_scores, label_scores = label_demands(ds.demands, space, weights,
                                                               min_support)
    return LabeledDataset(ds.demands, ds.hours, ds.sample_seeds, labels, catalog, ds.train_idx,
                          ds.val_idx, ds.seed, ds.model, weights, p_max, w_max, full_scores,
                          label_scores, ds.beams, ds.grid_path)


# --- persistence --------------------------------------------------------------

def _sha(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def save_dataset(ds: LabeledDataset, directory, min_support: float = DEFAULT_MIN_SUPPORT,
                 extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    constraints = {"p_max_w": ds.p_max, "w_max_hz": ds.w_max}
    save_catalog(ds.catalog, directory, constraints, min_support)
    with open(directory / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class_id"])
        w.writerows((i, int(c)) for i, c in enumerate(ds.labels))
    with open(directory / "demand.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "hour", "seed"] + [f"beam_{b.id}_bps" for b in ds.beams])
        for i in range(len(ds)):
            w.writerow([i, int(ds.hours[i]), int(ds.sample_seeds[i])]
                       + [repr(float(x)) for x in ds.demands[i]])
    manifest = {
        "n_samples": len(ds),
        "seed": ds.seed,
        "sample_seed_rule": "master_seed XOR sample_index",
        "weights": asdict(ds.weights),
        "constraints": constraints,
        "min_support": min_support,
        "n_classes": ds.n_classes,
        "support": list(ds.catalog.support),
        "catalog": "catalog.csv",
        "train_idx": ds.train_idx.tolist(),
        "val_idx": ds.val_idx.tolist(),
        "beams": [asdict(b) for b in ds.beams],
        "model": ds.model.to_dict(),
        "model_hash": ds.model.model_hash(),
        "grids": Path(ds.grid_path).name if ds.grid_path is not None else None,
        "labels_sha256": _sha(ds.labels.astype("<i8")),
        "demand_sha256": _sha(ds.demands.astype("<f8")),
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_dataset(directory, table: CapacityTable | None = None) -> LabeledDataset:
    directory = Path(directory)
    table = table if table is not None else build_capacity_table()
    manifest = json.loads((directory / "manifest.json").read_text())
    catalog = load_catalog(directory, table)
    with open(directory / "labels.csv", newline="") as fh:
        labels = np.array([int(r["class_id"]) for r in csv.DictReader(fh)], dtype=np.int64)
    hours, seeds, demands = [], [], []
    with open(directory / "demand.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            hours.append(int(row[1]))
            seeds.append(int(row[2]))
            demands.append([float(x) for x in row[3:]])
    beams = [Beam(**b) for b in manifest["beams"]]
    model = TrafficModel.from_dict(manifest["model"])
    weights = ObjectiveWeights(**manifest["weights"])
    grid_path = directory / manifest["grids"] if manifest.get("grids") else None
    demands = np.array(demands)
    # Scores are cheap to recompute from the catalog.
    label_scores = np.array([objective(catalog.classes[c], d, weights)
                             for c, d in zip(labels, demands)])
    return LabeledDataset(demands, np.array(hours), np.array(seeds), labels, catalog,
                          np.array(manifest["train_idx"], dtype=np.int64),
                          np.array(manifest["val_idx"], dtype=np.int64),
                          manifest["seed"], model, weights,
                          manifest["constraints"]["p_max_w"], manifest["constraints"]["w_max_hz"],
                          np.full(len(labels), np.nan), label_scores, beams, grid_path)
