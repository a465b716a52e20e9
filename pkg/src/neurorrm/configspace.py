"""Per-beam and payload-wide configuration enumeration, constraint filtering
and the reduced class catalog used as the classifiers' output space."""
from __future__ import annotations

import csv
import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .linkbudget import CapacityTable, db_to_linear

DEFAULT_P_MAX_W = 115.0
DEFAULT_MIN_SUPPORT = 0.005


@dataclass(frozen=True, order=True)
class BeamConfig:
    power: float       # dBW
    bandwidth: float   # Hz
    capacity: float    # bps


@dataclass(frozen=True)
class PayloadConfig:
    """One payload configuration: a (power, bandwidth) choice for every beam.

    ``indices`` are the per-beam row indices into the capacity table the
    configuration was drawn from; they define the enumeration order.
    """
    indices: tuple[int, ...]
    beams: tuple[BeamConfig, ...] = field(compare=False, repr=False)

    @classmethod
    def from_indices(cls, indices: Sequence[int], table: CapacityTable) -> "PayloadConfig":
        idx = tuple(int(i) for i in indices)
        beams = tuple(BeamConfig(table[i].power_dbw, table[i].bandwidth_hz,
                                 table[i].capacity_bps) for i in idx)
        return cls(idx, beams)

    @property
    def total_power(self) -> float:
        """Linear sum in watts."""
        return sum(db_to_linear(b.power) for b in self.beams)

    @property
    def total_bandwidth(self) -> float:
        return sum(b.bandwidth for b in self.beams)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([b.capacity for b in self.beams])

    def __len__(self):
        return len(self.indices)


def enumerate_configs(B: int, table: CapacityTable) -> Iterator[PayloadConfig]:
    """All ``len(table)**B`` configurations, lexicographic in row indices."""
    if B < 1:
        raise ValueError("need at least one beam")
    for idx in itertools.product(range(len(table)), repeat=B):
        yield PayloadConfig.from_indices(idx, table)


def is_feasible(cfg: PayloadConfig, p_max: float, w_max: float) -> bool:
    return cfg.total_power <= p_max and cfg.total_bandwidth <= w_max


def default_w_max(B: int, table: CapacityTable) -> float:
    """B times the widest per-beam bandwidth: never binding."""
    return B * max(r.bandwidth_hz for r in table)


@dataclass
class ConfigSpace:
    """A set of payload configurations held as dense arrays.

    ``indices`` is (F, B) and sorted by enumeration order; ``rank`` gives each
    row's position in the full lexicographic enumeration.
    """
    table: CapacityTable
    indices: np.ndarray
    capacity: np.ndarray
    total_power: np.ndarray
    total_bandwidth: np.ndarray
    rank: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    @property
    def n_beams(self) -> int:
        return self.indices.shape[1]

    def config(self, k: int) -> PayloadConfig:
        return PayloadConfig.from_indices(self.indices[k], self.table)

    @classmethod
    def from_indices(cls, indices: np.ndarray, table: CapacityTable) -> "ConfigSpace":
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 2:
            raise ValueError("indices must be (F, B)")
        n = len(table)
        B = indices.shape[1]
        rank = np.zeros(indices.shape[0], dtype=np.int64)
        for b in range(B):
            rank = rank * n + indices[:, b]
        order = np.argsort(rank, kind="stable")
        indices, rank = indices[order], rank[order]
        cap = np.array([r.capacity_bps for r in table])
        pw = np.array([r.power_w for r in table])
        bw = np.array([r.bandwidth_hz for r in table])
        return cls(table, indices, cap[indices],
                   _row_sums(pw[indices]), _row_sums(bw[indices]), rank)

    @classmethod
    def from_configs(cls, configs: Sequence[PayloadConfig], table: CapacityTable) -> "ConfigSpace":
        return cls.from_indices(np.array([c.indices for c in configs]), table)


def _row_sums(x: np.ndarray) -> np.ndarray:
    # Left-to-right accumulation, matching PayloadConfig.total_* bit for bit.
    out = np.zeros(x.shape[0])
    for b in range(x.shape[1]):
        out = out + x[:, b]
    return out


def _product_indices(B: int, n: int) -> np.ndarray:
    grids = np.indices((n,) * B, dtype=np.int8).reshape(B, -1)
    return grids.T


def feasible_space(B: int, table: CapacityTable, p_max: float = DEFAULT_P_MAX_W,
                   w_max: float | None = None) -> ConfigSpace:
    """Every configuration satisfying the total power / bandwidth caps."""
    if B < 1:
        raise ValueError("need at least one beam")
    if w_max is None:
        w_max = default_w_max(B, table)
    idx = _product_indices(B, len(table))
    pw = np.array([r.power_w for r in table])
    bw = np.array([r.bandwidth_hz for r in table])
    ok = (_row_sums(pw[idx]) <= p_max) & (_row_sums(bw[idx]) <= w_max)
    return ConfigSpace.from_indices(idx[ok], table)


def feasible_count(B: int, table: CapacityTable, p_max: float = DEFAULT_P_MAX_W,
                   w_max: float | None = None) -> int:
    if w_max is None:
        w_max = default_w_max(B, table)
    if B <= 9:
        idx = _product_indices(B, len(table))
        pw = np.array([r.power_w for r in table])
        bw = np.array([r.bandwidth_hz for r in table])
        ok = (_row_sums(pw[idx]) <= p_max) & (_row_sums(bw[idx]) <= w_max)
        return int(ok.sum())
    return sum(1 for c in enumerate_configs(B, table) if is_feasible(c, p_max, w_max))


# --- class catalog --------------------------------------------------------

class EmptyCatalogError(ValueError):
    pass


@dataclass
class ClassCatalog:
    classes: list[PayloadConfig]
    support: list[int]

    def __len__(self):
        return len(self.classes)

    def index(self, cfg: PayloadConfig) -> int:
        return self.classes.index(cfg)

    def capacities(self) -> np.ndarray:
        """(Z, B) offered capacity per class and beam, bps."""
        return np.array([c.capacities for c in self.classes])


def reduce_classes(labels: Sequence[PayloadConfig],
                   min_support: float = DEFAULT_MIN_SUPPORT) -> ClassCatalog:
    """Keep configurations chosen by at least ``min_support`` of the samples.

    Ordered by descending support, then by enumeration order.
    """
    if not labels:
        raise ValueError("no labels to reduce")
    counts = Counter(labels)
    threshold = min_support * len(labels)
    kept = [(cfg, n) for cfg, n in counts.items() if n >= threshold]
    if not kept:
        raise EmptyCatalogError(
            f"no configuration reaches min_support={min_support} of {len(labels)} samples")
    kept.sort(key=lambda cn: (-cn[1], cn[0].indices))
    return ClassCatalog([c for c, _ in kept], [n for _, n in kept])


def save_catalog(catalog: ClassCatalog, directory, constraints: dict,
                 min_support: float, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "catalog.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "beam_id", "power_dbw", "bandwidth_hz"])
        for z, cfg in enumerate(catalog.classes):
            for b, bc in enumerate(cfg.beams):
                w.writerow([z, b + 1, repr(bc.power), repr(bc.bandwidth)])
    manifest = {
        "constraints": constraints,
        "min_support": min_support,
        "support": list(catalog.support),
        "indices": [list(c.indices) for c in catalog.classes],
    }
    if extra:
        manifest.update(extra)
    (directory / "catalog.json").write_text(json.dumps(manifest, indent=2))


def load_catalog(directory, table: CapacityTable) -> ClassCatalog:
    directory = Path(directory)
    rows: dict[int, list[tuple[float, float]]] = {}
    with open(directory / "catalog.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["class_id"]), []).append(
                (float(r["bandwidth_hz"]), float(r["power_dbw"])))
    manifest = json.loads((directory / "catalog.json").read_text())
    classes = [PayloadConfig.from_indices([table.index_of(w, p) for w, p in rows[z]], table)
               for z in sorted(rows)]
    return ClassCatalog(classes, list(manifest["support"]))
