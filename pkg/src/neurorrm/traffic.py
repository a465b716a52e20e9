"""Synthetic spatio-temporal traffic demand over the service area.

Three source families are superposed on a latitude x longitude grid:
population hotspots (isotropic Gaussians), aeronautical routes and maritime
lanes (Gaussian tubes around great-circle arcs). Each family follows its
own 24-hour profile, so the shape of the map, not only its level, changes
over the day. Per-sample variability comes from a log-normal amplitude
jitter per source and a log-normal per-cell noise.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .linkbudget import Beam

BBox = tuple[float, float, float, float]   # lat_min, lat_max, lon_min, lon_max


@dataclass(frozen=True)
class Hotspot:
    lat: float
    lon: float
    peak_mbps: float
    sigma_deg: float


@dataclass(frozen=True)
class Route:
    """Great-circle arc with a Gaussian cross-section."""
    lat1: float
    lon1: float
    lat2: float
    lon2: float
    intensity_mbps: float
    width_deg: float


@dataclass(frozen=True)
class TrafficModel:
    hotspots: tuple[Hotspot, ...] = ()
    aero_routes: tuple[Route, ...] = ()
    maritime_lanes: tuple[Route, ...] = ()
    diurnal_population: tuple[float, ...] = (1.0,) * 24
    diurnal_aero: tuple[float, ...] = (1.0,) * 24
    diurnal_maritime: tuple[float, ...] = (1.0,) * 24
    noise_sigma: float = 0.2
    amplitude_jitter: float = 0.0
    shape: tuple[int, int] = (360, 640)
    bbox: BBox = (35.0, 60.0, -10.0, 20.0)

    def __post_init__(self):
        for prof in (self.diurnal_population, self.diurnal_aero, self.diurnal_maritime):
            if len(prof) != 24 or min(prof) < 0:
                raise ValueError("diurnal profiles need 24 non-negative multipliers")
        for h in self.hotspots:
            if h.peak_mbps < 0 or h.sigma_deg <= 0:
                raise ValueError("hotspot intensity must be >= 0 and sigma > 0")
        for r in self.aero_routes + self.maritime_lanes:
            if r.intensity_mbps < 0 or r.width_deg <= 0:
                raise ValueError("route intensity must be >= 0 and width > 0")
        if self.noise_sigma < 0 or self.amplitude_jitter < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def n_sources(self) -> int:
        return len(self.hotspots) + len(self.aero_routes) + len(self.maritime_lanes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficModel":
        d = dict(d)
        d["hotspots"] = tuple(Hotspot(**h) for h in d.get("hotspots", ()))
        d["aero_routes"] = tuple(Route(**r) for r in d.get("aero_routes", ()))
        d["maritime_lanes"] = tuple(Route(**r) for r in d.get("maritime_lanes", ()))
        for k in ("diurnal_population", "diurnal_aero", "diurnal_maritime", "shape", "bbox"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def model_hash(self) -> str:
        return _model_hash(self)


@lru_cache(maxsize=16)
def _model_hash(model: TrafficModel) -> str:
    blob = json.dumps(model.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrafficGrid:
    values: np.ndarray          # (m, n) Mbps, row 0 = southernmost latitude
    hour: int
    bbox: BBox
    seed: int | None = None
    model_hash: str = ""

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("traffic grid must be 2-D")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return cell_centers(self.values.shape, self.bbox)


def cell_centers(shape, bbox) -> tuple[np.ndarray, np.ndarray]:
    m, n = shape
    lat0, lat1, lon0, lon1 = bbox
    lats = lat0 + (np.arange(m) + 0.5) * (lat1 - lat0) / m
    lons = lon0 + (np.arange(n) + 0.5) * (lon1 - lon0) / n
    return lats, lons


# --- default European scenario --------------------------------------------

_CITIES = (
    # lat, lon, peak Mbps/cell, sigma deg
    (51.51, -0.13, 0.42, 0.55),    # London
    (48.86, 2.35, 0.40, 0.55),     # Paris
    (40.42, -3.70, 0.34, 0.50),    # Madrid
    (41.39, 2.17, 0.26, 0.45),     # Barcelona
    (38.72, -9.14, 0.20, 0.45),    # Lisbon
    (45.46, 9.19, 0.30, 0.50),     # Milan
    (41.90, 12.50, 0.30, 0.50),    # Rome
    (40.85, 14.27, 0.20, 0.40),    # Naples
    (52.52, 13.40, 0.32, 0.50),    # Berlin
    (48.14, 11.58, 0.26, 0.45),    # Munich
    (53.55, 9.99, 0.22, 0.45),     # Hamburg
    (50.11, 8.68, 0.22, 0.45),     # Frankfurt
    (52.37, 4.90, 0.24, 0.45),     # Amsterdam
    (50.85, 4.35, 0.20, 0.40),     # Brussels
    (48.21, 16.37, 0.22, 0.45),    # Vienna
    (50.08, 14.44, 0.18, 0.40),    # Prague
    (55.68, 12.57, 0.18, 0.40),    # Copenhagen
    (45.76, 4.84, 0.18, 0.40),     # Lyon
    (43.30, 5.37, 0.18, 0.40),     # Marseille
    (47.38, 8.54, 0.16, 0.40),     # Zurich
    (53.35, -6.26, 0.16, 0.40),    # Dublin
    (59.33, 18.07, 0.16, 0.40),    # Stockholm
    (59.91, 10.75, 0.14, 0.40),    # Oslo
    (53.48, -2.24, 0.20, 0.45),    # Manchester
    (44.84, -0.58, 0.14, 0.40),    # Bordeaux
    (37.39, -5.98, 0.14, 0.40),    # Seville
    (39.47, -0.38, 0.16, 0.40),    # Valencia
    (45.44, 12.32, 0.14, 0.40),    # Venice
)

_AIR_HUBS = {
    "LHR": (51.47, -0.45), "CDG": (49.01, 2.55), "FRA": (50.04, 8.56),
    "AMS": (52.31, 4.77), "MAD": (40.47, -3.57), "FCO": (41.80, 12.25),
    "MUC": (48.35, 11.79), "BCN": (41.30, 2.08), "ZRH": (47.46, 8.55),
    "VIE": (48.11, 16.57), "CPH": (55.62, 12.66), "LIS": (38.77, -9.13),
    "DUB": (53.43, -6.25), "BER": (52.37, 13.50), "ARN": (59.65, 17.92),
    "MXP": (45.63, 8.72),
}
_AIR_LEGS = (
    ("LHR", "CDG", 0.55), ("LHR", "FRA", 0.45), ("LHR", "MAD", 0.45),
    ("LHR", "FCO", 0.35), ("CDG", "FCO", 0.40), ("CDG", "MAD", 0.40),
    ("FRA", "MAD", 0.30), ("AMS", "BCN", 0.30), ("MUC", "LIS", 0.25),
    ("FRA", "FCO", 0.35), ("AMS", "VIE", 0.25), ("CPH", "MXP", 0.25),
    ("DUB", "ZRH", 0.25), ("BER", "BCN", 0.30), ("ARN", "FRA", 0.25),
    ("LHR", "ARN", 0.25), ("LIS", "BER", 0.20), ("MAD", "FCO", 0.30),
)
_SEA_LANES = (
    # Channel, North Sea, Biscay, Iberian coast, Gibraltar-Sicily, Tyrrhenian,
    # Ligurian, Adriatic, Skagerrak, Baltic approaches, Irish Sea
    (49.5, -5.0, 51.0, 1.5, 0.22, 0.25),
    (51.5, 2.0, 57.5, 7.0, 0.18, 0.30),
    (48.0, -5.5, 43.5, -9.5, 0.14, 0.30),
    (43.0, -9.8, 36.5, -8.5, 0.14, 0.25),
    (36.0, -5.0, 37.5, 11.0, 0.20, 0.30),
    (38.2, 15.5, 44.0, 9.0, 0.14, 0.25),
    (43.3, 5.4, 41.0, 2.5, 0.12, 0.25),
    (45.5, 12.5, 40.5, 18.5, 0.12, 0.25),
    (57.7, 7.5, 57.8, 11.0, 0.10, 0.25),
    (54.5, 10.5, 55.5, 18.0, 0.10, 0.25),
    (51.5, -5.5, 54.0, -4.0, 0.10, 0.20),
)

# Broadband and aeronautical traffic follow a stepped daily profile: a
# deep night trough, a dawn shoulder, morning, midday, an evening peak and a
# late-evening level. Aircraft are grounded at night.
_LEVELS = {"night": 0.05, "dawn": 0.21, "morning": 0.33, "midday": 0.52,
           "peak": 0.80, "late": 0.44}
_PHASES = ("morning", "night", "night", "night", "night", "dawn", "dawn", "morning",
           "morning", "morning", "midday", "midday", "midday", "midday", "midday",
           "midday", "peak", "peak", "peak", "peak", "peak", "peak", "late", "late")
_DIURNAL_POP = tuple(_LEVELS[p] for p in _PHASES)
_DIURNAL_AERO = tuple(0.02 if p == "night" else _LEVELS[p] for p in _PHASES)
# Maritime: flat around the clock.
_DIURNAL_SEA = (1.0,) * 24


# Family gains. Each profile level lands in a different optimal payload
# configuration: the night level sits below the cheapest capacity option on
# every beam and the evening peak saturates all of them.
POPULATION_GAIN = 5.0
AERO_GAIN = 0.225
MARITIME_GAIN = 0.2


def default_model(**overrides) -> TrafficModel:
    hubs = _AIR_HUBS
    routes = tuple(Route(*hubs[a], *hubs[b], w * AERO_GAIN, 0.35) for a, b, w in _AIR_LEGS)
    lanes = tuple(Route(la1, lo1, la2, lo2, w * MARITIME_GAIN, wd)
                  for la1, lo1, la2, lo2, w, wd in _SEA_LANES)
    base = dict(
        hotspots=tuple(Hotspot(la, lo, pk * POPULATION_GAIN, sg) for la, lo, pk, sg in _CITIES),
        aero_routes=routes,
        maritime_lanes=lanes,
        diurnal_population=_DIURNAL_POP,
        diurnal_aero=_DIURNAL_AERO,
        diurnal_maritime=_DIURNAL_SEA,
        noise_sigma=0.2,
        amplitude_jitter=0.05,
    )
    base.update(overrides)
    return TrafficModel(**base)


# --- source fields ----------------------------------------------------------

def _unit_vectors(lat_deg, lon_deg):
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def _arc_distance_deg(points: np.ndarray, route: Route) -> np.ndarray:
    """Angular distance (deg) from unit vectors ``points`` to a great-circle arc."""
    a = _unit_vectors(route.lat1, route.lon1)
    b = _unit_vectors(route.lat2, route.lon2)
    normal = np.cross(a, b)
    nn = np.linalg.norm(normal)
    d_a = np.degrees(np.arccos(np.clip(points @ a, -1.0, 1.0)))
    d_b = np.degrees(np.arccos(np.clip(points @ b, -1.0, 1.0)))
    if nn == 0.0:
        return np.minimum(d_a, d_b)
    normal = normal / nn
    sin_xt = points @ normal
    proj = points - sin_xt[..., None] * normal
    inside = ((np.cross(a, proj) @ normal) >= 0) & ((np.cross(proj, b) @ normal) >= 0)
    xt = np.degrees(np.abs(np.arcsin(np.clip(sin_xt, -1.0, 1.0))))
    return np.where(inside, xt, np.minimum(d_a, d_b))


def _source_fields_uncached(model: TrafficModel) -> tuple[np.ndarray, np.ndarray]:
    lats, lons = cell_centers(model.shape, model.bbox)
    m, n = model.shape
    fields = np.zeros((model.n_sources, m, n), dtype=np.float32)
    family = np.zeros(model.n_sources, dtype=np.int8)
    k = 0
    for h in model.hotspots:
        # Separable isotropic Gaussian in degrees.
        glat = np.exp(-0.5 * ((lats - h.lat) / h.sigma_deg) ** 2)
        glon = np.exp(-0.5 * ((lons - h.lon) / h.sigma_deg) ** 2)
        fields[k] = h.peak_mbps * np.outer(glat, glon)
        family[k] = 0
        k += 1
    if model.aero_routes or model.maritime_lanes:
        pts = _unit_vectors(*np.meshgrid(lats, lons, indexing="ij"))
        for fam, routes in ((1, model.aero_routes), (2, model.maritime_lanes)):
            for r in routes:
                d = _arc_distance_deg(pts, r)
                fields[k] = r.intensity_mbps * np.exp(-0.5 * (d / r.width_deg) ** 2)
                family[k] = fam
                k += 1
    return fields, family


@lru_cache(maxsize=4)
def source_fields(model: TrafficModel) -> tuple[np.ndarray, np.ndarray]:
    """(K, m, n) float32 per-source base fields and the (K,) family index."""
    fields, family = _source_fields_uncached(model)
    fields.setflags(write=False)
    family.setflags(write=False)
    return fields, family


def generate_grid(model: TrafficModel, hour: int, seed: int) -> TrafficGrid:
    """One demand map; deterministic in ``(model, hour, seed)``."""
    if not 0 <= hour <= 23:
        raise ValueError("hour must be in 0..23")
    rng = np.random.default_rng(seed)
    m, n = model.shape
    K = model.n_sources
    if K == 0:
        return TrafficGrid(np.zeros((m, n), dtype=np.float32), hour, model.bbox,
                           seed, model.model_hash())
    fields, family = source_fields(model)
    diurnal = np.array([model.diurnal_population[hour], model.diurnal_aero[hour],
                        model.diurnal_maritime[hour]])
    amps = diurnal[family]
    s = model.amplitude_jitter
    if s > 0:
        amps = amps * np.exp(s * rng.standard_normal(K) - 0.5 * s * s)
    grid = np.tensordot(amps.astype(np.float32), fields, axes=1)
    s = model.noise_sigma
    if s > 0:
        noise = np.exp(s * rng.standard_normal((m, n)) - 0.5 * s * s)
        grid = grid * noise.astype(np.float32)
    np.maximum(grid, 0.0, out=grid)
    return TrafficGrid(grid.astype(np.float32, copy=False), hour, model.bbox,
                       seed, model.model_hash())


# --- beam aggregation ---------------------------------------------------------

def _assignment(shape, bbox, beams: Sequence[Beam]) -> np.ndarray:
    lats, lons = cell_centers(shape, bbox)
    pts = _unit_vectors(*np.meshgrid(lats, lons, indexing="ij")).reshape(-1, 3)
    centers = _unit_vectors(np.array([b.center_lat for b in beams]),
                            np.array([b.center_lon for b in beams]))
    # Nearest centre = largest dot product; ties go to the lowest beam id.
    dots = pts @ centers.T
    best = dots.max(axis=1, keepdims=True)
    ids = np.array([b.id for b in beams], dtype=float)
    masked = np.where(dots == best, ids[None, :], np.inf)
    return masked.argmin(axis=1).reshape(shape)


@lru_cache(maxsize=8)
def _assignment_cached(shape, bbox, beams: tuple[Beam, ...]) -> np.ndarray:
    a = _assignment(shape, bbox, beams)
    a.setflags(write=False)
    return a


def beam_assignment(shape, bbox, beams: Sequence[Beam]) -> np.ndarray:
    """(m, n) index into ``beams`` of the nearest beam centre for every cell."""
    return _assignment_cached(tuple(shape), tuple(bbox), tuple(beams))


def aggregate_demand(grid: TrafficGrid, beams: Sequence[Beam]) -> np.ndarray:
    """Per-beam demand in bps, ordered like ``beams``."""
    if not beams:
        raise ValueError("need at least one beam")
    assign = beam_assignment(grid.values.shape, grid.bbox, beams)
    mbps = np.bincount(assign.ravel(), weights=grid.values.ravel().astype(np.float64),
                       minlength=len(beams))
    return mbps * 1e6


# --- persistence ----------------------------------------------------------------

def write_grid(grid: TrafficGrid, path) -> None:
    """Single grid as raw little-endian float32 plus a JSON sidecar."""
    path = Path(path)
    np.ascontiguousarray(grid.values, dtype="<f4").tofile(path)
    meta = {"m": grid.m, "n": grid.n, "bbox": list(grid.bbox), "hour": grid.hour,
            "seed": grid.seed, "model_hash": grid.model_hash}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def read_grid(path) -> TrafficGrid:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    values = np.fromfile(path, dtype="<f4").reshape(meta["m"], meta["n"])
    return TrafficGrid(values, meta["hour"], tuple(meta["bbox"]), meta["seed"],
                       meta["model_hash"])


class GridStackWriter:
    """Append-only writer for many equally shaped grids in one file."""

    def __init__(self, path, shape, bbox, model_hash):
        self.path = Path(path)
        self.shape = tuple(shape)
        self.bbox = tuple(bbox)
        self.model_hash = model_hash
        self.hours: list[int] = []
        self.seeds: list[int] = []
        self._fh = open(self.path, "wb")

    def append(self, grid: TrafficGrid) -> None:
        if grid.values.shape != self.shape:
            raise ValueError("grid shape mismatch")
        self._fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())
        self.hours.append(int(grid.hour))
        self.seeds.append(int(grid.seed))

    def close(self) -> None:
        self._fh.close()
        m, n = self.shape
        meta = {"m": m, "n": n, "count": len(self.hours), "bbox": list(self.bbox),
                "hour": self.hours, "seed": self.seeds, "model_hash": self.model_hash}
        self.path.with_suffix(self.path.suffix + ".json").write_text(json.dumps(meta))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_grid_stack(path) -> tuple[np.memmap, dict]:
    """Memory-map a grid stack written by :class:`GridStackWriter`."""
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    arr = np.memmap(path, dtype="<f4", mode="r",
                    shape=(meta["count"], meta["m"], meta["n"]))
    return arr, meta
