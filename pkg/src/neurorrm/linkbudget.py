"""Downlink budget for a GEO multibeam payload.

Channel gain, CINR, ModCod lookup and offered capacity per beam, plus the
per-beam capacity table that feeds the configuration space. All internal
arithmetic is linear; dB appears only at the function boundaries.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23
EARTH_RADIUS = 6_371_000.0

CSV_HEADER = ("bandwidth_hz", "power_dbw", "eirp_dbw", "cinr_db",
              "efficiency_bps_hz", "capacity_bps")


class ConfigurationError(ValueError):
    """Raised when a requested table entry or parameter set is invalid."""


def db_to_linear(x_db):
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class SystemParams:
    carrier_frequency: float = 19e9
    satellite_longitude: float = 13.0
    satellite_altitude: float = 35_786_000.0
    theta_3db: float = 1.0
    sat_peak_gain: float = 44.94
    rx_peak_gain_over_t: float = 17.0
    noise_psd: float = BOLTZMANN * 290.0
    extra_loss: float = 0.0
    boltzmann: float = BOLTZMANN
    # None disables the co-channel term; otherwise I = P|h|^2 / (C/I).
    carrier_to_interference_db: float | None = None
    earth_radius: float = EARTH_RADIUS

    def __post_init__(self):
        if self.carrier_frequency <= 0:
            raise ConfigurationError("carrier_frequency must be positive")
        if self.satellite_altitude <= 0:
            raise ConfigurationError("satellite_altitude must be positive")
        if self.theta_3db <= 0:
            raise ConfigurationError("theta_3db must be positive")
        if self.noise_psd <= 0:
            raise ConfigurationError("noise_psd must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def rx_peak_gain(self) -> float:
        """Terminal receive gain (linear) implied by G/T and the noise PSD."""
        t_sys = self.noise_psd / self.boltzmann
        return db_to_linear(self.rx_peak_gain_over_t) * t_sys


@dataclass(frozen=True)
class Beam:
    id: int
    center_lat: float
    center_lon: float

    def __post_init__(self):
        if abs(self.center_lat) > 90:
            raise ConfigurationError(f"beam {self.id}: latitude out of range")
        if abs(self.center_lon) > 180:
            raise ConfigurationError(f"beam {self.id}: longitude out of range")


BEAM_LATS = (39.3, 42.0, 44.7, 47.4, 51.0, 53.7, 56.4, 39.5)
BEAM_LONS = (-5.3, 0.0, 5.3, 10.6, -0.5, 6.0, 12.3, 14.4)
REFERENCE_BEAM = 4


def default_beams() -> list[Beam]:
    """The eight European beam centres used throughout the lab."""
    return [Beam(i + 1, lat, lon)
            for i, (lat, lon) in enumerate(zip(BEAM_LATS, BEAM_LONS))]


def check_beams(beams: Sequence[Beam]) -> None:
    ids = [b.id for b in beams]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("beam ids must be unique")


@dataclass(frozen=True)
class ModCodTable:
    rows: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.rows:
            raise ConfigurationError("ModCod table is empty")
        for (t0, e0), (t1, e1) in zip(self.rows, self.rows[1:]):
            if not (t1 > t0 and e1 > e0):
                raise ConfigurationError(
                    "ModCod thresholds and efficiencies must be strictly increasing")


@dataclass(frozen=True)
class CapacityRow:
    bandwidth_hz: float
    power_dbw: float
    eirp_dbw: float
    cinr_db: float
    efficiency_bps_hz: float
    capacity_bps: float

    @property
    def power_w(self) -> float:
        return db_to_linear(self.power_dbw)


@dataclass(frozen=True)
class CapacityTable:
    rows: tuple[CapacityRow, ...]

    def __post_init__(self):
        keys = [(r.bandwidth_hz, r.power_dbw) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ConfigurationError("duplicate (bandwidth, power) pair in capacity table")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def lookup(self, bandwidth_hz: float, power_dbw: float) -> CapacityRow:
        for r in self.rows:
            if r.bandwidth_hz == bandwidth_hz and r.power_dbw == power_dbw:
                return r
        raise ConfigurationError(
            f"no capacity row for bandwidth={bandwidth_hz} Hz, power={power_dbw} dBW")

    def index_of(self, bandwidth_hz: float, power_dbw: float) -> int:
        return self.rows.index(self.lookup(bandwidth_hz, power_dbw))


# Six per-beam options, reference values (capacity converted Mbps -> bps).
REFERENCE_TABLE: tuple[CapacityRow, ...] = (
    CapacityRow(250e6, 10.0, 54.94, 6.4615, 1.8865, 471_631_200.0),
    CapacityRow(500e6, 10.0, 54.94, 3.4817, 1.3350, 667_482_700.0),
    CapacityRow(250e6, 12.0, 56.94, 8.4261, 2.2502, 562_542_100.0),
    CapacityRow(500e6, 12.0, 56.94, 5.4638, 1.7019, 850_928_800.0),
    CapacityRow(250e6, 14.0, 58.94, 10.3705, 2.6101, 652_521_500.0),
    CapacityRow(500e6, 14.0, 58.94, 7.4357, 2.0668, 1_033_400_000.0),
)

DEFAULT_POWERS_DBW = (10.0, 12.0, 14.0)
DEFAULT_BANDWIDTHS_HZ = (250e6, 500e6)
# Co-channel C/I that reproduces the reference CINR steps to within 1e-4 dB.
REFERENCE_CARRIER_TO_INTERFERENCE_DB = 25.0


def default_modcod_table() -> ModCodTable:
    pairs = sorted((r.cinr_db, r.efficiency_bps_hz) for r in REFERENCE_TABLE)
    return ModCodTable(tuple(pairs))


# --- geometry -------------------------------------------------------------

def _ecef(lat_deg: float, lon_deg: float, radius: float) -> tuple[float, float, float]:
    lat, lon = math.radians(lat_deg), math.radians(lon_deg)
    return (radius * math.cos(lat) * math.cos(lon),
            radius * math.cos(lat) * math.sin(lon),
            radius * math.sin(lat))


def _central_angle(lat1, lon1, lat2, lon2) -> float:
    """Great-circle angle in radians (haversine form, exact zero at coincidence)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * math.asin(min(1.0, math.sqrt(h)))


def slant_range(beam: Beam, sys: SystemParams) -> float:
    """Distance in metres from the GEO satellite to the beam centre.

    Spherical Earth; the satellite sits above the equator at
    ``sys.satellite_longitude``.
    """
    psi = _central_angle(0.0, sys.satellite_longitude, beam.center_lat, beam.center_lon)
    r, h = sys.earth_radius, sys.satellite_altitude
    # |D|^2 = h^2 + 4 R (R + h) sin^2(psi/2); hypot keeps the nadir case exact.
    return math.hypot(h, 2.0 * math.sqrt(r * (r + h)) * math.sin(psi / 2.0))


def off_boresight_angle(beam: Beam, sys: SystemParams,
                        target_lat: float | None = None,
                        target_lon: float | None = None) -> float:
    """Angle (deg) at the satellite between the beam boresight and a ground point.

    The boresight of each spot beam points at its own centre, so the default
    target (the centre itself) gives 0.
    """
    if target_lat is None or target_lon is None:
        return 0.0
    sat = _ecef(0.0, sys.satellite_longitude, sys.earth_radius + sys.satellite_altitude)
    a = _ecef(beam.center_lat, beam.center_lon, sys.earth_radius)
    b = _ecef(target_lat, target_lon, sys.earth_radius)
    va = [ai - si for ai, si in zip(a, sat)]
    vb = [bi - si for bi, si in zip(b, sat)]
    dot = sum(x * y for x, y in zip(va, vb))
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(x * x for x in vb))
    return math.degrees(math.acos(max(-1.0, min(1.0, dot / (na * nb)))))


def antenna_gain(theta: float, sys: SystemParams) -> float:
    """Satellite transmit gain in dBi at ``theta`` degrees off boresight.

    Parabolic-in-dB main lobe, ``G_max - 12 (theta/theta_3dB)^2``, floored
    30 dB below the peak.
    """
    if theta < 0:
        raise ValueError("off-boresight angle must be non-negative")
    rolloff = 12.0 * (theta / sys.theta_3db) ** 2
    return sys.sat_peak_gain - min(rolloff, 30.0)


def free_space_path_loss(distance: float, sys: SystemParams) -> float:
    """FSPL as a linear factor, (4 pi D / lambda)^2."""
    return (4.0 * math.pi * distance / sys.wavelength) ** 2


def channel_gain(beam: Beam, sys: SystemParams,
                 target_lat: float | None = None,
                 target_lon: float | None = None) -> float:
    """Linear power gain |h|^2 towards ``beam`` (its centre unless a target is given)."""
    theta = off_boresight_angle(beam, sys, target_lat, target_lon)
    if target_lat is None or target_lon is None:
        d = slant_range(beam, sys)
    else:
        d = slant_range(Beam(beam.id, target_lat, target_lon), sys)
    g_sat = db_to_linear(antenna_gain(theta, sys))
    return (g_sat * sys.rx_peak_gain
            / (free_space_path_loss(d, sys) * db_to_linear(sys.extra_loss)))


def cinr(power: float, bandwidth: float, beam: Beam, sys: SystemParams,
         interference: float = 0.0) -> float:
    """CINR in dB for ``power`` dBW over ``bandwidth`` Hz.

    ``interference`` is an absolute term in watts; when the system carries a
    C/I figure the co-channel term P|h|^2/(C/I) is added on top.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if interference < 0:
        raise ValueError("interference must be non-negative")
    carrier = db_to_linear(power) * channel_gain(beam, sys)
    i_total = interference
    if sys.carrier_to_interference_db is not None:
        i_total += carrier / db_to_linear(sys.carrier_to_interference_db)
    return linear_to_db(carrier / (i_total + sys.noise_psd * bandwidth))


def spectral_efficiency(cinr_db: float, table: ModCodTable) -> float:
    eff = 0.0
    for threshold, e in table.rows:
        if cinr_db >= threshold:
            eff = e
        else:
            break
    return eff


def offered_capacity(bandwidth: float, efficiency: float) -> float:
    if bandwidth < 0 or efficiency < 0:
        raise ValueError("bandwidth and efficiency must be non-negative")
    return bandwidth * efficiency


def calibrate_extra_loss(sys: SystemParams, beam: Beam, power_dbw: float,
                         bandwidth_hz: float, target_cinr_db: float) -> SystemParams:
    """Fit ``extra_loss`` so that ``cinr(power, bandwidth)`` hits the target.

    Closed form in the linear domain; the result is then nudged by ulps so the
    calibrated CINR is not below the target (ModCod thresholds are inclusive).
    """
    base = replace(sys, extra_loss=0.0)
    carrier = db_to_linear(power_dbw) * channel_gain(beam, base)
    inv_target = 1.0 / db_to_linear(target_cinr_db)
    if sys.carrier_to_interference_db is not None:
        inv_target -= 1.0 / db_to_linear(sys.carrier_to_interference_db)
    if inv_target <= 0:
        raise ConfigurationError("target CINR is above the interference ceiling")
    # 1/gamma_noise = N0 W L / carrier  ->  L = carrier / (N0 W gamma_noise)
    loss_linear = carrier * inv_target / (sys.noise_psd * bandwidth_hz)
    fitted = replace(sys, extra_loss=linear_to_db(loss_linear))
    for _ in range(64):
        if cinr(power_dbw, bandwidth_hz, beam, fitted) >= target_cinr_db:
            break
        fitted = replace(fitted, extra_loss=math.nextafter(fitted.extra_loss, -math.inf))
    return fitted


def calibrated_system(with_interference: bool = True) -> SystemParams:
    """Default system with extra loss fitted to the (250 MHz, 10 dBW) row."""
    sys = SystemParams(
        carrier_to_interference_db=(REFERENCE_CARRIER_TO_INTERFERENCE_DB
                                    if with_interference else None))
    ref = default_beams()[REFERENCE_BEAM - 1]
    return calibrate_extra_loss(sys, ref, 10.0, 250e6, REFERENCE_TABLE[0].cinr_db)


def build_capacity_table(powers: Iterable[float] = DEFAULT_POWERS_DBW,
                         bandwidths: Iterable[float] = DEFAULT_BANDWIDTHS_HZ,
                         mode: str = "paper-values",
                         sys: SystemParams | None = None,
                         beam: Beam | None = None,
                         modcod: ModCodTable | None = None,
                         cinr_decimals: int | None = 4) -> CapacityTable:
    """One row per (bandwidth, power) pair, power-major like the reference table.

    ``analytic`` mode runs cinr -> spectral_efficiency -> offered_capacity.
    CINR is rounded to ``cinr_decimals`` (the reference precision) before the
    ModCod lookup so that a calibrated link lands on the intended rung.
    """
    powers, bandwidths = list(powers), list(bandwidths)
    if not powers or not bandwidths:
        raise ConfigurationError("power and bandwidth sets must be non-empty")
    pairs = [(w, p) for p in powers for w in bandwidths]
    if mode == "paper-values":
        known = {(r.bandwidth_hz, r.power_dbw): r for r in REFERENCE_TABLE}
        missing = [pq for pq in pairs if pq not in known]
        if missing:
            raise ConfigurationError(f"pairs not in the reference table: {missing}")
        return CapacityTable(tuple(known[pq] for pq in pairs))
    if mode != "analytic":
        raise ConfigurationError(f"unknown capacity-table mode {mode!r}")

    sys = sys if sys is not None else calibrated_system()
    beam = beam if beam is not None else default_beams()[REFERENCE_BEAM - 1]
    modcod = modcod if modcod is not None else default_modcod_table()
    gain_dbi = antenna_gain(0.0, sys)
    rows = []
    for w, p in pairs:
        g = cinr(p, w, beam, sys)
        if cinr_decimals is not None:
            g = round(g, cinr_decimals)
        eff = spectral_efficiency(g, modcod)
        rows.append(CapacityRow(w, p, p + gain_dbi, g, eff, offered_capacity(w, eff)))
    return CapacityTable(tuple(rows))


# --- CSV ------------------------------------------------------------------

def default_table_path():
    return resources.files("neurorrm").joinpath("data/capacity_table.csv")


def load_capacity_csv(path=None) -> CapacityTable:
    if path is None:
        text = default_table_path().read_text()
    else:
        text = Path(path).read_text()
    reader = csv.DictReader(text.splitlines())
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ConfigurationError(f"unexpected capacity CSV header {reader.fieldnames}")
    return CapacityTable(tuple(
        CapacityRow(*(float(row[k]) for k in CSV_HEADER)) for row in reader))


def save_capacity_csv(table: CapacityTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in table:
            w.writerow([repr(float(getattr(r, k))) for k in CSV_HEADER])


def load_modcod_csv(path) -> ModCodTable:
    """ModCod rows from a capacity-style CSV (cinr_db, efficiency_bps_hz columns)."""
    table = load_capacity_csv(path)
    return ModCodTable(tuple(sorted((r.cinr_db, r.efficiency_bps_hz) for r in table)))
