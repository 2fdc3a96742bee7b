"""Offline cell-site database keyed by ECGI, and great-circle distances."""

import csv
import logging
import math
from dataclasses import dataclass, field

from .sibparse import Ecgi

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371000.0   # mean radius; pi*R = 20015086.8 m

COLUMN_ALIASES = {
    "mcc": ("mcc",),
    "mnc": ("mnc", "net"),
    "cid": ("cid", "cell", "cellid", "cell_id"),
    "lat": ("lat", "latitude"),
    "lon": ("lon", "lng", "long", "longitude"),
}


class CellDbError(ValueError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    latitude_deg: float
    longitude_deg: float

    def __post_init__(self):
        if not (-90 <= self.latitude_deg <= 90 and -180 <= self.longitude_deg <= 180):
            raise ValueError(f"coordinates out of range: {self.latitude_deg}, {self.longitude_deg}")


@dataclass(frozen=True)
class CellSiteRecord:
    ecgi: Ecgi
    latitude_deg: float
    longitude_deg: float
    source: str
    approximate: bool = True

    @property
    def point(self):
        return GeoPoint(self.latitude_deg, self.longitude_deg)


@dataclass
class CellDatabase:
    records: dict = field(default_factory=dict)
    duplicates: int = 0
    rejected: int = 0
    sources: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def lookup(self, ecgi):
        """Exact match on (MCC, MNC, CID); accepts an Ecgi or its text form."""
        key = normalize_key(ecgi)
        return self.records.get(key) if key else None

    def merge(self, other):
        """Add records of ``other`` that are not already present (first hit wins)."""
        for k, rec in other.records.items():
            self.records.setdefault(k, rec)
        self.duplicates += other.duplicates
        self.rejected += other.rejected
        self.sources += other.sources
        return self


def normalize_key(ecgi):
    if isinstance(ecgi, str):
        try:
            ecgi = Ecgi.from_text(ecgi)
        except ValueError:
            return None
    return ecgi.canonical_text


def _resolve_columns(header, path):
    lower = {h.strip().lower(): i for i, h in enumerate(header)}
    cols = {}
    for name, aliases in COLUMN_ALIASES.items():
        idx = next((lower[a] for a in aliases if a in lower), None)
        if idx is None:
            raise CellDbError(f"{path}: missing column '{name}'")
        cols[name] = idx
    return cols


def load_cell_db(path, source=None):
    """Load a comma-separated snapshot with a header row.

    Duplicate ECGIs keep the last row (counted in ``duplicates``); rows with
    unparseable or out-of-range values are counted in ``rejected``.
    """
    source = source or str(path)
    db = CellDatabase(sources=[source])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CellDbError(f"{path}: empty file") from None
        cols = _resolve_columns(header, path)
        for row in reader:
            if not row or not any(c.strip() for c in row):
                continue
            try:
                mcc = row[cols["mcc"]].strip()
                mnc = row[cols["mnc"]].strip()
                cid = int(row[cols["cid"]].strip())
                lat = float(row[cols["lat"]])
                lon = float(row[cols["lon"]])
                GeoPoint(lat, lon)
                ecgi = Ecgi(mcc.zfill(3), mnc if len(mnc) >= 2 else mnc.zfill(2), cid)
            except (ValueError, IndexError):
                db.rejected += 1
                continue
            key = ecgi.canonical_text
            if key in db.records:
                db.duplicates += 1
            db.records[key] = CellSiteRecord(ecgi, lat, lon, source)
    if db.duplicates:
        log.warning("%s: %d duplicate ECGI rows (last one kept)", path, db.duplicates)
    if db.rejected:
        log.warning("%s: %d rows rejected", path, db.rejected)
    return db


def load_cell_dbs(paths):
    """Several snapshots; earlier files win for ECGIs present in more than one."""
    db = CellDatabase()
    for p in paths:
        db.merge(load_cell_db(p))
    return db


class RemoteLookup:
    """Interface for an online cell-location service."""

    def lookup(self, ecgi):
        raise NotImplementedError


class StubRemoteLookup(RemoteLookup):
    """Offline stand-in: never resolves anything."""

    def lookup(self, ecgi):
        return None


def haversine_m(a, b):
    lat1, lon1 = math.radians(a.latitude_deg), math.radians(a.longitude_deg)
    lat2, lon2 = math.radians(b.latitude_deg), math.radians(b.longitude_deg)
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    h = min(1.0, h)
    # atan2 form keeps full precision near the antipode, where asin(sqrt(h)) flattens
    return 2 * EARTH_RADIUS_M * math.atan2(math.sqrt(h), math.sqrt(1.0 - h))
