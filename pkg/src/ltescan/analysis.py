"""Drive-test statistics: strongest-cell series, CDFs, joint histograms,
disconnected durations and environment classes."""

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .capture import FIX_WINDOW_S, KNOT_MPS, format_time, nearest_fix
from .geodb import GeoPoint, haversine_m

log = logging.getLogger(__name__)

DEFAULT_CUTOFFS = (50_000, 200_000)
DEFAULT_MAX_GAP_S = 30.0


@dataclass(frozen=True)
class Detection:
    pci: int
    rsrp_dbfs: float
    mib_ok: bool = True
    ecgi: str | None = None


@dataclass(frozen=True)
class CaptureDecode:
    """Decode outcome of one capture, as produced by a scan."""

    start_time: datetime
    duration_s: float
    freq_hz: float
    detections: tuple = ()

    @property
    def midpoint(self):
        return self.start_time + timedelta(seconds=self.duration_s / 2)


@dataclass
class DriveSample:
    time: datetime
    fix: object
    freq_hz: float
    detections: tuple
    strongest: Detection | None
    bs_distance_m: float | None = None

    @property
    def velocity_knots(self):
        return None if self.fix is None else self.fix.speed_knots

    @property
    def velocity_mps(self):
        return None if self.fix is None else self.fix.speed_knots * KNOT_MPS

    @property
    def strongest_rsrp(self):
        return None if self.strongest is None else self.strongest.rsrp_dbfs


@dataclass(frozen=True)
class DisconnectedInterval:
    threshold_db: float
    start_time: float
    duration_s: float


@dataclass(frozen=True)
class EnvironmentClass:
    label: str
    county: str
    population: int


def strongest_cell(detections):
    """Highest-RSRP detection among those whose MIB decoded (lower PCI on ties)."""
    ok = [d for d in detections if d.mib_ok and d.rsrp_dbfs is not None]
    if not ok:
        return None
    return max(ok, key=lambda d: (d.rsrp_dbfs, -d.pci))


def build_drive_samples(decodes, fixes, db=None, window_s=FIX_WINDOW_S):
    """One DriveSample per capture: strongest decoded cell, fix and BS distance."""
    samples = []
    for dec in sorted(decodes, key=lambda d: d.start_time):
        fix = nearest_fix(fixes, dec.midpoint, window_s)
        best = strongest_cell(dec.detections)
        dist = None
        if best is not None and best.ecgi and db is not None and fix is not None:
            rec = db.lookup(best.ecgi)
            if rec is not None:
                dist = haversine_m(GeoPoint(fix.latitude_deg, fix.longitude_deg), rec.point)
        samples.append(DriveSample(dec.midpoint, fix, dec.freq_hz, tuple(dec.detections), best, dist))
    return samples


def empirical_cdf(values):
    """Sorted unique values with the fraction of samples at or below each."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        raise ValueError("empirical CDF of an empty sequence")
    u, counts = np.unique(v, return_counts=True)
    return list(zip(u.tolist(), (np.cumsum(counts) / v.size).tolist()))


def cdf_at(cdf, x):
    """Evaluate a right-continuous step CDF."""
    vals = [v for v, _ in cdf]
    i = np.searchsorted(vals, x, side="right")
    return 0.0 if i == 0 else cdf[i - 1][1]


@dataclass
class JointHistogram:
    mass: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray
    n_in: int
    n_out: int


def joint_histogram(xs, ys, x_edges, y_edges):
    """2-D histogram normalised over in-range points; out-of-range points are counted."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape:
        raise ValueError("xs and ys differ in length")
    x_edges = np.asarray(x_edges, dtype=float)
    y_edges = np.asarray(y_edges, dtype=float)
    for e in (x_edges, y_edges):
        if e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("edges must be strictly increasing")
    inside = ((xs >= x_edges[0]) & (xs <= x_edges[-1]) & (ys >= y_edges[0]) & (ys <= y_edges[-1]))
    h, _, _ = np.histogram2d(xs[inside], ys[inside], bins=[x_edges, y_edges])
    n_in = int(inside.sum())
    mass = h / n_in if n_in else h
    return JointHistogram(mass, x_edges, y_edges, n_in, int(xs.size - n_in))


def _seconds(t):
    return t.timestamp() if isinstance(t, datetime) else float(t)


def disconnected_durations(samples, thresholds_db, max_gap_s=DEFAULT_MAX_GAP_S, default_spacing_s=1.0):
    """Per threshold, maximal runs of samples with no cell at or above it.

    ``samples`` are DriveSamples or (time, strongest_rsrp_or_None) pairs. A
    sample accounts for the time until the next one when that gap is at most
    ``max_gap_s``; otherwise (and for the last sample) for the typical
    spacing of the trace, and a longer gap ends the run.
    """
    pts = []
    for s in samples:
        if isinstance(s, DriveSample):
            pts.append((_seconds(s.time), s.strongest_rsrp))
        else:
            pts.append((_seconds(s[0]), s[1]))
    t = np.array([p[0] for p in pts], dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("samples must be sorted by time")
    gaps = np.diff(t)
    small = gaps[gaps <= max_gap_s]
    nominal = float(np.median(small)) if small.size else default_spacing_s
    if nominal <= 0:
        nominal = default_spacing_s
    span = np.append(np.where(gaps <= max_gap_s, gaps, nominal), nominal)
    breaks = np.append(gaps > max_gap_s, True)
    out = {}
    for th in thresholds_db:
        runs = []
        cur = None
        for i, (ti, r) in enumerate(pts):
            off = r is None or r < th
            if off:
                if cur is None:
                    cur = [ti, 0.0]
                cur[1] += span[i]
            if cur is not None and (not off or breaks[i]):
                if cur[1] > 0:
                    runs.append(DisconnectedInterval(float(th), cur[0], float(cur[1])))
                cur = None
        out[th] = runs
    return out


def classify_environment(county, population, cutoffs=DEFAULT_CUTOFFS):
    """rural below the first cutoff, semi-urban below the second, else urban."""
    if population < 0:
        raise ValueError("population must be non-negative")
    lo, hi = cutoffs
    if not lo <= hi:
        raise ValueError("cutoffs must be ordered")
    label = "rural" if population < lo else ("semi-urban" if population < hi else "urban")
    return EnvironmentClass(label, county, int(population))


# --- table output -------------------------------------------------------------

@dataclass
class HistogramBins:
    rsrp: tuple = (-60.0, 60.0, 5.0)
    distance: tuple = (0.0, 10_000.0, 500.0)
    velocity: tuple = (0.0, 40.0, 2.0)      # m/s

    @staticmethod
    def edges(spec):
        lo, hi, step = spec
        n = int(round((hi - lo) / step))
        return lo + step * np.arange(n + 1)

    @classmethod
    def parse(cls, text):
        """``rsrp=-60:60:5,distance=0:10000:500,velocity=0:40:2`` (any subset)."""
        kw = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            name, _, rng = part.partition("=")
            vals = tuple(float(v) for v in rng.split(":"))
            if name not in ("rsrp", "distance", "velocity") or len(vals) != 3 or vals[2] <= 0:
                raise ValueError(f"bad bin spec {part!r}")
            kw[name] = vals
        return cls(**kw)


def _fmt(v):
    return f"{v:.6g}"


def _write_cdf(path, name, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([name, "fraction"])
        for v, f in empirical_cdf(values):
            w.writerow([_fmt(v), _fmt(f)])


def _write_joint(path, names, hist):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{names[0]}_lo", f"{names[0]}_hi", f"{names[1]}_lo", f"{names[1]}_hi", "mass"])
        for i in range(hist.mass.shape[0]):
            for j in range(hist.mass.shape[1]):
                w.writerow([_fmt(hist.x_edges[i]), _fmt(hist.x_edges[i + 1]), _fmt(hist.y_edges[j]),
                            _fmt(hist.y_edges[j + 1]), _fmt(hist.mass[i, j])])
        w.writerow(["# in_range", hist.n_in, "out_of_range", hist.n_out, ""])


def write_tables(samples, out_dir, thresholds_db=(), bins=None, max_gap_s=DEFAULT_MAX_GAP_S):
    """Write the statistics tables; returns the list of files written.

    Distance tables are skipped when no sample has a resolved BS distance.
    """
    bins = bins or HistogramBins()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    with_fix = [s for s in samples if s.fix is not None]
    covered = [s for s in samples if s.strongest is not None]
    rsrp = [s.strongest_rsrp for s in covered]
    dist = [s for s in covered if s.bs_distance_m is not None]
    if rsrp:
        _write_cdf(out / "cdf_rsrp.csv", "rsrp_dbfs", rsrp)
        written.append("cdf_rsrp.csv")
    if dist:
        _write_cdf(out / "cdf_distance.csv", "distance_m", [s.bs_distance_m for s in dist])
        written.append("cdf_distance.csv")
    else:
        log.warning("no resolved base-station distances: distance tables skipped")
    if with_fix:
        with open(out / "cdf_velocity.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["velocity_knots", "velocity_mps", "fraction"])
            for v, f in empirical_cdf([s.velocity_knots for s in with_fix]):
                w.writerow([_fmt(v), _fmt(v * KNOT_MPS), _fmt(f)])
        written.append("cdf_velocity.csv")
    re_, de, ve = (HistogramBins.edges(b) for b in (bins.rsrp, bins.distance, bins.velocity))
    if dist:
        _write_joint(out / "joint_rsrp_distance.csv", ("rsrp_dbfs", "distance_m"),
                     joint_histogram([s.strongest_rsrp for s in dist], [s.bs_distance_m for s in dist], re_, de))
        written.append("joint_rsrp_distance.csv")
    cov_fix = [s for s in covered if s.fix is not None]
    if cov_fix:
        _write_joint(out / "joint_velocity_rsrp.csv", ("velocity_mps", "rsrp_dbfs"),
                     joint_histogram([s.velocity_mps for s in cov_fix], [s.strongest_rsrp for s in cov_fix], ve, re_))
        written.append("joint_velocity_rsrp.csv")
    if dist:
        _write_joint(out / "joint_velocity_distance.csv", ("velocity_mps", "distance_m"),
                     joint_histogram([s.velocity_mps for s in dist], [s.bs_distance_m for s in dist], ve, de))
        written.append("joint_velocity_distance.csv")
    if thresholds_db and samples:
        runs = disconnected_durations(samples, thresholds_db, max_gap_s)
        with open(out / "disconnected_durations.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold_db", "start_time", "duration_s"])
            for th in thresholds_db:
                for r in runs[th]:
                    w.writerow([_fmt(th), format_time(datetime.fromtimestamp(r.start_time, timezone.utc)),
                                _fmt(r.duration_s)])
        written.append("disconnected_durations.csv")
    return written
