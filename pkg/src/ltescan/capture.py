"""Recorded IQ captures, NMEA RMC GPS logs and session manifests."""

import bisect
import csv
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .tables import SAMPLE_RATE_BY_NRB

log = logging.getLogger(__name__)

CAPTURE_RATES_HZ = (2.0e6, 100e6 / 6)
ALLOWED_RATES_HZ = tuple(sorted(set(CAPTURE_RATES_HZ) | set(SAMPLE_RATE_BY_NRB.values())))
DEFAULT_ROTATION_S = 60.0
FIX_WINDOW_S = 1.0
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class CaptureError(ValueError):
    pass


class NmeaError(ValueError):
    pass


def _rate_allowed(rate):
    return any(abs(rate - r) <= 1e-6 * r for r in ALLOWED_RATES_HZ)


def parse_time(text):
    """ISO-8601 timestamp; naive values are taken as UTC."""
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    t = datetime.fromisoformat(s)
    return t.replace(tzinfo=timezone.utc) if t.tzinfo is None else t.astimezone(timezone.utc)


def format_time(t):
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"


# --- IQ captures --------------------------------------------------------------

@dataclass
class IQCapture:
    samples: np.ndarray
    sample_rate_hz: float
    center_freq_hz: float | None = None
    start_time: datetime = EPOCH

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if not _rate_allowed(self.sample_rate_hz):
            raise CaptureError(f"sample rate {self.sample_rate_hz} Hz is not a supported capture rate")
        if self.center_freq_hz is not None and self.center_freq_hz <= 0:
            raise CaptureError("center frequency must be positive")

    @property
    def duration_ms(self):
        return 1000.0 * self.samples.size / self.sample_rate_hz

    @property
    def end_time(self):
        return self.start_time + timedelta(seconds=self.samples.size / self.sample_rate_hz)

    @property
    def midpoint(self):
        return self.start_time + (self.end_time - self.start_time) / 2


def _is_binary(path):
    return Path(path).suffix.lower() in (".bin", ".f32", ".cf32")


def _read_text_iq(path):
    with open(path) as fh:
        if not any(line.strip() and not line.lstrip().startswith("#") for line in fh):
            return np.zeros(0, dtype=complex)
    try:
        data = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2, comments="#")
    except ValueError:
        data = None
    if data is None or (data.size and data.shape[1] != 2):
        # find the offending row for the error message
        with open(path, newline="") as fh:
            for i, row in enumerate(csv.reader(fh), 1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    if len(row) != 2:
                        raise ValueError
                    float(row[0]), float(row[1])
                except ValueError:
                    raise CaptureError(f"{path}: row {i} is not two numeric columns: {row!r}") from None
        raise CaptureError(f"{path}: unreadable IQ file")
    return data[:, 0] + 1j * data[:, 1]


def load_iq_capture(path, sample_rate_hz, center_freq_hz=None, start_time=EPOCH,
                    duration_ms=None):
    """Load a two-column text (I,Q) file or a float32 little-endian interleaved sidecar."""
    if _is_binary(path):
        raw = np.fromfile(path, dtype="<f4")
        if raw.size % 2:
            raise CaptureError(f"{path}: odd number of float32 values")
        samples = raw[0::2].astype(float) + 1j * raw[1::2].astype(float)
    else:
        samples = _read_text_iq(path)
    if samples.size == 0:
        raise CaptureError(f"{path}: empty capture")
    if not np.all(np.isfinite(samples)):
        raise CaptureError(f"{path}: non-finite samples")
    cap = IQCapture(samples, sample_rate_hz, center_freq_hz, start_time)
    if duration_ms is not None:
        expect = round(sample_rate_hz * duration_ms / 1000)
        if abs(samples.size - expect) > 1:
            raise CaptureError(f"{path}: {samples.size} samples but metadata implies {expect}")
    return cap


def write_iq_capture(path, cap):
    x = cap.samples if isinstance(cap, IQCapture) else np.asarray(cap)
    if _is_binary(path):
        inter = np.empty(2 * x.size, dtype="<f4")
        inter[0::2] = x.real
        inter[1::2] = x.imag
        inter.tofile(path)
    else:
        np.savetxt(path, np.column_stack([x.real, x.imag]), delimiter=",", fmt="%.9g")


def iq_sample_count(path):
    """Number of samples in a capture file without parsing values."""
    if _is_binary(path):
        return os.path.getsize(path) // 8
    with open(path, "rb") as fh:
        return sum(1 for line in fh if line.strip() and not line.lstrip().startswith(b"#"))


# --- NMEA RMC -----------------------------------------------------------------

@dataclass(frozen=True)
class GpsFix:
    time_utc: datetime
    latitude_deg: float
    longitude_deg: float
    speed_knots: float = 0.0
    valid: bool = True
    course_deg: float | None = None

    @property
    def speed_mps(self):
        return self.speed_knots * KNOT_MPS


KNOT_MPS = 0.514444
_RMC_HEADER = re.compile(r"^\$[A-Z]{2}RMC$")


def nmea_checksum(body):
    c = 0
    for ch in body.encode("ascii"):
        c ^= ch
    return c


def _coord(value, hemi, deg_digits, field_name):
    if not value:
        return float("nan")
    try:
        deg = int(value[:deg_digits])
        minutes = float(value[deg_digits:])
    except ValueError:
        raise NmeaError(f"bad {field_name} {value!r}") from None
    if minutes >= 60:
        raise NmeaError(f"bad {field_name} minutes {value!r}")
    v = deg + minutes / 60.0
    if hemi in ("S", "W"):
        v = -v
    elif hemi not in ("N", "E"):
        raise NmeaError(f"bad {field_name} hemisphere {hemi!r}")
    return v


def parse_rmc(sentence, check_checksum=True):
    """Parse one RMC sentence into a GpsFix (status V gives valid=False)."""
    line = sentence.strip()
    if "*" in line:
        body, _, given = line.partition("*")
        if check_checksum:
            try:
                want = int(given[:2], 16)
            except ValueError:
                raise NmeaError(f"bad checksum field {given!r}") from None
            got = nmea_checksum(body[1:])
            if got != want:
                raise NmeaError(f"checksum mismatch: computed {got:02X}, sentence says {want:02X}")
    else:
        if check_checksum:
            raise NmeaError("missing checksum")
        body = line
    fields = body.split(",")
    if not _RMC_HEADER.match(fields[0]):
        raise NmeaError(f"not an RMC sentence: {fields[0]!r}")
    if len(fields) not in (12, 13):
        raise NmeaError(f"RMC needs 12 fields, got {len(fields)}")
    hms, status, lat, ns, lon, ew, speed, course, date = fields[1:10]
    if status not in ("A", "V"):
        raise NmeaError(f"bad status {status!r}")
    try:
        t = datetime.strptime(date + hms.split(".")[0], "%d%m%y%H%M%S").replace(tzinfo=timezone.utc)
        if "." in hms:
            t += timedelta(seconds=float("0." + hms.split(".")[1]))
    except ValueError:
        raise NmeaError(f"bad date/time {date!r} {hms!r}") from None
    la = _coord(lat, ns, 2, "latitude")
    lo = _coord(lon, ew, 3, "longitude")
    if (np.isfinite(la) and abs(la) > 90) or (np.isfinite(lo) and abs(lo) > 180):
        raise NmeaError("coordinate out of range")
    try:
        spd = float(speed) if speed else 0.0
        crs = float(course) if course else None
    except ValueError:
        raise NmeaError(f"bad speed/course {speed!r} {course!r}") from None
    valid = status == "A" and np.isfinite(la) and np.isfinite(lo)
    return GpsFix(t, la, lo, spd, valid, crs)


def _fmt_coord(v, deg_digits, pos, neg):
    hemi = pos if v >= 0 else neg
    a = abs(v)
    deg = int(a)
    minutes = round((a - deg) * 60, 6)
    if minutes >= 60:
        deg, minutes = deg + 1, 0.0
    return f"{deg:0{deg_digits}d}{minutes:09.6f}", hemi


def format_rmc(fix, talker="GP"):
    """Serialise a fix as an RMC sentence with checksum (6-decimal minutes)."""
    t = fix.time_utc.astimezone(timezone.utc)
    lat, ns = _fmt_coord(fix.latitude_deg, 2, "N", "S")
    lon, ew = _fmt_coord(fix.longitude_deg, 3, "E", "W")
    course = "" if fix.course_deg is None else f"{fix.course_deg:.1f}"
    body = (f"{talker}RMC,{t:%H%M%S}.{t.microsecond // 10000:02d},{'A' if fix.valid else 'V'},"
            f"{lat},{ns},{lon},{ew},{fix.speed_knots:.3f},{course},{t:%d%m%y},,")
    return f"${body}*{nmea_checksum(body):02X}"


@dataclass
class GpsLog:
    fixes: list
    n_errors: int = 0
    n_invalid: int = 0


def load_gps_log(path, check_checksum=True):
    """All RMC fixes of a log file in file order; other sentences are ignored."""
    fixes, errors, invalid = [], 0, 0
    with open(path, encoding="ascii", errors="replace") as fh:
        for line in fh:
            line = line.strip()
            if not line.startswith("$") or line[3:6] != "RMC":
                continue
            try:
                fix = parse_rmc(line, check_checksum)
            except NmeaError as exc:
                errors += 1
                log.warning("%s: %s", path, exc)
                continue
            invalid += not fix.valid
            fixes.append(fix)
    return GpsLog(fixes, errors, invalid)


# --- sessions ---------------------------------------------------------------

@dataclass
class CaptureRef:
    """A capture on disk, possibly made of several rotated files."""

    paths: tuple
    center_freq_hz: float | None
    sample_rate_hz: float
    start_time: datetime
    n_samples: int

    @property
    def duration_s(self):
        return self.n_samples / self.sample_rate_hz

    @property
    def end_time(self):
        return self.start_time + timedelta(seconds=self.duration_s)

    @property
    def midpoint(self):
        return self.start_time + timedelta(seconds=self.duration_s / 2)

    def load(self):
        parts = [load_iq_capture(p, self.sample_rate_hz).samples for p in self.paths]
        return IQCapture(np.concatenate(parts), self.sample_rate_hz,
                         self.center_freq_hz, self.start_time)


@dataclass
class CaptureSession:
    captures: list
    fixes: list
    hop_plan: list = field(default_factory=list)
    rotation_s: float = DEFAULT_ROTATION_S
    warnings: list = field(default_factory=list)

    def fix_for(self, capture, window_s=FIX_WINDOW_S):
        """Nearest valid fix within ``window_s`` of the capture midpoint, else None."""
        return nearest_fix(self.fixes, capture.midpoint, window_s)


def nearest_fix(fixes, when, window_s=FIX_WINDOW_S):
    """Closest valid fix to ``when`` (time-sorted ``fixes``) if within ``window_s``."""
    valid = [f for f in fixes if f.valid]
    if not valid:
        return None
    times = [f.time_utc for f in valid]
    i = bisect.bisect_left(times, when)
    best = None
    for j in (i - 1, i):
        if 0 <= j < len(valid):
            d = abs((valid[j].time_utc - when).total_seconds())
            if d <= window_s and (best is None or d < best[0]):
                best = (d, valid[j])
    return best[1] if best else None


def _merge_rotated(caps):
    """Join captures that continue each other seamlessly (same rate and frequency)."""
    out = []
    for c in caps:
        if out:
            p = out[-1]
            gap = (c.start_time - p.end_time).total_seconds()
            if (p.center_freq_hz == c.center_freq_hz and p.sample_rate_hz == c.sample_rate_hz
                    and abs(gap) <= 1.0 / c.sample_rate_hz):
                out[-1] = CaptureRef(p.paths + c.paths, p.center_freq_hz, p.sample_rate_hz,
                                     p.start_time, p.n_samples + c.n_samples)
                continue
        out.append(c)
    return out


def assemble_session(captures, gps_paths=(), hop_plan=(), check_checksum=True,
                     rotation_s=DEFAULT_ROTATION_S):
    """Sort captures and GPS fixes by time, join rotated files, reject overlaps.

    Captures without a centre frequency take hop-plan entries in time order.
    """
    hop_plan = [float(f) for f in hop_plan]
    if any(f <= 0 for f in hop_plan):
        raise CaptureError("hop plan frequencies must be positive")
    caps = sorted(captures, key=lambda c: c.start_time)
    tagged = []
    for i, c in enumerate(caps):
        if c.center_freq_hz is None:
            if not hop_plan:
                raise CaptureError(f"{c.paths[0]}: no centre frequency and no hop plan")
            c = CaptureRef(c.paths, hop_plan[i % len(hop_plan)], c.sample_rate_hz,
                           c.start_time, c.n_samples)
        tagged.append(c)
    caps = _merge_rotated(tagged)
    overlaps = []
    for a, b in zip(caps, caps[1:]):
        if b.start_time < a.end_time:
            overlaps.append(f"{a.paths[-1]} overlaps {b.paths[0]}")
    if overlaps:
        raise CaptureError("overlapping captures: " + "; ".join(overlaps))
    warnings = []
    fixes = []
    for p in gps_paths:
        g = load_gps_log(p, check_checksum)
        fixes.extend(g.fixes)
        if g.n_errors:
            warnings.append(f"{p}: {g.n_errors} malformed RMC sentences skipped")
    fixes.sort(key=lambda f: f.time_utc)
    dedup = []
    for f in fixes:
        if dedup and dedup[-1].time_utc == f.time_utc:
            continue
        dedup.append(f)
    if not dedup:
        warnings.append("no GPS fixes: captures carry no position")
    return CaptureSession(caps, dedup, hop_plan, rotation_s, warnings)


# --- manifest ---------------------------------------------------------------

MANIFEST_COLUMNS = ("path", "center_freq_hz", "sample_rate_hz", "start_time")


def read_manifest(path):
    """Parse ``key = value`` header lines and the ``[captures]`` CSV table."""
    path = Path(path)
    base = path.parent
    meta = {}
    rows = []
    in_table = False
    header = None
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.lower() == "[captures]":
                in_table = True
                continue
            if not in_table:
                if "=" not in line:
                    raise CaptureError(f"{path}:{n}: expected key = value")
                k, _, v = line.partition("=")
                meta[k.strip()] = v.strip()
                continue
            cells = next(csv.reader([line]))
            cells = [c.strip() for c in cells]
            if header is None:
                header = cells
                missing = [c for c in MANIFEST_COLUMNS if c not in header]
                if missing:
                    raise CaptureError(f"{path}: capture table lacks column(s) {', '.join(missing)}")
                continue
            rows.append((n, dict(zip(header, cells))))
    caps = []
    for n, row in rows:
        try:
            p = base / row["path"]
            freq = float(row["center_freq_hz"]) if row["center_freq_hz"] else None
            rate = float(row["sample_rate_hz"])
            start = parse_time(row["start_time"])
        except (ValueError, KeyError) as exc:
            raise CaptureError(f"{path}:{n}: {exc}") from None
        if not _rate_allowed(rate):
            raise CaptureError(f"{path}:{n}: unsupported sample rate {rate}")
        if row.get("duration_ms"):
            count = round(rate * float(row["duration_ms"]) / 1000)
        else:
            count = iq_sample_count(p)
        caps.append(CaptureRef((p,), freq, rate, start, count))
    gps = [base / g.strip() for g in meta.get("gps", "").split(",") if g.strip()]
    hop = [float(h) for h in meta.get("hop_plan", "").split(",") if h.strip()]
    rotation = float(meta.get("rotation_s", DEFAULT_ROTATION_S))
    return caps, gps, hop, rotation


def load_session(manifest_path, check_checksum=True):
    caps, gps, hop, rotation = read_manifest(manifest_path)
    return assemble_session(caps, gps, hop, check_checksum, rotation)


def write_manifest(path, captures, gps_paths=(), hop_plan=(), rotation_s=DEFAULT_ROTATION_S):
    """``captures``: iterable of (relative path, centre Hz, rate Hz, start datetime)."""
    lines = ["# ltescan session manifest", "version = 1", f"rotation_s = {rotation_s:g}"]
    if hop_plan:
        lines.append("hop_plan = " + ", ".join(f"{f:.0f}" for f in hop_plan))
    if gps_paths:
        lines.append("gps = " + ", ".join(str(g) for g in gps_paths))
    lines += ["[captures]", ",".join(MANIFEST_COLUMNS)]
    for p, freq, rate, start in captures:
        fstr = "" if freq is None else f"{freq:.0f}"
        lines.append(f"{p},{fstr},{rate!r},{format_time(start)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
