"""Command-line entry point: scan, decode-mib, decode-sib1, analyze, generate, gps-parse."""

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (CaptureDecode, Detection, HistogramBins, build_drive_samples,
                       classify_environment, disconnected_durations, write_tables)
from .capture import (CaptureError, CaptureRef, EPOCH, GpsLog, NmeaError, format_time,
                      load_gps_log, load_iq_capture, load_session, parse_time, write_iq_capture)
from .geodb import CellDbError, GeoPoint, haversine_m, load_cell_dbs
from .scanner import ScanConfig, scan_capture
from .sib1chain import DciMessage
from .sibparse import Plmn, Sib1Info
from .txoracle import ConfigError, DownlinkConfig, ImpairmentSpec, generate_downlink, impair

CELL_DB_ENV = "LTESCAN_CELL_DB"
RECORD_FORMAT = "ltescan-records"
RECORD_VERSION = 1

log = logging.getLogger("ltescan")


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _clean(obj):
    """Round floats so output is stable and diff-able."""
    if isinstance(obj, float) or isinstance(obj, np.floating):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return round(v, 6)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"))


class RecordWriter:
    def __init__(self, path, kind):
        self.fh = open(path, "w", encoding="utf-8") if path and path != "-" else sys.stdout
        self.write({"format": RECORD_FORMAT, "kind": kind, "version": RECORD_VERSION,
                    "ltescan": __version__})

    def write(self, rec):
        self.fh.write(_dumps(rec) + "\n")
        self.fh.flush()

    def close(self):
        if self.fh is not sys.stdout:
            self.fh.close()


def read_records(path):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise StageError("input", str(exc)) from None
    if not lines or lines[0].get("format") != RECORD_FORMAT:
        raise StageError("input", f"{path} is not an ltescan record file")
    if lines[0].get("version") != RECORD_VERSION:
        raise StageError("input", f"{path} has record version {lines[0].get('version')}")
    return lines[0], lines[1:]


def _verbose(args, stage, **info):
    if args.verbose:
        print(f"[{stage}] " + " ".join(f"{k}={v}" for k, v in _clean(info).items()), file=sys.stderr)


# --- scan -------------------------------------------------------------------

def _cell_record(c, db=None):
    rec = {"pci": c.pci, "peak": c.peak, "rsrp_dbfs": c.rsrp_dbfs, "timing_offset": c.timing_offset,
           "mib": None, "ecgi": c.ecgi}
    if c.mib is not None:
        rec["mib"] = {"n_rb": c.mib.n_rb, "sfn": c.mib.sfn, "cell_ref_ports": c.mib.cell_ref_ports,
                      "phich_duration": c.mib.phich_duration, "phich_resource": c.mib.phich_resource}
    if c.sib1 is not None:
        rec["sib1"] = {"mcc": c.sib1.mcc, "mnc": c.sib1.mnc, "tac": c.sib1.tac, "cid": c.sib1.cid,
                       "plmn_count": c.sib1.plmn_count}
    if db is not None and c.ecgi:
        site = db.lookup(c.ecgi)
        rec["site"] = None if site is None else {"lat": site.latitude_deg, "lon": site.longitude_deg}
    return rec


def scan_one(samples, rate, config, db=None):
    res = scan_capture(samples, rate, config)
    cells = [_cell_record(c, db) for c in res.cells]
    best = res.strongest
    return {
        "cfo_hz": res.cfo_hz,
        "coverage": best is not None,
        "status": "ok" if best is not None else "no coverage",
        "cells": cells,
        "strongest": None if best is None else {"pci": best.pci, "rsrp_dbfs": best.rsrp_dbfs,
                                                "ecgi": best.ecgi},
        "trace": {str(c.pci): c.trace for c in res.cells},
    }


def _scan_job(job):
    ref, config, want_trace = job
    cap = ref.load()
    rec = scan_one(cap.samples, cap.sample_rate_hz, config)
    if not want_trace:
        rec.pop("trace")
    return rec


def _load_db(args):
    path = args.cell_db or os.environ.get(CELL_DB_ENV)
    if not path:
        return None
    paths = [p for p in str(path).split(os.pathsep) if p]
    try:
        return load_cell_dbs(paths)
    except (OSError, CellDbError) as exc:
        raise StageError("cell-db", str(exc)) from None


def _scan_config(args):
    cfg = ScanConfig()
    if getattr(args, "no_sib1", False):
        cfg.decode_sib1 = False
    return cfg


def cmd_scan(args):
    config = _scan_config(args)
    db = _load_db(args)
    if args.manifest:
        try:
            session = load_session(args.manifest, check_checksum=not args.no_checksum)
        except (OSError, CaptureError) as exc:
            raise StageError("manifest", str(exc)) from None
        refs = session.captures
    elif args.capture:
        if not args.rate:
            raise StageError("arguments", "--rate is required when scanning a single file")
        from .capture import iq_sample_count
        try:
            n = iq_sample_count(args.capture)
        except (OSError, CaptureError) as exc:
            raise StageError("capture", str(exc)) from None
        refs = [CaptureRef((Path(args.capture),), args.freq, args.rate, EPOCH, n)]
    else:
        raise StageError("arguments", "give --manifest or a capture file")
    out = RecordWriter(args.out, "scan")
    jobs = [(r, config, args.verbose) for r in refs]
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_scan_job, jobs))
        else:
            results = [_scan_job(j) for j in jobs]
    except (OSError, CaptureError) as exc:
        raise StageError("capture", str(exc)) from None
    for i, (ref, rec) in enumerate(zip(refs, results)):
        if db is not None:
            for c in rec["cells"]:
                if c.get("ecgi"):
                    site = db.lookup(c["ecgi"])
                    c["site"] = None if site is None else {"lat": site.latitude_deg,
                                                           "lon": site.longitude_deg}
        trace = rec.pop("trace", None)
        if trace is not None:
            _verbose(args, "scan", index=i, cfo_hz=rec["cfo_hz"], trace=trace)
        rec.update({"index": i, "paths": [str(p) for p in ref.paths], "freq_hz": ref.center_freq_hz,
                    "rate_hz": ref.sample_rate_hz, "start_time": format_time(ref.start_time),
                    "duration_s": ref.duration_s})
        out.write(rec)
    out.close()
    return 0


def _single_capture(args):
    try:
        cap = load_iq_capture(args.capture, args.rate, args.freq)
    except (OSError, CaptureError) as exc:
        raise StageError("capture", str(exc)) from None
    return cap


def cmd_decode(args, sib1):
    cap = _single_capture(args)
    config = ScanConfig()
    config.decode_sib1 = sib1
    res = scan_capture(cap.samples, cap.sample_rate_hz, config)
    _verbose(args, "cfo", f_offset_hz=res.cfo_hz)
    out = RecordWriter(args.out, "decode-sib1" if sib1 else "decode-mib")
    for c in res.cells:
        _verbose(args, "cellsearch", pci=c.pci, peak=c.peak, timing=c.timing_offset,
                 sss_metric=c.trace.get("sss_metric"))
        _verbose(args, "rsrp", pci=c.pci, rsrp_dbfs=c.rsrp_dbfs)
        _verbose(args, "mib", pci=c.pci, ok=c.mib_ok, bursts=c.trace.get("mib_bursts"))
        if sib1:
            for step in c.trace.get("sib1", []) if isinstance(c.trace.get("sib1"), list) else []:
                _verbose(args, "sib1", pci=c.pci, **step)
        out.write(_cell_record(c))
    if not res.cells:
        out.write({"status": "no coverage", "cfo_hz": res.cfo_hz})
    out.close()
    return 0


# --- analyze ----------------------------------------------------------------

def _decodes_from_records(records):
    decodes = []
    for r in records:
        dets = tuple(Detection(c["pci"], c["rsrp_dbfs"], c.get("mib") is not None, c.get("ecgi"))
                     for c in r.get("cells", []) if c.get("rsrp_dbfs") is not None)
        decodes.append(CaptureDecode(parse_time(r["start_time"]), r.get("duration_s", 0.0),
                                     r.get("freq_hz"), dets))
    return decodes


def cmd_analyze(args):
    _, records = read_records(args.scan)
    fixes = []
    if args.manifest:
        try:
            fixes = load_session(args.manifest, check_checksum=not args.no_checksum).fixes
        except (OSError, CaptureError) as exc:
            raise StageError("manifest", str(exc)) from None
    for g in args.gps or ():
        fixes += load_gps_log(g, check_checksum=not args.no_checksum).fixes
    fixes.sort(key=lambda f: f.time_utc)
    try:
        db = _load_db(args)
    except StageError as exc:
        print(f"warning: {exc}; distance statistics omitted", file=sys.stderr)
        db = None
    if db is None:
        print("warning: no cell database; distance statistics omitted", file=sys.stderr)
    thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds else []
    try:
        bins = HistogramBins.parse(args.bins) if args.bins else HistogramBins()
    except ValueError as exc:
        raise StageError("arguments", str(exc)) from None
    samples = build_drive_samples(_decodes_from_records(records), fixes, db)
    written = write_tables(samples, args.out or ".", thresholds, bins)
    summary = {"n_samples": len(samples), "n_covered": sum(s.strongest is not None for s in samples),
               "n_with_fix": sum(s.fix is not None for s in samples),
               "n_with_distance": sum(s.bs_distance_m is not None for s in samples),
               "tables": written}
    if thresholds:
        runs = disconnected_durations(samples, thresholds)
        summary["disconnected_total_s"] = {f"{t:g}": sum(r.duration_s for r in runs[t]) for t in thresholds}
    if args.population is not None:
        env = classify_environment(args.county or "", args.population)
        summary["environment"] = {"label": env.label, "county": env.county, "population": env.population}
    print(_dumps(summary))
    return 0


# --- generate ---------------------------------------------------------------

def config_from_dict(d):
    d = dict(d)
    sib = d.pop("sib1", None)
    dci = d.pop("dci", None)
    d.pop("impairments", None)
    if sib is not None:
        plmns = tuple(Plmn(p["mcc"], p["mnc"]) for p in sib.pop("plmns", []))
        d["sib1"] = Sib1Info(plmns=plmns, **sib)
    if dci is not None:
        d["dci"] = DciMessage(n_rb=d.get("n_rb", 6), **dci)
    return DownlinkConfig(**d)


def cmd_generate(args):
    try:
        raw = json.loads(Path(args.config).read_text()) if args.config else {}
        cfg = config_from_dict(raw)
    except (OSError, ValueError, TypeError) as exc:
        raise StageError("config", str(exc)) from None
    imp = dict(raw.get("impairments", {}))
    if args.rate:
        cfg = replace(cfg, rate_hz=args.rate)
    if args.freq:
        cfg = replace(cfg, center_freq_hz=args.freq)
    for key, val in (("snr_db", args.snr), ("cfo_hz", args.cfo), ("delay_samples", args.delay)):
        if val is not None:
            imp[key] = val
    try:
        cap = generate_downlink(cfg)
    except ConfigError as exc:
        raise StageError("generate", str(exc)) from None
    spec = ImpairmentSpec(cfo_hz=float(imp.get("cfo_hz", 0.0)), snr_db=float(imp.get("snr_db", math.inf)),
                          delay_samples=int(imp.get("delay_samples", 0)),
                          flat_gain=complex(imp.get("gain", 1.0)))
    cap = impair(cap, spec, np.random.default_rng(args.seed))
    if not args.out:
        raise StageError("arguments", "--out is required for generate")
    write_iq_capture(args.out, cap)
    truth = {"pci": cfg.pci, "n_rb": cfg.n_rb, "sfn0": cfg.sfn0, "cell_ref_ports": cfg.cell_ref_ports,
             "phich_duration": cfg.phich_duration, "phich_resource": cfg.phich_resource, "cfi": cfg.cfi,
             "ecgi": f"{cfg.sib1.mcc}-{cfg.sib1.mnc}-{cfg.sib1.cid:07X}", "rate_hz": cap.sample_rate_hz,
             "n_samples": int(cap.samples.size), "out": str(args.out),
             "impairments": {"cfo_hz": spec.cfo_hz, "snr_db": spec.snr_db,
                             "delay_samples": spec.delay_samples}}
    print(_dumps(truth))
    return 0


# --- gps-parse --------------------------------------------------------------

def cmd_gps_parse(args):
    fh = open(args.out, "w", encoding="utf-8") if args.out and args.out != "-" else sys.stdout
    fh.write("time_utc,latitude_deg,longitude_deg,speed_knots,speed_mps,valid\n")
    errors = 0
    for path in args.files:
        try:
            g = load_gps_log(path, check_checksum=not args.no_checksum)
        except OSError as exc:
            raise StageError("gps", str(exc)) from None
        errors += g.n_errors
        for f in g.fixes:
            fh.write(f"{format_time(f.time_utc)},{f.latitude_deg:.7f},{f.longitude_deg:.7f},"
                     f"{f.speed_knots:.3f},{f.speed_mps:.3f},{int(f.valid)}\n")
    if fh is not sys.stdout:
        fh.close()
    if errors:
        print(f"warning: {errors} malformed RMC sentences skipped", file=sys.stderr)
    return 0


# --- argument parsing -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ltescan", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output file or directory ('-' for stdout)")
        sp.add_argument("--verbose", action="store_true", help="per-stage trace on stderr")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--no-checksum", action="store_true", help="accept NMEA without checksums")

    sp = sub.add_parser("scan", help="detect and decode cells in each capture of a session")
    common(sp)
    sp.add_argument("capture", nargs="?", help="single capture file (instead of --manifest)")
    sp.add_argument("--manifest")
    sp.add_argument("--cell-db", help=f"cell database CSV (default ${CELL_DB_ENV})")
    sp.add_argument("--rate", type=float)
    sp.add_argument("--freq", type=float)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--no-sib1", action="store_true")

    for name in ("decode-mib", "decode-sib1"):
        sp = sub.add_parser(name, help=f"single-capture {name[7:].upper()} decode with stage trace")
        common(sp)
        sp.add_argument("capture")
        sp.add_argument("--rate", type=float, required=True)
        sp.add_argument("--freq", type=float)

    sp = sub.add_parser("analyze", help="drive-test statistics from scan records")
    common(sp)
    sp.add_argument("scan", help="scan record file")
    sp.add_argument("--manifest", help="session manifest (for GPS logs)")
    sp.add_argument("--gps", nargs="*", help="extra NMEA logs")
    sp.add_argument("--cell-db")
    sp.add_argument("--thresholds", help="comma-separated RSRP thresholds in dB")
    sp.add_argument("--bins", help="e.g. rsrp=-60:60:5,distance=0:10000:500,velocity=0:40:2")
    sp.add_argument("--county")
    sp.add_argument("--population", type=int)

    sp = sub.add_parser("generate", help="synthesise a downlink capture from a JSON config")
    common(sp)
    sp.add_argument("--config", help="DownlinkConfig JSON file")
    sp.add_argument("--rate", type=float)
    sp.add_argument("--freq", type=float)
    sp.add_argument("--snr", type=float)
    sp.add_argument("--cfo", type=float)
    sp.add_argument("--delay", type=int)

    sp = sub.add_parser("gps-parse", help="NMEA RMC log(s) to a CSV fix table")
    common(sp)
    sp.add_argument("files", nargs="+")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "scan": cmd_scan,
        "decode-mib": lambda a: cmd_decode(a, False),
        "decode-sib1": lambda a: cmd_decode(a, True),
        "analyze": cmd_analyze,
        "generate": cmd_generate,
        "gps-parse": cmd_gps_parse,
    }
    try:
        return handlers[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CaptureError, NmeaError, ConfigError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
