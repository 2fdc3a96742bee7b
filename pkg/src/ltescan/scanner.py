"""Capture-level pipeline: cell search, MIB, RSRP and SIB1/ECGI per detected cell."""

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .cellsearch import CellSearchConfig, correct_cfo, detect_cells, estimate_cfo
from .ofdmgrid import NoSignalError, ResourceGrid, demodulate, measure_rsrp
from .pbch import decode_mib
from .sib1chain import (MAX_CODE_RATE, DlschError, SoftCombiner, UnreliableCfiError,
                        blind_decode_pdcch, decode_cfi, decode_pdsch, is_sib1_frame,
                        pdsch_positions, sib1_rv, subframe_context, SIB1_SUBFRAME)
from .sibparse import ParseError, compose_ecgi, parse_sib1
from .tables import (SYMBOLS_PER_SUBFRAME, SYNC_RATE_HZ, cp_lengths, fft_size, native_rate,
                     slot_length)

MIB_MIN_METRIC = 0.78
DCI_MIN_METRIC = 0.0


@dataclass
class ScanConfig:
    search: CellSearchConfig = field(default_factory=lambda: CellSearchConfig(correct_cfo=False))
    decode_sib1: bool = True
    max_sib1_repetitions: int = 4
    mib_min_metric: float = MIB_MIN_METRIC
    dci_min_metric: float = DCI_MIN_METRIC


@dataclass
class CellReport:
    pci: int
    timing_offset: int
    peak: float
    rsrp_dbfs: float | None = None
    mib: object = None
    sib1: object = None
    ecgi: str | None = None
    trace: dict = field(default_factory=dict)

    @property
    def mib_ok(self):
        return self.mib is not None


@dataclass
class ScanResult:
    cfo_hz: float | None
    cells: list
    notes: list = field(default_factory=list)

    @property
    def decoded(self):
        return [c for c in self.cells if c.mib_ok]

    @property
    def strongest(self):
        dec = self.decoded
        if not dec:
            return None
        return max(dec, key=lambda c: (c.rsrp_dbfs, -c.pci))


def to_sync_rate(samples, rate_hz):
    if abs(rate_hz - SYNC_RATE_HZ) < 1e-6:
        return np.asarray(samples, dtype=complex)
    return dsp.resample(samples, SYNC_RATE_HZ, rate_hz=rate_hz).data


def _window_advance(nfft):
    return cp_lengths(nfft)[1] // 2


def sync_grid(xs, det, pci=None):
    """6-RB grid of all whole frames after the detected frame start."""
    adv = _window_advance(fft_size(6))
    return demodulate(xs, det.timing_offset_samples, 6, pci=det.pci if pci is None else pci,
                      window_advance=adv)


def _subframe_grid(wide, start, n_rb, pci, subframe):
    nfft = fft_size(n_rb)
    if start < 0 or start + 2 * slot_length(nfft) > wide.size:
        return None
    g = demodulate(wide[start:start + 2 * slot_length(nfft)], 0, n_rb, pci=pci,
                   n_symbols=SYMBOLS_PER_SUBFRAME, window_advance=_window_advance(nfft),
                   first_subframe=subframe)
    return g


def decode_sib1_capture(samples, rate_hz, det, mib, cfo_hz, max_repetitions=4,
                        dci_min_metric=DCI_MIN_METRIC, trace=None):
    """Decode SIB1 from a capture whose first whole frame (after ``det`` timing) has SFN ``mib.sfn``."""
    trace = trace if trace is not None else {}
    n_rb, ports, pci = mib.n_rb, mib.cell_ref_ports, det.pci
    rate = native_rate(n_rb)
    if rate_hz < 12 * n_rb * 15e3 * 1.05:
        trace["sib1"] = "capture bandwidth narrower than the cell"
        return None
    wide = samples if abs(rate_hz - rate) < 1e-6 else dsp.resample(samples, rate, rate_hz=rate_hz).data
    wide = correct_cfo(wide, cfo_hz or 0.0, rate_hz=rate)
    scale = rate / SYNC_RATE_HZ
    t0 = int(round(det.timing_offset_samples * scale))
    sf_len = 2 * slot_length(fft_size(n_rb))
    combiner = None
    attempts = []
    f = 0
    while len(attempts) < max_repetitions:
        start = t0 + (10 * f + SIB1_SUBFRAME) * sf_len
        if start + sf_len > wide.size:
            break
        sfn = (mib.sfn + f) % 1024
        f += 1
        if not is_sib1_frame(sfn):
            continue
        g = _subframe_grid(wide, start, n_rb, pci, SIB1_SUBFRAME)
        step = {"sfn": sfn}
        attempts.append(step)
        try:
            ctx = subframe_context(g, pci, ports)
            cfi = decode_cfi(g, ctx=ctx, n_ports=ports)
        except (UnreliableCfiError, NoSignalError) as exc:
            step["error"] = str(exc)
            continue
        step["cfi"] = cfi
        dci = blind_decode_pdcch(g, cfi, ctx=ctx, n_ports=ports, phich_ng=mib.phich_resource,
                                 phich_extended=mib.phich_duration == "extended",
                                 min_metric=dci_min_metric)
        if dci is None:
            step["error"] = "no SI-RNTI grant"
            continue
        step["dci"] = {"format": dci.format, "rb_start": dci.rb_start, "n_vrb": dci.n_vrb,
                       "tbs": dci.tbs_bits, "agg": dci.agg_level, "cce": dci.first_cce}
        k, _ = pdsch_positions(dci, pci, ports, cfi, SIB1_SUBFRAME)
        if (dci.tbs_bits + 24) > MAX_CODE_RATE * 2 * k.size:
            step["error"] = "grant code rate above limit"
            continue
        soft = decode_pdsch(g, dci, cell_ref_ports=ports, cfi=cfi, ctx=ctx)
        if combiner is None or combiner.tbs_bits != dci.tbs_bits:
            combiner = SoftCombiner(dci.tbs_bits, max_repetitions)
        try:
            tb = combiner.add(soft, sib1_rv(sfn))
        except DlschError as exc:
            step["error"] = str(exc)
            combiner = None
            continue
        step["crc_ok"] = tb.crc_ok
        step["combined"] = tb.combined_count
        if tb.crc_ok:
            trace["sib1"] = attempts
            try:
                return parse_sib1(tb)
            except ParseError as exc:
                step["error"] = str(exc)
                return None
    trace["sib1"] = attempts
    return None


def scan_capture(samples, rate_hz, config=None):
    """Detect cells, decode their MIB, measure RSRP and (optionally) decode SIB1."""
    cfg = config or ScanConfig()
    samples = np.asarray(samples, dtype=complex)
    xs = to_sync_rate(samples, rate_hz)
    notes = []
    try:
        cfo = estimate_cfo(xs)
    except ValueError as exc:
        return ScanResult(None, [], [str(exc)])
    xs = correct_cfo(xs, cfo)
    try:
        dets = detect_cells(xs, cfg.search)
    except ValueError as exc:
        return ScanResult(cfo.f_offset_hz, [], [str(exc)])
    cells = []
    for det in dets:
        rep = CellReport(det.pci, det.timing_offset_samples, det.peak)
        rep.trace["cfo_hz"] = cfo.f_offset_hz
        rep.trace["sss_metric"] = det.sss_metric
        grid = sync_grid(xs, det)
        if grid.n_subframes < 1:
            cells.append(rep)
            continue
        rsrp = measure_rsrp(grid)
        rep.rsrp_dbfs = None if rsrp.no_signal else rsrp.rsrp_dbfs
        res = decode_mib(grid, min_metric=cfg.mib_min_metric)
        if res is not None:
            rep.mib = res.mib
            rep.trace["mib_bursts"] = res.n_bursts
            if cfg.decode_sib1:
                info = decode_sib1_capture(samples, rate_hz, det, res.mib, cfo.f_offset_hz,
                                           cfg.max_sib1_repetitions, cfg.dci_min_metric, rep.trace)
                if info is not None:
                    rep.sib1 = info
                    rep.ecgi = compose_ecgi(info).canonical_text
        cells.append(rep)
    return ScanResult(cfo.f_offset_hz, cells, notes)
