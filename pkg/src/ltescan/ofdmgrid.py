"""OFDM modulation/demodulation, cell-specific reference signals, channel
estimation and RSRP measurement."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import resources as res
from .fec.scrambling import gold_sequence
from .tables import (FFT_SIZE_BY_NRB, N_RB_BY_CODE, SAMPLE_RATE_BY_NRB,
                     SYMBOLS_PER_SLOT, SYMBOLS_PER_SUBFRAME, cp_lengths,
                     fft_size, native_rate, slot_length)


FREQ_SPAN = 3


class NoSignalError(ValueError):
    """Raised when an operation needs reference-signal energy and there is none."""


@dataclass
class ResourceGrid:
    """Subcarriers x OFDM symbols. Column 0 is symbol 0 of subframe ``first_subframe``."""

    re: np.ndarray
    n_rb: int
    pci: int | None = None
    cp_mode: str = "normal"
    first_subframe: int = 0

    def __post_init__(self):
        if self.n_rb not in N_RB_BY_CODE:
            raise ValueError(f"unsupported bandwidth {self.n_rb} RB")
        if self.re.ndim != 2 or self.re.shape[0] != 12 * self.n_rb:
            raise ValueError(f"grid must have {12 * self.n_rb} rows, got shape {self.re.shape}")

    @property
    def n_subcarriers(self):
        return self.re.shape[0]

    @property
    def n_symbols(self):
        return self.re.shape[1]

    @property
    def n_subframes(self):
        return self.n_symbols // SYMBOLS_PER_SUBFRAME

    def subframe(self, i):
        """14-column view of the i-th subframe counted from column 0."""
        return self.re[:, SYMBOLS_PER_SUBFRAME * i:SYMBOLS_PER_SUBFRAME * (i + 1)]

    def scaled(self, factor):
        return ResourceGrid(self.re * factor, self.n_rb, self.pci, self.cp_mode,
                            self.first_subframe)


@dataclass
class RsrpMeasurement:
    rsrp_dbfs: float
    n_crs_res: int
    pci: int

    @property
    def no_signal(self):
        return not np.isfinite(self.rsrp_dbfs)


@dataclass
class ChannelEstimate:
    h: np.ndarray
    noise_var: float
    port: int = 0
    ls: dict = field(default_factory=dict, repr=False)


def subcarrier_bins(n_rb, nfft=None):
    """FFT bin of each grid row (DC left empty)."""
    nfft = nfft or fft_size(n_rb)
    n_sc = 12 * n_rb
    k = np.arange(n_sc)
    rel = np.where(k < n_sc // 2, k - n_sc // 2, k - n_sc // 2 + 1)
    return rel % nfft, rel


def _check_rate(n_rb, rate_hz):
    if rate_hz is None:
        return
    want = native_rate(n_rb)
    if abs(rate_hz - want) > 1e-6 * want:
        table = ", ".join(f"{n} RB: {SAMPLE_RATE_BY_NRB[n] / 1e6:g} MHz" for n in N_RB_BY_CODE)
        raise ValueError(f"sample rate {rate_hz / 1e6:g} MHz does not match {n_rb} RB "
                         f"(expected rates: {table})")


def _symbol_layout(nfft, n_symbols, first_symbol=0):
    """CP start and CP length of ``n_symbols`` consecutive symbols."""
    cps = cp_lengths(nfft)
    lens = np.array([cps[(first_symbol + i) % SYMBOLS_PER_SLOT] for i in range(n_symbols)])
    starts = np.concatenate([[0], np.cumsum(lens + nfft)[:-1]]) if n_symbols else lens
    return starts.astype(np.int64), lens


def modulate(re, n_rb):
    """Time-domain samples (native rate) for a grid starting at a slot boundary."""
    re = np.asarray(re)
    nfft = fft_size(n_rb)
    n_sym = re.shape[1]
    bins, _ = subcarrier_bins(n_rb, nfft)
    spec = np.zeros((n_sym, nfft), dtype=complex)
    spec[:, bins] = re.T
    body = np.fft.ifft(spec, axis=1, norm="ortho")
    starts, lens = _symbol_layout(nfft, n_sym)
    out = np.empty(int(starts[-1] + lens[-1] + nfft) if n_sym else 0, dtype=complex)
    for cp in np.unique(lens):
        sel = np.nonzero(lens == cp)[0]
        idx = starts[sel, None] + np.arange(cp + nfft)[None, :]
        out[idx] = np.concatenate([body[sel, nfft - cp:], body[sel]], axis=1)
    return out


def demodulate(x, timing_offset, n_rb, pci=None, n_symbols=None, rate_hz=None,
               window_advance=0, first_subframe=0):
    """Resource grid from samples whose frame/subframe boundary is at ``timing_offset``.

    ``window_advance`` moves the FFT window that many samples into the cyclic
    prefix; the resulting phase ramp is compensated so a perfectly timed input
    still yields the transmitted grid.
    """
    _check_rate(n_rb, rate_hz)
    x = np.asarray(x)
    nfft = fft_size(n_rb)
    if timing_offset < 0:
        raise ValueError("timing_offset must be non-negative")
    if not 0 <= window_advance <= cp_lengths(nfft)[1]:
        raise ValueError("window_advance must lie within the cyclic prefix")
    avail = x.size - timing_offset
    per_slot = slot_length(nfft)
    max_sym = SYMBOLS_PER_SLOT * (avail // per_slot)
    rem = avail % per_slot
    starts_slot, lens_slot = _symbol_layout(nfft, SYMBOLS_PER_SLOT)
    max_sym += int(np.sum(starts_slot + lens_slot + nfft <= rem))
    if n_symbols is None:
        n_symbols = max_sym
    elif n_symbols > max_sym:
        raise ValueError(f"input holds only {max_sym} whole symbols, {n_symbols} requested")
    starts, lens = _symbol_layout(nfft, n_symbols)
    if n_symbols == 0:
        return ResourceGrid(np.zeros((12 * n_rb, 0), complex), n_rb, pci, "normal", first_subframe)
    begin = timing_offset + starts + lens - window_advance
    blocks = x[begin[:, None] + np.arange(nfft)[None, :]]
    spec = np.fft.fft(blocks, axis=1, norm="ortho")
    bins, rel = subcarrier_bins(n_rb, nfft)
    re = spec[:, bins].T
    if window_advance:
        re = re * np.exp(2j * np.pi * rel * window_advance / nfft)[:, None]
    return ResourceGrid(np.ascontiguousarray(re), n_rb, pci, "normal", first_subframe)


# --- reference signals ----------------------------------------------------

@lru_cache(maxsize=4096)
def _crs_full(pci, ns, l_slot):
    c_init = 2 ** 10 * (7 * (ns + 1) + l_slot + 1) * (2 * pci + 1) + 2 * pci + 1
    c = gold_sequence(c_init, 4 * 110).astype(float)
    r = ((1 - 2 * c[0::2]) + 1j * (1 - 2 * c[1::2])) / np.sqrt(2)
    r.setflags(write=False)
    return r


def crs_values(pci, n_rb, ns, l_slot):
    """Reference symbols of one OFDM symbol, one per pilot in ascending subcarrier order."""
    return _crs_full(pci, ns % 20, l_slot)[res.crs_sequence_index(n_rb)]


@dataclass
class CrsSet:
    k: np.ndarray
    l: np.ndarray
    values: np.ndarray

    def __len__(self):
        return self.k.size

    def __iter__(self):
        return iter(zip(self.k.tolist(), self.l.tolist(), self.values.tolist()))


def generate_crs(pci, port=0, n_rb=6, n_symbols=SYMBOLS_PER_SUBFRAME, first_subframe=0):
    """Reference-signal REs of ``port`` over ``n_symbols`` grid columns."""
    if not 0 <= pci <= 503:
        raise ValueError(f"PCI {pci} outside 0..503")
    ks, ls, vs = [], [], []
    for col in range(n_symbols):
        l_sf = col % SYMBOLS_PER_SUBFRAME
        if l_sf not in res.crs_symbols(port):
            continue
        sf = first_subframe + col // SYMBOLS_PER_SUBFRAME
        ns = (2 * sf + l_sf // SYMBOLS_PER_SLOT) % 20
        k = res.crs_subcarriers(pci, n_rb, port, l_sf)
        ks.append(k)
        ls.append(np.full(k.size, col))
        vs.append(crs_values(pci, n_rb, ns, l_sf % SYMBOLS_PER_SLOT))
    if not ks:
        e = np.empty(0)
        return CrsSet(e.astype(np.int64), e.astype(np.int64), e.astype(complex))
    return CrsSet(np.concatenate(ks), np.concatenate(ls), np.concatenate(vs))


def _extrapolating_interp(x, xp, fp):
    out = np.interp(x, xp, fp)
    if xp.size >= 2:
        lo = x < xp[0]
        hi = x > xp[-1]
        out[lo] = fp[0] + (x[lo] - xp[0]) * (fp[1] - fp[0]) / (xp[1] - xp[0])
        out[hi] = fp[-1] + (x[hi] - xp[-1]) * (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
    return out


def _box(v, half):
    n = v.size
    c = np.cumsum(np.concatenate([[0], v]))
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    return (c[hi] - c[lo]) / (hi - lo)


def _smooth_symbol(ls, pos, span=3):
    """Remove the common phase ramp, box-smooth over ``span`` pilots, reapply.

    Returns smoothed values, their positions, the ramp step and the residual
    of a 3-tap fit (used for the noise estimate).
    """
    if ls.size >= 2:
        step = np.angle(np.sum(ls[1:] * np.conj(ls[:-1]))) / np.median(np.diff(pos))
    else:
        step = 0.0
    flat = ls / np.exp(1j * step * pos)
    sm = _box(flat, span // 2)
    spos = _box(pos.astype(float), span // 2)
    resid = flat[1:-1] - _box(flat, 1)[1:-1]
    return sm * np.exp(1j * step * spos), spos, step, resid


def estimate_channel(grid, pci=None, port=0, time_span=3, freq_span=FREQ_SPAN):
    """Least-squares channel estimate at the CRS of ``port``, interpolated over the grid.

    Linear interpolation in frequency (on the FFT-bin axis, so a timing
    ramp stays linear across DC). In time, a moving average over
    ``time_span`` reference symbols followed by linear interpolation
    (held flat beyond the first and last reference symbol).
    """
    pci = grid.pci if pci is None else pci
    n_sc, n_sym = grid.re.shape
    crs = generate_crs(pci, port, grid.n_rb, n_sym, grid.first_subframe)
    if len(crs) == 0:
        raise NoSignalError("grid contains no reference symbols for this port")
    rx = grid.re[crs.k, crs.l]
    if not np.any(np.abs(rx) > 0):
        raise NoSignalError("no reference-signal energy in grid")
    _, rel = subcarrier_bins(grid.n_rb)
    cols = np.unique(crs.l)
    h_cols = np.empty((n_sc, cols.size), dtype=complex)
    resid_all = []
    ls_by_col = {}
    for i, col in enumerate(cols):
        sel = crs.l == col
        ls = rx[sel] / crs.values[sel]
        pos = rel[crs.k[sel]].astype(float)
        ls_by_col[int(col)] = ls
        sm, spos, step, resid = _smooth_symbol(ls, pos, freq_span)
        resid_all.append(resid)
        ramp_all = np.exp(1j * step * rel)
        flat = sm * np.exp(-1j * step * spos)
        h_cols[:, i] = ramp_all * (_extrapolating_interp(rel, spos, flat.real)
                                   + 1j * _extrapolating_interp(rel, spos, flat.imag))
    # moving average over neighbouring reference symbols, then linear in time
    if time_span > 1 and cols.size > 1:
        c = np.cumsum(np.concatenate([np.zeros((n_sc, 1)), h_cols], axis=1), axis=1)
        idx = np.arange(cols.size)
        lo = np.maximum(idx - time_span // 2, 0)
        hi = np.minimum(idx + time_span // 2 + 1, cols.size)
        h_cols = (c[:, hi] - c[:, lo]) / (hi - lo)
    sym = np.arange(n_sym)
    w = np.stack([np.interp(sym, cols, np.eye(cols.size)[i]) for i in range(cols.size)])
    h = h_cols @ w
    resid = np.concatenate(resid_all) if resid_all else np.zeros(0)
    noise_var = 1.5 * float(np.mean(np.abs(resid) ** 2)) if resid.size else 0.0
    return ChannelEstimate(h, noise_var, port, ls_by_col)


def equalize(grid, estimate):
    """Zero-forcing equalisation: divide each RE by its channel estimate."""
    h = estimate.h
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.abs(h) > 0, grid.re / h, 0)
    return ResourceGrid(out, grid.n_rb, grid.pci, grid.cp_mode, grid.first_subframe)


def measure_rsrp(grid, pci=None, port=0):
    """Mean power over the port-0 reference-signal REs, in dB relative to full scale."""
    pci = grid.pci if pci is None else pci
    crs = generate_crs(pci, port, grid.n_rb, grid.n_symbols, grid.first_subframe)
    if len(crs) < 8:
        raise ValueError("RSRP needs at least 8 reference-signal REs")
    p = float(np.mean(np.abs(grid.re[crs.k, crs.l]) ** 2))
    db = 10 * np.log10(p) if p > 0 else float("-inf")
    return RsrpMeasurement(db, len(crs), pci)
