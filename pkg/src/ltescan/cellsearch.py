"""Cell search: PSS/SSS sequences, physical cell identity and frame timing,
blind CP-based carrier frequency offset estimation and correction."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import dsp
from .ofdmgrid import subcarrier_bins
from .tables import (FRAME_LEN_SYNC, HALF_FRAME_LEN_SYNC, SLOT_LEN_SYNC,
                     SYNC_FFT, SYNC_RATE_HZ, cp_lengths, symbol_starts)

PSS_ROOTS = (25, 29, 34)
# Useful-part start of the PSS symbol (slot 0, symbol 6) within subframe 0 at 1.92 MHz
PSS_FRAME_OFFSET = int(symbol_starts(SYNC_FFT, 7)[6]) + cp_lengths(SYNC_FFT)[6]
SSS_LAG = SYNC_FFT + cp_lengths(SYNC_FFT)[5]
CP_STARTS = tuple(int(s) for s in symbol_starts(SYNC_FFT, 7))
MAX_CFO_HZ = SYNC_RATE_HZ / SYNC_FFT / 2


@dataclass(frozen=True)
class CellDetection:
    pci: int
    n_id1: int
    n_id2: int
    timing_offset_samples: int
    peak: float
    detected_subframe: int
    sss_metric: float = 0.0

    def __post_init__(self):
        if self.pci != 3 * self.n_id1 + self.n_id2:
            raise ValueError("pci must equal 3*n_id1 + n_id2")
        if not 0 <= self.timing_offset_samples < FRAME_LEN_SYNC:
            raise ValueError("timing offset outside one frame")


@dataclass(frozen=True)
class CfoEstimate:
    phi_per_sample_rad: float
    f_offset_hz: float
    slot_timing: int = 0
    quality: float = 0.0

    @classmethod
    def from_hz(cls, f_hz, rate_hz=SYNC_RATE_HZ):
        return cls(2 * np.pi * f_hz / rate_hz, float(f_hz))


@dataclass
class CellSearchConfig:
    threshold: float = 0.15
    floor_ratio: float = 4.0
    top_k: int = 3
    suppress_samples: int = 64
    correct_cfo: bool = True


# --- sequences --------------------------------------------------------------

def generate_pss(n_id2):
    if n_id2 not in (0, 1, 2):
        raise ValueError(f"n_id2 must be 0, 1 or 2, got {n_id2}")
    u = PSS_ROOTS[n_id2]
    n = np.arange(62)
    m = np.where(n < 31, n * (n + 1), (n + 1) * (n + 2))
    return np.exp(-1j * np.pi * u * m / 63)


def _msequence(taps):
    x = np.zeros(31, dtype=np.int64)
    x[4] = 1
    for i in range(26):
        x[i + 5] = np.sum(x[[i + t for t in taps]]) % 2
    return 1 - 2 * x


_S_TILDE = _msequence((2, 0))
_C_TILDE = _msequence((3, 0))
_Z_TILDE = _msequence((4, 2, 1, 0))


def sss_indices(n_id1):
    qp = n_id1 // 30
    q = (n_id1 + qp * (qp + 1) // 2) // 30
    mp = n_id1 + q * (q + 1) // 2
    m0 = mp % 31
    m1 = (m0 + mp // 31 + 1) % 31
    return m0, m1


def generate_sss(n_id1, n_id2, subframe):
    if not 0 <= n_id1 <= 167:
        raise ValueError(f"n_id1 must be in 0..167, got {n_id1}")
    if n_id2 not in (0, 1, 2):
        raise ValueError(f"n_id2 must be 0, 1 or 2, got {n_id2}")
    if subframe not in (0, 5):
        raise ValueError(f"SSS exists only in subframes 0 and 5, got {subframe}")
    m0, m1 = sss_indices(n_id1)
    n = np.arange(31)
    s0 = _S_TILDE[(n + m0) % 31]
    s1 = _S_TILDE[(n + m1) % 31]
    c0 = _C_TILDE[(n + n_id2) % 31]
    c1 = _C_TILDE[(n + n_id2 + 3) % 31]
    z0 = _Z_TILDE[(n + m0 % 8) % 31]
    z1 = _Z_TILDE[(n + m1 % 8) % 31]
    d = np.empty(62)
    if subframe == 0:
        d[0::2] = s0 * c0
        d[1::2] = s1 * c1 * z0
    else:
        d[0::2] = s1 * c0
        d[1::2] = s0 * c1 * z1
    return d


@lru_cache(maxsize=3)
def _sss_tables(n_id2):
    t0 = np.array([generate_sss(n1, n_id2, 0) for n1 in range(168)])
    t5 = np.array([generate_sss(n1, n_id2, 5) for n1 in range(168)])
    return t0, t5


def _sync_bins():
    bins, _ = subcarrier_bins(6, SYNC_FFT)
    return bins[5:67]


@lru_cache(maxsize=3)
def pss_time_reference(n_id2):
    """Useful part (128 samples at 1.92 MHz) of the PSS OFDM symbol."""
    spec = np.zeros(SYNC_FFT, dtype=complex)
    spec[_sync_bins()] = generate_pss(n_id2)
    ref = np.fft.ifft(spec, norm="ortho")
    ref.setflags(write=False)
    return ref


# --- frequency offset -------------------------------------------------------

def _data(x):
    return x.data if isinstance(x, dsp.ComplexSeries) else np.asarray(x, dtype=complex)


def estimate_cfo(x, rate_hz=SYNC_RATE_HZ):
    """Blind CFO from the phase of CP delay products accumulated over all slots.

    The slot timing that maximises the summed CP metric at the seven CP starts
    selects which products enter the phase average.
    """
    if isinstance(x, dsp.ComplexSeries):
        rate_hz = x.rate_hz
    if abs(rate_hz - SYNC_RATE_HZ) > 1:
        raise ValueError("CFO estimation expects 1.92 MHz input")
    data = _data(x)
    if data.size < SLOT_LEN_SYNC + SYNC_FFT:
        raise ValueError(f"need at least {SLOT_LEN_SYNC + SYNC_FFT} samples for CFO estimation")
    fold = dsp.cp_fold(data)
    offs = np.array(CP_STARTS)
    idx = (np.arange(SLOT_LEN_SYNC)[:, None] + offs[None, :]) % SLOT_LEN_SYNC
    score = np.abs(fold)[idx].sum(axis=1)
    tau = int(np.argmax(score))
    total = fold[idx[tau]].sum()
    phi = float(np.angle(np.conj(total))) / SYNC_FFT
    if phi <= -np.pi / SYNC_FFT:
        phi += 2 * np.pi / SYNC_FFT
    quality = float(score[tau] / (np.median(score) + 1e-300))
    return CfoEstimate(phi, phi * rate_hz / (2 * np.pi), tau, quality)


def correct_cfo(x, est, rate_hz=SYNC_RATE_HZ):
    """Remove the estimated offset by counter-rotating the samples."""
    if isinstance(x, dsp.ComplexSeries):
        rate_hz = x.rate_hz
    f = est.f_offset_hz if isinstance(est, CfoEstimate) else float(est)
    data = _data(x)
    if f == 0:
        out = data.copy()
    else:
        out = data * np.exp(-2j * np.pi * f * np.arange(data.size) / rate_hz)
    return dsp.ComplexSeries(out, rate_hz) if isinstance(x, dsp.ComplexSeries) else out


# --- PCI / timing -----------------------------------------------------------

def _fold_mean(r, period):
    n = r.size
    full = n // period
    acc = np.zeros(period)
    cnt = np.zeros(period)
    if full:
        acc += r[:full * period].reshape(full, period).sum(axis=0)
        cnt += full
    tail = n - full * period
    acc[:tail] += r[full * period:]
    cnt[:tail] += 1
    with np.errstate(invalid="ignore"):
        return np.where(cnt > 0, acc / np.maximum(cnt, 1), 0.0)


def pss_fold(x):
    """Half-frame-folded normalised PSS correlation, shape (3, 9600)."""
    data = _data(x)
    return np.array([_fold_mean(dsp.sliding_correlate(data, pss_time_reference(n2)),
                                HALF_FRAME_LEN_SYNC) for n2 in range(3)])


def _peaks(curve, k, guard):
    c = curve.copy()
    out = []
    n = c.size
    for _ in range(k):
        i = int(np.argmax(c))
        if c[i] <= 0:
            break
        out.append((float(curve[i]), i))
        lo, hi = i - guard, i + guard + 1
        idx = np.arange(lo, hi) % n
        c[idx] = -1.0
    return out


def _sss_decide(data, n_id2, pos):
    """Identify n_id1 and which subframe the PSS at half-frame position ``pos`` sits in."""
    bins = _sync_bins()
    ref = generate_pss(n_id2)
    acc = [np.zeros(62, complex), np.zeros(62, complex)]
    first = None
    j = 0
    while True:
        p = pos + j * HALF_FRAME_LEN_SYNC
        if p + SYNC_FFT > data.size:
            break
        s = p - SSS_LAG
        if s >= 0:
            if first is None:
                first = j
            yp = np.fft.fft(data[p:p + SYNC_FFT], norm="ortho")[bins]
            ys = np.fft.fft(data[s:s + SYNC_FFT], norm="ortho")[bins]
            h = yp * np.conj(ref)
            acc[(j - first) % 2] += ys * np.conj(h)
        j += 1
    if first is None:
        return None
    t0, t5 = _sss_tables(n_id2)
    a, b = acc[0].real, acc[1].real
    m_first0 = t0 @ a + t5 @ b
    m_first5 = t5 @ a + t0 @ b
    both = np.stack([m_first0, m_first5])
    hyp, n_id1 = np.unravel_index(int(np.argmax(both)), both.shape)
    norm = np.sum(np.abs(acc[0])) + np.sum(np.abs(acc[1]))
    metric = float(both[hyp, n_id1] / norm) if norm > 0 else 0.0
    p_first = pos + first * HALF_FRAME_LEN_SYNC
    p_sf0 = p_first if hyp == 0 else p_first - HALF_FRAME_LEN_SYNC
    timing = (p_sf0 - PSS_FRAME_OFFSET) % FRAME_LEN_SYNC
    return int(n_id1), int(timing), (0 if hyp == 0 else 5), metric


def detect_cells(x, config=None, rate_hz=SYNC_RATE_HZ):
    """Up to ``top_k`` detections above threshold, strongest first."""
    cfg = config or CellSearchConfig()
    if isinstance(x, dsp.ComplexSeries):
        rate_hz = x.rate_hz
    if abs(rate_hz - SYNC_RATE_HZ) > 1:
        raise ValueError("cell search expects 1.92 MHz input")
    data = _data(x)
    if data.size < FRAME_LEN_SYNC:
        raise ValueError(f"cell search needs at least one frame ({FRAME_LEN_SYNC} samples)")
    if cfg.correct_cfo:
        data = correct_cfo(data, estimate_cfo(data))
    folds = pss_fold(data)
    floor = float(np.median(folds))
    cands = []
    for n2 in range(3):
        for val, pos in _peaks(folds[n2], cfg.top_k, cfg.suppress_samples):
            if val >= cfg.threshold and val >= cfg.floor_ratio * floor:
                cands.append((val, n2, pos))
    dets = {}
    for val, n2, pos in sorted(cands, key=lambda c: -c[0]):
        got = _sss_decide(data, n2, pos)
        if got is None:
            continue
        n1, timing, sf, metric = got
        pci = 3 * n1 + n2
        det = CellDetection(pci, n1, n2, timing, min(val, 1.0), sf, metric)
        if pci not in dets or dets[pci].peak < det.peak:
            dets[pci] = det
    out = sorted(dets.values(), key=lambda d: (-d.peak, d.pci))
    return out[:cfg.top_k]


def detect_cell(x, config=None, rate_hz=SYNC_RATE_HZ):
    """Strongest detection, or None when no PSS peak clears the threshold."""
    dets = detect_cells(x, config, rate_hz)
    return dets[0] if dets else None
