"""Shared signal primitives: rational resampling, normalised sliding
correlation and the cyclic-prefix delay-product metric."""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import signal

from .tables import SYNC_FFT, SLOT_LEN_SYNC, cp_lengths


@dataclass
class ComplexSeries:
    data: np.ndarray
    rate_hz: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.rate_hz <= 0:
            raise ValueError("rate must be positive")

    def __len__(self):
        return self.data.size

    @property
    def duration_s(self):
        return self.data.size / self.rate_hz


def _as_series(x, rate_hz=None):
    if isinstance(x, ComplexSeries):
        return x
    if rate_hz is None:
        raise ValueError("a rate is required for raw arrays")
    return ComplexSeries(x, rate_hz)


def rational_ratio(from_rate, to_rate, max_digits=4):
    """Reduced up/down factors for ``to_rate / from_rate``."""
    ratio = Fraction(to_rate / from_rate).limit_denominator(10 ** max_digits)
    if abs(float(ratio) - to_rate / from_rate) > 1e-9 * (to_rate / from_rate):
        raise ValueError(f"rate ratio {to_rate}/{from_rate} is not a small rational")
    if ratio.numerator >= 10 ** max_digits or ratio.denominator >= 10 ** max_digits:
        raise ValueError(f"rate ratio {ratio} needs more than {max_digits} digits")
    return ratio.numerator, ratio.denominator


@lru_cache(maxsize=32)
def _design_filter(up, down):
    """Kaiser windowed-sinc prototype at the up-sampled rate.

    Cutoff sits at 0.45 of the lower sample rate with a transition
    of +-0.05 of that rate and a 65 dB stop band. ``resample_poly`` applies
    the gain of ``up`` itself.
    """
    m = max(up, down)
    cutoff = 0.45 / m
    width = 0.1 / m
    n_taps, beta = signal.kaiserord(65.0, width)
    n_taps |= 1
    h = signal.firwin(n_taps, cutoff, window=("kaiser", beta), fs=1.0)
    h.setflags(write=False)
    return h


def resample(x, to_rate_hz, rate_hz=None):
    """Rational-rate polyphase resampling; output length is round(len * to / from)."""
    s = _as_series(x, rate_hz)
    if to_rate_hz <= 0:
        raise ValueError("target rate must be positive")
    if to_rate_hz == s.rate_hz:
        return ComplexSeries(s.data.copy(), s.rate_hz)
    up, down = rational_ratio(s.rate_hz, to_rate_hz)
    h = _design_filter(up, down)
    y = signal.resample_poly(s.data, up, down, window=h)
    n_out = int(round(s.data.size * up / down))
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.size, dtype=y.dtype)])
    return ComplexSeries(y, to_rate_hz)


def sliding_correlate(x, ref, normalize=True):
    """|sum x[k+m] conj(ref[m])| / (||x window|| ||ref||) for every full-overlap lag k.

    With ``normalize=False`` the raw correlation magnitude is returned.
    """
    data = x.data if isinstance(x, ComplexSeries) else np.asarray(x, dtype=complex)
    ref = np.asarray(ref, dtype=complex)
    if ref.size == 0:
        raise ValueError("reference must be non-empty")
    if ref.size > data.size:
        raise ValueError("reference longer than input")
    n_lags = data.size - ref.size + 1
    corr = signal.fftconvolve(data, np.conj(ref[::-1]), mode="valid")[:n_lags]
    if not normalize:
        return np.abs(corr)
    e = np.concatenate([[0.0], np.cumsum(np.abs(data) ** 2)])
    win = np.maximum(e[ref.size:] - e[:n_lags], 0.0)
    denom = np.sqrt(win) * np.linalg.norm(ref)
    out = np.zeros(n_lags)
    ok = denom > 1e-12 * max(denom.max(initial=0.0), 1e-300)
    out[ok] = np.abs(corr[ok]) / denom[ok]
    return np.minimum(out, 1.0)


def cp_products(x, fft_size=SYNC_FFT):
    """y(n) = x(n) conj(x(n + N)), integrated over a 9-sample CP-length window.

    Entry n is the sum starting at n, so it peaks where a CP begins.
    """
    data = x.data if isinstance(x, ComplexSeries) else np.asarray(x, dtype=complex)
    span = cp_lengths(fft_size)[1]
    y = data[:-fft_size] * np.conj(data[fft_size:])
    c = np.concatenate([[0], np.cumsum(y)])
    return c[span:] - c[:-span]


def cp_fold(x, fft_size=SYNC_FFT, slot_len=SLOT_LEN_SYNC):
    """Complex CP products folded (summed) over whole slots, length ``slot_len``."""
    data = x.data if isinstance(x, ComplexSeries) else np.asarray(x, dtype=complex)
    if data.size < slot_len + fft_size:
        raise ValueError(f"need at least {slot_len + fft_size} samples, got {data.size}")
    z = cp_products(data, fft_size)
    n_slots = z.size // slot_len
    return z[:n_slots * slot_len].reshape(n_slots, slot_len).sum(axis=0)


def cp_metric(x, fft_size=SYNC_FFT, slot_len=SLOT_LEN_SYNC):
    """Per-slot magnitude of the CP-integrated delay product, averaged over slots.

    Peaks at the 7 CP starts. Averaging magnitudes (rather than the complex
    sum used for CFO) keeps the shape independent of the frequency offset.
    """
    data = x.data if isinstance(x, ComplexSeries) else np.asarray(x, dtype=complex)
    if data.size < slot_len + fft_size:
        raise ValueError(f"need at least {slot_len + fft_size} samples, got {data.size}")
    z = np.abs(cp_products(data, fft_size))
    n_slots = z.size // slot_len
    return z[:n_slots * slot_len].reshape(n_slots, slot_len).mean(axis=0)
