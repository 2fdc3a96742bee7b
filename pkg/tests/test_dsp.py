import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import find_peaks

from ltescan.cellsearch import CP_STARTS
from ltescan.dsp import (ComplexSeries, cp_metric, rational_ratio, resample,
                         sliding_correlate)
from ltescan.txoracle import DownlinkConfig, ImpairmentSpec, generate_downlink, impair


def tone(freq, rate, n):
    return np.exp(2j * np.pi * freq * np.arange(n) / rate)


def test_ratio_and_length():
    assert rational_ratio(2.0e6, 1.92e6) == (24, 25)
    assert rational_ratio(100e6 / 6, 15.36e6) == (576, 625)
    y = resample(ComplexSeries(np.zeros(160000), 2.0e6), 1.92e6)
    assert len(y) == 153600 and y.rate_hz == 1.92e6
    with pytest.raises(ValueError):
        rational_ratio(1.0, np.pi)


def test_identity_rate():
    x = np.random.default_rng(0).standard_normal(1000) + 0j
    np.testing.assert_array_equal(resample(x, 2e6, rate_hz=2e6).data, x)


@pytest.mark.parametrize("src,dst", [(2.0e6, 1.92e6), (100e6 / 6, 15.36e6), (1.92e6, 2.0e6)])
def test_tone_preserved(src, dst):
    n = int(src * 0.02)
    y = resample(tone(100e3, src, n), dst, rate_hz=src).data
    mid = y[2000:-2000]
    spec = np.abs(np.fft.fft(mid * np.hanning(mid.size)))
    f = np.fft.fftfreq(mid.size, 1 / dst)
    assert abs(f[np.argmax(spec)] - 100e3) <= dst / mid.size
    amp_db = 20 * np.log10(np.sqrt(np.mean(np.abs(mid) ** 2)))
    assert abs(amp_db) < 0.5


def test_out_of_band_suppressed():
    # 0.98 MHz at 2 MHz folds into the 1.92 MHz band unless filtered
    y = resample(tone(0.98e6, 2.0e6, 40000), 1.92e6, rate_hz=2.0e6).data[2000:-2000]
    assert 20 * np.log10(np.sqrt(np.mean(np.abs(y) ** 2))) < -40


def test_correlate_embedded(rng):
    ref = np.exp(1j * rng.uniform(0, 2 * np.pi, 128))
    x = 0.3 * (rng.standard_normal(10000) + 1j * rng.standard_normal(10000))
    x[4096:4096 + 128] += ref
    c = sliding_correlate(x, ref)
    assert np.argmax(c) == 4096 and c.size == 10000 - 128 + 1
    assert np.all(c <= 1.0)


def test_correlate_trivial(rng):
    assert not np.any(sliding_correlate(np.zeros(500), np.ones(16)))
    x = rng.standard_normal(300) + 1j * rng.standard_normal(300)
    c = sliding_correlate(x, [2.0], normalize=False)
    np.testing.assert_allclose(c, 2 * np.abs(x))
    assert np.argmax(c) == np.argmax(np.abs(x))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 400), st.floats(0.1, 10), st.floats(-np.pi, np.pi))
def test_correlate_scale_phase_invariant(offset, gain, phase):
    r = np.random.default_rng(offset)
    ref = r.standard_normal(64) + 1j * r.standard_normal(64)
    x = np.zeros(600, dtype=complex)
    x[offset:offset + 64] = gain * np.exp(1j * phase) * ref
    c = sliding_correlate(x, ref)
    assert c[offset] == pytest.approx(1.0)


def _cp_peaks(m):
    """The 7 largest peaks at least 100 samples apart (symbols are ~137 apart)."""
    tail = 120
    ext = np.concatenate([m[-tail:], m, m[:tail]])
    idx, _ = find_peaks(ext, distance=100)
    idx = idx[(idx >= tail) & (idx < tail + m.size)] - tail
    return sorted(int(i) for i in idx[np.argsort(m[idx])[::-1][:7]])


def test_cp_metric_oracle_peaks():
    x = generate_downlink(DownlinkConfig(pci=5, n_frames=2)).samples
    m = cp_metric(x)
    assert m.size == 960
    assert np.all(np.abs(np.subtract(_cp_peaks(m), CP_STARTS)) <= 1)
    shifted = cp_metric(impair(generate_downlink(DownlinkConfig(pci=5, n_frames=2)),
                               ImpairmentSpec(cfo_hz=3000.0)).samples)
    assert _cp_peaks(shifted) == _cp_peaks(m)


def test_cp_metric_noise_flat():
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        x = r.standard_normal(19200) + 1j * r.standard_normal(19200)
        m = cp_metric(x)
        worst = max(worst, m.max() / np.median(m))
    assert worst < 3.0
