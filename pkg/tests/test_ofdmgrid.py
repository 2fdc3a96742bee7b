import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltescan import resources as res
from ltescan.ofdmgrid import (NoSignalError, ResourceGrid, demodulate, equalize, estimate_channel,
                              generate_crs, measure_rsrp, modulate, subcarrier_bins)
from ltescan.tables import N_RB_BY_CODE, fft_size
from ltescan.txoracle import DownlinkConfig, build_grid, oracle_grid


def test_grid_dimensions_80ms():
    g = demodulate(np.zeros(153600, complex), 0, 6)
    assert g.re.shape == (72, 1120)
    assert not np.any(g.re)


def test_rate_mismatch_lists_table():
    with pytest.raises(ValueError, match="15.36 MHz"):
        demodulate(np.zeros(30720, complex), 0, 100, rate_hz=2.0e6)


def test_bins_skip_dc():
    bins, rel = subcarrier_bins(6)
    assert 0 not in rel and rel.min() == -36 and rel.max() == 36
    assert len(set(bins)) == 72 and np.all(bins < 128)


@pytest.mark.parametrize("n_rb", N_RB_BY_CODE)
def test_modulate_demodulate_loopback(n_rb, rng):
    re = (rng.standard_normal((12 * n_rb, 28)) + 1j * rng.standard_normal((12 * n_rb, 28))) / np.sqrt(2)
    x = modulate(re, n_rb)
    for adv in (0, 4 * fft_size(n_rb) // 128):
        g = demodulate(x, 0, n_rb, window_advance=adv)
        assert np.sqrt(np.mean(np.abs(g.re - re) ** 2)) < 1e-9


def test_crs_shift_and_values():
    for l in (0, 4):
        np.testing.assert_array_equal(res.crs_subcarriers(7, 6, 0, l), res.crs_subcarriers(1, 6, 0, l))
    crs = generate_crs(0, 0)
    np.testing.assert_allclose(np.abs(crs.values), 1.0)
    assert not np.array_equal(generate_crs(0, 0).values, generate_crs(3, 0).values)
    # port 0 occupies symbols 0 and 4 of each slot: 4 symbols x 12 pilots in 6 RB
    assert len(crs) == 48 and set(crs.l.tolist()) == {0, 4, 7, 11}


def test_crs_against_gold_oracle():
    """Symbol 0 of slot 0, PCI 0: c_init = 2^10 (7*1+0+1)(1) + 1; values from a direct LFSR."""
    c_init = 2 ** 10 * 8 + 1
    n = 1600 + 2 * 220
    x1 = np.zeros(n + 31, np.uint8)
    x1[0] = 1
    x2 = np.array([(c_init >> i) & 1 for i in range(31)] + [0] * n, np.uint8)
    for i in range(n):
        x1[i + 31] = x1[i + 3] ^ x1[i]
        x2[i + 31] = x2[i + 3] ^ x2[i + 2] ^ x2[i + 1] ^ x2[i]
    c = (x1[1600:1600 + 440] ^ x2[1600:1600 + 440]).astype(float)
    r = ((1 - 2 * c[0::2]) + 1j * (1 - 2 * c[1::2])) / np.sqrt(2)
    expect = r[110 - 6:110 + 6]
    crs = generate_crs(0, 0)
    np.testing.assert_allclose(crs.values[crs.l == 0], expect, atol=1e-12)


def _one_subframe(pci=5, ports=1):
    return oracle_grid(DownlinkConfig(pci=pci, n_rb=6, n_frames=1, cell_ref_ports=ports, filler=False))


def test_identity_channel():
    g = _one_subframe()
    est = estimate_channel(g)
    np.testing.assert_allclose(est.h, 1.0, atol=1e-9)
    assert est.noise_var < 1e-12


def test_flat_gain_recovered():
    g = _one_subframe().scaled(0.5 * np.exp(1j * np.pi / 4))
    est = estimate_channel(g)
    assert np.max(np.abs(est.h - 0.5 * np.exp(1j * np.pi / 4))) < 0.005
    eq = equalize(g, est)
    np.testing.assert_allclose(eq.re, _one_subframe().re, atol=1e-9)


def test_timing_error_ramp():
    cfg = DownlinkConfig(pci=5, n_rb=6, n_frames=1, filler=False)
    grid, _ = build_grid(cfg)
    x = modulate(grid[0], 6)
    g = demodulate(np.concatenate([[0], x]), 0, 6, pci=5, window_advance=4, n_symbols=140)
    est = estimate_channel(g)
    _, rel = subcarrier_bins(6)
    phase = np.unwrap(np.angle(est.h[:, 0]))
    slope = np.polyfit(rel, phase, 1)[0]
    assert slope == pytest.approx(-2 * np.pi / 128, rel=1e-6)


def test_zero_grid_no_signal():
    g = ResourceGrid(np.zeros((72, 14), complex), 6, 0)
    with pytest.raises(NoSignalError):
        estimate_channel(g)
    assert measure_rsrp(g).no_signal


def test_rsrp_scaling_and_unit():
    cfg = DownlinkConfig(pci=77, n_rb=6, n_frames=1)
    grid, _ = build_grid(cfg)
    g = demodulate(modulate(grid.sum(0), 6), 0, 6, pci=77)
    r0 = measure_rsrp(g).rsrp_dbfs
    assert abs(r0) < 0.1
    assert measure_rsrp(g.scaled(10)).rsrp_dbfs - r0 == pytest.approx(20.0, abs=1e-9)


def test_rsrp_two_cells_equal():
    a, b = oracle_grid(DownlinkConfig(pci=10, n_frames=1)), oracle_grid(DownlinkConfig(pci=11, n_frames=1))
    both = ResourceGrid(a.re + b.re, 6)
    ra, rb = measure_rsrp(both, pci=10).rsrp_dbfs, measure_rsrp(both, pci=11).rsrp_dbfs
    assert abs(ra - rb) < 0.5


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(-np.pi, np.pi))
def test_rsrp_scaling_law(gain, phase):
    g = _one_subframe(pci=3)
    r = measure_rsrp(g.scaled(gain * np.exp(1j * phase))).rsrp_dbfs - measure_rsrp(g).rsrp_dbfs
    assert r == pytest.approx(20 * np.log10(gain), abs=1e-9)


@pytest.mark.parametrize("n_rb", N_RB_BY_CODE)
def test_subframe_sample_count(n_rb):
    from ltescan.tables import native_rate
    assert modulate(np.zeros((12 * n_rb, 14)), n_rb).size == round(native_rate(n_rb) / 1000)
