import numpy as np
import pytest

from ltescan.cellsearch import estimate_cfo
from ltescan.scanner import scan_capture
from ltescan.sibparse import Sib1Info, compose_ecgi
from ltescan.txoracle import (ConfigError, DownlinkConfig, ImpairmentSpec, generate_downlink,
                              impair, mix, random_config)


def test_length_80ms_at_192():
    cap = generate_downlink(DownlinkConfig(n_rb=6, n_frames=8))
    assert cap.samples.size == 153600 and cap.sample_rate_hz == 1.92e6


@pytest.mark.parametrize("n_rb,rate", [(6, None), (25, None), (6, 7.68e6)])
def test_unit_rms(n_rb, rate):
    cap = generate_downlink(DownlinkConfig(n_rb=n_rb, n_frames=1, rate_hz=rate))
    assert abs(np.sqrt(np.mean(np.abs(cap.samples) ** 2)) - 1) < 1e-6


def test_default_impairment_is_identity():
    cap = generate_downlink(DownlinkConfig(n_frames=1))
    out = impair(cap, ImpairmentSpec(), np.random.default_rng(0))
    assert np.array_equal(out.samples, cap.samples)


def test_snr_is_measured_over_samples():
    x = np.exp(2j * np.pi * np.random.default_rng(1).random(100000))
    y = impair(x, ImpairmentSpec(snr_db=10.0), np.random.default_rng(2))
    snr = 10 * np.log10(np.mean(np.abs(x) ** 2) / np.mean(np.abs(y - x) ** 2))
    assert abs(snr - 10) < 0.5


def test_cfo_recovered():
    cap = generate_downlink(DownlinkConfig(n_frames=4))
    y = impair(cap, ImpairmentSpec(cfo_hz=3000.0), np.random.default_rng(0))
    assert abs(estimate_cfo(y.samples).f_offset_hz - 3000) < 25


def test_delay_shifts_samples():
    cap = generate_downlink(DownlinkConfig(n_frames=1))
    y = impair(cap, ImpairmentSpec(delay_samples=100))
    assert np.all(y.samples[:100] == 0)
    assert np.array_equal(y.samples[100:], cap.samples[:-100])


def test_invalid_config():
    with pytest.raises(ConfigError):
        generate_downlink(DownlinkConfig(pci=504))
    with pytest.raises(ConfigError):
        generate_downlink(DownlinkConfig(n_rb=7))


def test_noiseless_loopback():
    cfg = DownlinkConfig(pci=301, n_rb=6, sfn0=100, n_frames=8, cell_ref_ports=2,
                         sib1=Sib1Info("001", "01", 0x00A1, 0x0123456))
    res = scan_capture(generate_downlink(cfg).samples, 1.92e6)
    best = res.strongest
    assert best.pci == 301
    assert best.mib.n_rb == 6 and best.mib.cell_ref_ports == 2 and best.mib.sfn == 100
    assert best.ecgi == compose_ecgi(cfg.sib1).canonical_text == "001-01-0123456"


def test_random_config_valid_and_reproducible():
    a = random_config(np.random.default_rng(9))
    b = random_config(np.random.default_rng(9))
    assert a == b
    generate_downlink(a)


def test_mix_requires_same_rate():
    a = generate_downlink(DownlinkConfig(n_frames=1))
    b = generate_downlink(DownlinkConfig(n_frames=1, rate_hz=3.84e6))
    with pytest.raises(ValueError):
        mix(a, b)
