import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltescan.ofdmgrid import ResourceGrid, demodulate, generate_crs
from ltescan.sib1chain import (DciError, DciMessage, DlschError, UnreliableCfiError,
                               blind_decode_pdcch, common_candidates, decode_cfi, decode_dlsch,
                               decode_pdsch, dlsch_plan, encode_dlsch, pack_dci, pdsch_positions,
                               riv_decode, riv_encode, sib1_rv, unpack_dci)
from ltescan.sibparse import encode_sib1
from ltescan.tables import N_RB_BY_CODE, SI_RNTI
from ltescan.txoracle import (DownlinkConfig, ImpairmentSpec, build_grid, generate_downlink,
                              grid_awgn, impair, oracle_grid)

CALIBRATION = json.loads((Path(__file__).parent / "data" / "calibration.json").read_text())


def _subframe(grid, frame=0, sf=5):
    c = 140 * frame + 14 * sf
    return ResourceGrid(grid.re[:, c:c + 14], grid.n_rb, grid.pci, "normal", sf)


def _tb(cfg, dci):
    payload = encode_sib1(cfg.sib1)
    return np.concatenate([payload, np.zeros(dci.tbs_bits - payload.size, np.uint8)])


# --- PCFICH ------------------------------------------------------------------

@pytest.mark.parametrize("cfi", [1, 2, 3])
def test_cfi_noiseless(cfi):
    cfg = DownlinkConfig(pci=17, n_rb=50, n_frames=1, cfi=cfi)
    g = oracle_grid(cfg)
    for sf in (0, 3, 5):
        assert decode_cfi(_subframe(g, 0, sf)) == cfi


def test_cfi_at_5db():
    cfg = DownlinkConfig(pci=99, n_rb=6, n_frames=1, cfi=2)
    sub = _subframe(oracle_grid(cfg))
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(100):
        try:
            hits += decode_cfi(grid_awgn(sub, 5.0, rng)) == 2
        except UnreliableCfiError:
            pass
    assert hits >= 99


def test_cfi_zero_grid_is_unreliable():
    with pytest.raises(UnreliableCfiError):
        decode_cfi(ResourceGrid(np.zeros((72, 14), complex), 6, 17, "normal", 5))


# --- DCI ---------------------------------------------------------------------

@pytest.mark.parametrize("n", N_RB_BY_CODE)
def test_riv_round_trip_all_allocations(n):
    seen = set()
    for start in range(n):
        for length in range(1, n - start + 1):
            riv = riv_encode(start, length, n)
            assert riv_decode(riv, n) == (start, length)
            seen.add(riv)
    assert len(seen) == n * (n + 1) // 2


def test_riv_rejects_bad_allocation():
    with pytest.raises(DciError):
        riv_encode(4, 3, 6)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(N_RB_BY_CODE), st.data())
def test_dci_1a_pack_unpack(n_rb, data):
    start = data.draw(st.integers(0, n_rb - 1))
    length = data.draw(st.integers(1, n_rb - start))
    dci = DciMessage("1A", n_rb, start, length, data.draw(st.integers(0, 8)), SI_RNTI, True,
                     data.draw(st.integers(0, 3)), data.draw(st.integers(0, 3)))
    back = unpack_dci(pack_dci(dci), "1A", n_rb)
    assert back == dci


def test_dci_1c_pack_unpack():
    dci = DciMessage("1C", 25, 2, 4, 7, SI_RNTI, False)
    assert unpack_dci(pack_dci(dci), "1C", 25) == dci


def test_tbs_column_follows_tpc():
    a = DciMessage("1A", 6, 0, 3, 2, tpc=1)
    b = replace(a, tpc=0)
    assert (a.n_prb_1a, b.n_prb_1a) == (3, 2)
    assert a.tbs_bits > b.tbs_bits


def test_common_search_space():
    assert common_candidates(16) == [(4, 0), (4, 4), (4, 8), (4, 12), (8, 0), (8, 8)]
    assert common_candidates(8) == [(4, 0), (4, 4), (8, 0)]
    assert common_candidates(3) == []


# --- PDCCH -------------------------------------------------------------------

def test_pdcch_level8_recovered():
    cfg = DownlinkConfig(pci=201, n_rb=50, n_frames=1, cfi=2, agg_level=8, first_cce=8)
    _, dci = build_grid(cfg)
    got = blind_decode_pdcch(_subframe(oracle_grid(cfg)), cfi=2)
    assert got is not None
    # a level-4 candidate inside the level-8 one holds a full repetition of the grant
    assert 8 <= got.first_cce < 16 and got.first_cce + got.agg_level <= 16
    assert replace(got, agg_level=None, first_cce=None) == dci


def test_pdcch_other_rnti_not_accepted():
    cfg = DownlinkConfig(pci=201, n_rb=25, n_frames=1, si_rnti=0x1234)
    assert blind_decode_pdcch(_subframe(oracle_grid(cfg)), cfi=cfg.cfi) is None


def test_pdcch_empty_control_region():
    # subframe 5 of an odd frame carries CRS but no grant
    cfg = DownlinkConfig(pci=201, n_rb=25, sfn0=401, n_frames=1)
    assert blind_decode_pdcch(_subframe(oracle_grid(cfg)), cfi=cfg.cfi) is None


# --- PDSCH -------------------------------------------------------------------

@pytest.mark.parametrize("ports", [1, 2, 4])
def test_pdsch_noiseless_signs(ports):
    cfg = DownlinkConfig(pci=7, n_rb=25, sfn0=400, n_frames=1, cell_ref_ports=ports)
    _, dci = build_grid(cfg)
    soft = decode_pdsch(_subframe(oracle_grid(cfg)), dci, cell_ref_ports=ports, cfi=cfg.cfi)
    tx = encode_dlsch(_tb(cfg, dci), soft.size, sib1_rv(400))
    assert np.array_equal(soft < 0, tx == 1)


def test_pdsch_signs_at_0db():
    # time-domain AWGN over the full sample bandwidth, demodulated at known timing
    cfg = DownlinkConfig(pci=17, n_rb=6, sfn0=400, n_frames=1)
    _, dci = build_grid(cfg)
    cap = generate_downlink(cfg)
    rng = np.random.default_rng(11)
    agree = total = 0
    for _ in range(10):
        y = impair(cap, ImpairmentSpec(snr_db=0.0), rng)
        g = demodulate(y.samples, 0, 6, 17, rate_hz=cap.sample_rate_hz, window_advance=4)
        soft = decode_pdsch(_subframe(g), dci, cfi=cfg.cfi)
        tx = encode_dlsch(_tb(cfg, dci), soft.size, sib1_rv(400))
        agree += int(np.sum((soft < 0) == (tx == 1)))
        total += soft.size
    assert agree / total >= 0.85


def test_pdsch_empty_allocation():
    dci = DciMessage("1A", 6, 0, 3, 2)
    dci.n_vrb = 0
    with pytest.raises(DciError):
        pdsch_positions(dci, 17, 1, 2, 5)


def test_pdsch_avoids_crs_and_sync():
    dci = DciMessage("1A", 6, 0, 6, 2)
    k, l = pdsch_positions(dci, 17, 1, 2, 5)
    assert l.min() >= 2
    assert not np.any(np.isin(l, [5, 6]))       # PSS/SSS occupy the centre 6 RBs
    crs = generate_crs(17, 0, 6, 14, 5)
    assert not set(zip(crs.k.tolist(), crs.l.tolist())) & set(zip(k.tolist(), l.tolist()))


# --- DL-SCH ------------------------------------------------------------------

def test_dlsch_clean_round_trip():
    rng = np.random.default_rng(0)
    tb = rng.integers(0, 2, 328, dtype=np.uint8)
    coded = encode_dlsch(tb, 1200, 0)
    out = decode_dlsch(8.0 * (1 - 2 * coded.astype(float)), 328, 0)
    assert out.crc_ok and np.array_equal(out.bits, tb) and out.combined_count == 1


def test_dlsch_two_segments_round_trip():
    rng = np.random.default_rng(1)
    tb = rng.integers(0, 2, 6200, dtype=np.uint8)
    coded = encode_dlsch(tb, 20000, 2)
    out = decode_dlsch(8.0 * (1 - 2 * coded.astype(float)), 6200, 2)
    assert out.crc_ok and np.array_equal(out.bits, tb)


def test_dlsch_tbs_mismatch():
    rng = np.random.default_rng(2)
    coded = encode_dlsch(rng.integers(0, 2, 144, dtype=np.uint8), 600, 0)
    first = decode_dlsch(np.zeros(coded.size), 144, 0)
    with pytest.raises(DlschError):
        decode_dlsch(coded.astype(float), 176, 2, prior=first.combiner)


def test_dlsch_block_too_large():
    with pytest.raises(DlschError):
        dlsch_plan(1000, 600)


def test_dlsch_combining_rescues_failed_repetitions():
    cal = CALIBRATION["dlsch"]
    cfg = DownlinkConfig(**cal["cell"])
    clean = oracle_grid(cfg)
    _, dci = build_grid(cfg)
    rng = np.random.default_rng(77)
    rv0, rv1 = sib1_rv(cfg.sfn0), sib1_rv(cfg.sfn0 + 2)
    trials = rescued = 0
    while trials < 100:
        g = grid_awgn(clean, cal["snr_db"], rng)
        s0 = decode_pdsch(_subframe(g, 0), dci, cfi=cfg.cfi)
        s1 = decode_pdsch(_subframe(g, 2), dci, cfi=cfg.cfi)
        a = decode_dlsch(s0, dci.tbs_bits, rv0)
        if a.crc_ok or decode_dlsch(s1, dci.tbs_bits, rv1).crc_ok:
            continue
        trials += 1
        both = decode_dlsch(s1, dci.tbs_bits, rv1, prior=a.combiner)
        rescued += both.crc_ok and np.array_equal(both.bits, _tb(cfg, dci))
    assert rescued >= 80


def test_sib1_rv_sequence():
    assert [sib1_rv(s) for s in range(0, 16, 2)] == [0, 2, 3, 1, 0, 2, 3, 1]
