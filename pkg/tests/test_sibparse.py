import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltescan.sibparse import (Ecgi, ParseError, Plmn, SchedulingInfo, Sib1Info, compose_ecgi,
                              decode_sib1_bits, encode_sib1, parse_sib1, read_per_file,
                              write_per_file)

digits = lambda n: st.text("0123456789", min_size=n, max_size=n)
mncs = st.one_of(digits(2), digits(3))
plmns = st.builds(Plmn, digits(3), mncs, st.booleans())


@st.composite
def sib1_infos(draw):
    pl = tuple(draw(st.lists(plmns, min_size=1, max_size=6)))
    sched = tuple(draw(st.lists(st.builds(
        SchedulingInfo, st.sampled_from((8, 16, 32, 64, 128, 256, 512)),
        st.lists(st.integers(3, 11), max_size=4).map(tuple)), min_size=1, max_size=4)))
    return Sib1Info(
        pl[0].mcc, pl[0].mnc, draw(st.integers(0, 2 ** 16 - 1)), draw(st.integers(0, 2 ** 28 - 1)),
        plmns=pl, cell_barred=draw(st.booleans()), intra_freq_reselection=draw(st.booleans()),
        csg_indication=draw(st.booleans()),
        csg_identity=draw(st.one_of(st.none(), st.integers(0, 2 ** 27 - 1))),
        q_rx_lev_min=draw(st.integers(-70, -22)),
        q_rx_lev_min_offset=draw(st.one_of(st.none(), st.integers(1, 8))),
        p_max=draw(st.one_of(st.none(), st.integers(-30, 33))),
        freq_band_indicator=draw(st.integers(1, 64)), scheduling=sched,
        tdd_config=draw(st.one_of(st.none(), st.tuples(st.integers(0, 6), st.integers(0, 8)))),
        si_window_ms=draw(st.sampled_from((1, 2, 5, 10, 15, 20, 40))),
        value_tag=draw(st.integers(0, 31)))


def same(a, b):
    keys = ("mcc", "mnc", "tac", "cid", "plmns", "cell_barred", "intra_freq_reselection",
            "csg_indication", "csg_identity", "q_rx_lev_min", "q_rx_lev_min_offset", "p_max",
            "freq_band_indicator", "scheduling", "tdd_config", "si_window_ms", "value_tag")
    return all(getattr(a, k) == getattr(b, k) for k in keys)


def test_reference_fields():
    info = Sib1Info("310", "410", 0x1234, 0x00ABCDE)
    got = parse_sib1(encode_sib1(info))
    assert (got.mcc, got.mnc, got.tac, got.cid) == ("310", "410", 0x1234, 0x00ABCDE)
    assert compose_ecgi(got).canonical_text == "310-410-00ABCDE"
    assert got.enb_id == 0xABCDE >> 8 and got.sector_id == 0xDE


def test_empty_payload():
    with pytest.raises(ParseError) as e:
        parse_sib1(np.zeros(0, dtype=np.uint8))
    assert e.value.field == "choice header"


def test_two_plmns_first_reported():
    info = Sib1Info("310", "410", 1, 2, plmns=(Plmn("310", "410"), Plmn("311", "480")))
    got = parse_sib1(encode_sib1(info))
    assert (got.mcc, got.mnc, got.plmn_count) == ("310", "410", 2)
    assert got.plmns[1] == Plmn("311", "480")


def test_ecgi_format_and_mnc_width():
    assert compose_ecgi(Sib1Info("310", "410", 0, 1)).canonical_text == "310-410-0000001"
    a = compose_ecgi(parse_sib1(encode_sib1(Sib1Info("001", "05", 0, 1))))
    b = compose_ecgi(parse_sib1(encode_sib1(Sib1Info("001", "005", 0, 1))))
    assert a.canonical_text == "001-05-0000001" and b.canonical_text == "001-005-0000001"
    assert a != b
    e = Ecgi("310", "410", 0xABCDE)
    assert Ecgi.from_text(e.canonical_text) == e
    assert Sib1Info(1, 5, 0, 0).mcc == "001" and Sib1Info(1, 5, 0, 0).mnc == "05"


def test_crc_failed_block_rejected():
    class Block:
        bits = encode_sib1(Sib1Info("310", "410", 0, 1))
        crc_ok = False
    with pytest.raises(ParseError):
        parse_sib1(Block())


def test_padding_ignored_and_per_file(tmp_path):
    info = Sib1Info("310", "410", 7, 9)
    bits = encode_sib1(info)
    padded = np.concatenate([bits, np.zeros(200 - bits.size, dtype=np.uint8)])
    assert same(parse_sib1(padded), info)
    write_per_file(tmp_path / "s.per", bits)
    assert same(parse_sib1(read_per_file(tmp_path / "s.per")), info)


@settings(max_examples=300, deadline=None)
@given(sib1_infos())
def test_round_trip(info):
    assert same(decode_sib1_bits(encode_sib1(info)), info)


@settings(max_examples=500, deadline=None)
@given(st.lists(st.integers(0, 1), max_size=400))
def test_fuzz_never_overreads(bits):
    try:
        parse_sib1(np.array(bits, dtype=np.uint8))
    except ParseError:
        pass


def test_truncation_names_field():
    bits = encode_sib1(Sib1Info("310", "410", 0x1234, 0xABCDE))
    fields = set()
    for n in range(bits.size):
        with pytest.raises(ParseError) as e:
            decode_sib1_bits(bits[:n])
        fields.add(e.value.field)
    assert {"choice header", "trackingAreaCode", "cellIdentity", "systemInfoValueTag"} <= fields


# --- independent ASN.1 implementation as oracle ------------------------------

def _asn1():
    rrc = pytest.importorskip("pycrate_asn1dir.RRCLTE")
    return rrc.EUTRA_RRC_Definitions.BCCH_DL_SCH_Message


@settings(max_examples=150, deadline=None)
@given(sib1_infos())
def test_encoding_matches_reference_asn1(info):
    msg = _asn1()
    bits = encode_sib1(info)
    msg.from_uper(np.packbits(bits).tobytes())
    v = msg.get_val()["message"][1][1]
    car = v["cellAccessRelatedInfo"]
    first = car["plmn-IdentityList"][0]["plmn-Identity"]
    assert "".join(map(str, first["mcc"])) == info.mcc
    assert "".join(map(str, first["mnc"])) == info.mnc
    assert car["trackingAreaCode"] == (info.tac, 16)
    assert car["cellIdentity"] == (info.cid, 28)
    assert v["cellSelectionInfo"]["q-RxLevMin"] == info.q_rx_lev_min
    assert v["systemInfoValueTag"] == info.value_tag
    assert v.get("p-Max") == info.p_max
    msg.set_val(msg.get_val())
    back = np.unpackbits(np.frombuffer(msg.to_uper(), dtype=np.uint8))
    np.testing.assert_array_equal(back[:bits.size], bits)


def test_reference_asn1_encoding_parses():
    msg = _asn1()
    val = {"message": ("c1", ("systemInformationBlockType1", {
        "cellAccessRelatedInfo": {
            "plmn-IdentityList": [
                {"plmn-Identity": {"mcc": [3, 1, 0], "mnc": [4, 1, 0]}, "cellReservedForOperatorUse": "notReserved"},
                {"plmn-Identity": {"mnc": [2, 6]}, "cellReservedForOperatorUse": "reserved"}],
            "trackingAreaCode": (0x1234, 16), "cellIdentity": (0x00ABCDE, 28),
            "cellBarred": "barred", "intraFreqReselection": "notAllowed", "csg-Indication": True,
            "csg-Identity": (12345, 27)},
        "cellSelectionInfo": {"q-RxLevMin": -60, "q-RxLevMinOffset": 3},
        "freqBandIndicator": 13,
        "schedulingInfoList": [{"si-Periodicity": "rf32", "sib-MappingInfo": ["sibType3", "sibType5"]}],
        "tdd-Config": {"subframeAssignment": "sa2", "specialSubframePatterns": "ssp7"},
        "si-WindowLength": "ms40", "systemInfoValueTag": 17}))}
    msg.set_val(val)
    bits = np.unpackbits(np.frombuffer(msg.to_uper(), dtype=np.uint8))
    got = parse_sib1(bits)
    assert (got.mcc, got.mnc, got.tac, got.cid) == ("310", "410", 0x1234, 0xABCDE)
    assert got.plmns[1] == Plmn("310", "26", True)
    assert got.cell_barred and not got.intra_freq_reselection and got.csg_identity == 12345
    assert got.q_rx_lev_min_offset == 3 and got.freq_band_indicator == 13
    assert got.scheduling == (SchedulingInfo(32, (3, 5)),)
    assert got.tdd_config == (2, 7) and got.si_window_ms == 40 and got.value_tag == 17
