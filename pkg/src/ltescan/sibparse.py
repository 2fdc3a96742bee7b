"""Unaligned PER codec for the BCCH-DL-SCH message carrying
SystemInformationBlockType1, and the E-UTRAN cell global identifier."""

import re
from dataclasses import dataclass, field

import numpy as np

SI_PERIODICITIES = (8, 16, 32, 64, 128, 256, 512)
SI_WINDOWS_MS = (1, 2, 5, 10, 15, 20, 40)
MAX_PLMNS = 6


class ParseError(ValueError):
    """Malformed or truncated payload; ``field`` names where decoding stopped."""

    def __init__(self, field_name, message="truncated"):
        super().__init__(f"{message} at {field_name}")
        self.field = field_name


@dataclass(frozen=True)
class Plmn:
    mcc: str
    mnc: str
    reserved_for_operator: bool = False


@dataclass(frozen=True)
class SchedulingInfo:
    periodicity_rf: int = 16
    sib_types: tuple = (3,)


@dataclass
class Sib1Info:
    mcc: str
    mnc: str
    tac: int
    cid: int
    raw_bits: np.ndarray | None = field(default=None, repr=False)
    plmns: tuple = ()
    cell_barred: bool = False
    intra_freq_reselection: bool = True
    csg_indication: bool = False
    csg_identity: int | None = None
    q_rx_lev_min: int = -64
    q_rx_lev_min_offset: int | None = None
    p_max: int | None = None
    freq_band_indicator: int = 1
    scheduling: tuple = (SchedulingInfo(),)
    tdd_config: tuple | None = None
    si_window_ms: int = 20
    value_tag: int = 0
    late_extension: bytes | None = None
    has_further_extensions: bool = False

    def __post_init__(self):
        self.mcc = normalize_mcc(self.mcc)
        self.mnc = normalize_mnc(self.mnc)
        if not self.plmns:
            self.plmns = (Plmn(self.mcc, self.mnc),)
        if not 0 <= self.tac < 2 ** 16:
            raise ValueError(f"TAC {self.tac} is not a 16-bit value")
        if not 0 <= self.cid < 2 ** 28:
            raise ValueError(f"cell identity {self.cid} is not a 28-bit value")

    @property
    def plmn_count(self):
        return len(self.plmns)

    @property
    def enb_id(self):
        return self.cid >> 8

    @property
    def sector_id(self):
        return self.cid & 0xFF


def normalize_mcc(mcc):
    s = f"{mcc:03d}" if isinstance(mcc, (int, np.integer)) else str(mcc)
    if not re.fullmatch(r"\d{3}", s):
        raise ValueError(f"MCC must be three digits, got {mcc!r}")
    return s


def normalize_mnc(mnc):
    """Two or three digits. Integers below 100 become two digits."""
    s = (f"{mnc:02d}" if mnc < 100 else f"{mnc:03d}") if isinstance(mnc, (int, np.integer)) else str(mnc)
    if not re.fullmatch(r"\d{2,3}", s):
        raise ValueError(f"MNC must be two or three digits, got {mnc!r}")
    return s


# --- bit I/O ----------------------------------------------------------------

class BitWriter:
    def __init__(self):
        self.bits = []

    def put(self, value, width):
        value = int(value)
        if width and not 0 <= value < (1 << width):
            raise ValueError(f"value {value} does not fit {width} bits")
        self.bits.extend((value >> (width - 1 - i)) & 1 for i in range(width))

    def flag(self, b):
        self.put(1 if b else 0, 1)

    def constrained(self, value, lo, hi):
        width = int(hi - lo).bit_length()
        if not lo <= value <= hi:
            raise ValueError(f"{value} outside {lo}..{hi}")
        self.put(value - lo, width)

    def octets(self, data):
        n = len(data)
        if n < 128:
            self.put(n, 8)
        elif n < 16384:
            self.put(0x8000 | n, 16)
        else:
            raise ValueError("octet strings over 16383 bytes need fragmentation")
        for b in data:
            self.put(b, 8)

    def array(self):
        return np.array(self.bits, dtype=np.uint8)


class BitReader:
    """Sequential reader that never reads beyond the payload."""

    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=np.uint8)
        self.pos = 0

    @property
    def remaining(self):
        return self.bits.size - self.pos

    def get(self, width, name):
        if width > self.remaining:
            raise ParseError(name)
        v = 0
        for b in self.bits[self.pos:self.pos + width]:
            v = (v << 1) | int(b)
        self.pos += width
        return v

    def flag(self, name):
        return bool(self.get(1, name))

    def constrained(self, lo, hi, name):
        v = lo + self.get(int(hi - lo).bit_length(), name)
        if v > hi:
            raise ParseError(name, f"value {v} above {hi}")
        return v

    def octets(self, name):
        first = self.get(8, name)
        if first & 0x80 == 0:
            n = first
        elif first & 0xC0 == 0x80:
            n = ((first & 0x3F) << 8) | self.get(8, name)
        else:
            raise ParseError(name, "fragmented length not supported")
        if 8 * n > self.remaining:
            raise ParseError(name)
        return bytes(self.get(8, name) for _ in range(n))


# --- encoder ----------------------------------------------------------------

def _put_digits(w, digits):
    for d in digits:
        w.put(int(d), 4)


def encode_sib1(info):
    """BCCH-DL-SCH message bits (unpadded) for a SIB1."""
    w = BitWriter()
    w.put(0, 1)      # c1
    w.put(1, 1)      # systemInformationBlockType1
    w.flag(info.p_max is not None)
    w.flag(info.tdd_config is not None)
    w.flag(info.late_extension is not None or info.has_further_extensions)
    # cellAccessRelatedInfo
    w.flag(info.csg_identity is not None)
    if not 1 <= len(info.plmns) <= MAX_PLMNS:
        raise ValueError("PLMN list holds 1 to 6 entries")
    w.put(len(info.plmns) - 1, 3)
    prev_mcc = None
    for p in info.plmns:
        send_mcc = p.mcc != prev_mcc
        w.flag(send_mcc)
        if send_mcc:
            _put_digits(w, normalize_mcc(p.mcc))
        mnc = normalize_mnc(p.mnc)
        w.put(len(mnc) - 2, 1)
        _put_digits(w, mnc)
        w.flag(not p.reserved_for_operator)
        prev_mcc = p.mcc
    w.put(info.tac, 16)
    w.put(info.cid, 28)
    w.flag(not info.cell_barred)
    w.flag(not info.intra_freq_reselection)
    w.flag(info.csg_indication)
    if info.csg_identity is not None:
        w.put(info.csg_identity, 27)
    # cellSelectionInfo
    w.flag(info.q_rx_lev_min_offset is not None)
    w.constrained(info.q_rx_lev_min, -70, -22)
    if info.q_rx_lev_min_offset is not None:
        w.constrained(info.q_rx_lev_min_offset, 1, 8)
    if info.p_max is not None:
        w.constrained(info.p_max, -30, 33)
    w.constrained(info.freq_band_indicator, 1, 64)
    if not 1 <= len(info.scheduling) <= 32:
        raise ValueError("schedulingInfoList holds 1 to 32 entries")
    w.put(len(info.scheduling) - 1, 5)
    for s in info.scheduling:
        w.put(SI_PERIODICITIES.index(s.periodicity_rf), 3)
        w.put(len(s.sib_types), 5)
        for t in s.sib_types:
            if not 3 <= t <= 11:
                raise ValueError("only SIB types 3..11 are encodable")
            w.put(0, 1)
            w.put(t - 3, 4)
    if info.tdd_config is not None:
        w.put(info.tdd_config[0], 3)
        w.put(info.tdd_config[1], 4)
    w.put(SI_WINDOWS_MS.index(info.si_window_ms), 3)
    w.put(info.value_tag, 5)
    if info.late_extension is not None or info.has_further_extensions:
        w.flag(info.late_extension is not None)
        w.flag(False)
        if info.late_extension is not None:
            w.octets(info.late_extension)
    return w.array()


# --- decoder ----------------------------------------------------------------

def _get_digits(r, n, name):
    digits = []
    for _ in range(n):
        d = r.get(4, name)
        if d > 9:
            raise ParseError(name, f"digit value {d}")
        digits.append(str(d))
    return "".join(digits)


def decode_sib1_bits(bits):
    """Decode a BCCH-DL-SCH payload; trailing padding is ignored."""
    bits = np.asarray(bits, dtype=np.uint8)
    r = BitReader(bits)
    if r.get(1, "choice header"):
        raise ParseError("choice header", "messageClassExtension not supported")
    if not r.get(1, "choice header"):
        raise ParseError("choice header", "SystemInformation message, not SIB1")
    has_pmax = r.flag("SIB1 preamble")
    has_tdd = r.flag("SIB1 preamble")
    has_nce = r.flag("SIB1 preamble")
    has_csg_id = r.flag("cellAccessRelatedInfo preamble")
    n_plmn = r.get(3, "plmn-IdentityList length") + 1
    if n_plmn > MAX_PLMNS:
        raise ParseError("plmn-IdentityList length", f"{n_plmn} entries")
    plmns = []
    prev_mcc = None
    for i in range(n_plmn):
        name = f"plmn-Identity[{i}]"
        if r.flag(name + " preamble"):
            mcc = _get_digits(r, 3, name + ".mcc")
        elif prev_mcc is None:
            raise ParseError(name + ".mcc", "first PLMN without MCC")
        else:
            mcc = prev_mcc
        n_mnc = r.get(1, name + ".mnc length") + 2
        mnc = _get_digits(r, n_mnc, name + ".mnc")
        not_reserved = r.flag("cellReservedForOperatorUse")
        plmns.append(Plmn(mcc, mnc, not not_reserved))
        prev_mcc = mcc
    tac = r.get(16, "trackingAreaCode")
    cid = r.get(28, "cellIdentity")
    barred = not r.flag("cellBarred")
    intra_not_allowed = r.flag("intraFreqReselection")
    csg_ind = r.flag("csg-Indication")
    csg_id = r.get(27, "csg-Identity") if has_csg_id else None
    has_offset = r.flag("cellSelectionInfo preamble")
    q_min = r.constrained(-70, -22, "q-RxLevMin")
    q_off = r.constrained(1, 8, "q-RxLevMinOffset") if has_offset else None
    p_max = r.constrained(-30, 33, "p-Max") if has_pmax else None
    band = r.constrained(1, 64, "freqBandIndicator")
    n_si = r.get(5, "schedulingInfoList length") + 1
    sched = []
    for i in range(n_si):
        per = r.get(3, f"si-Periodicity[{i}]")
        if per >= len(SI_PERIODICITIES):
            raise ParseError(f"si-Periodicity[{i}]", f"value {per}")
        n_map = r.get(5, f"sib-MappingInfo[{i}] length")
        types = []
        for j in range(n_map):
            if r.flag(f"sib-MappingInfo[{i}][{j}]"):
                # extension value: normally small non-negative whole number
                if r.flag(f"sib-MappingInfo[{i}][{j}]"):
                    raise ParseError(f"sib-MappingInfo[{i}][{j}]", "large extension index")
                types.append(12 + r.get(6, f"sib-MappingInfo[{i}][{j}]"))
            else:
                v = r.get(4, f"sib-MappingInfo[{i}][{j}]")
                if v > 8:
                    raise ParseError(f"sib-MappingInfo[{i}][{j}]", f"value {v}")
                types.append(3 + v)
        sched.append(SchedulingInfo(SI_PERIODICITIES[per], tuple(types)))
    tdd = None
    if has_tdd:
        tdd = (r.get(3, "subframeAssignment"), r.get(4, "specialSubframePatterns"))
        if tdd[0] > 6 or tdd[1] > 8:
            raise ParseError("tdd-Config", "value out of range")
    win = r.get(3, "si-WindowLength")
    if win >= len(SI_WINDOWS_MS):
        raise ParseError("si-WindowLength", f"value {win}")
    tag = r.get(5, "systemInfoValueTag")
    late = None
    further = False
    if has_nce:
        has_late = r.flag("nonCriticalExtension preamble")
        further = r.flag("nonCriticalExtension preamble")
        if has_late:
            late = r.octets("lateNonCriticalExtension")
        # later release extensions are not interpreted
    return Sib1Info(
        mcc=plmns[0].mcc, mnc=plmns[0].mnc, tac=tac, cid=cid, raw_bits=bits.copy(),
        plmns=tuple(plmns), cell_barred=barred, intra_freq_reselection=not intra_not_allowed,
        csg_indication=csg_ind, csg_identity=csg_id, q_rx_lev_min=q_min,
        q_rx_lev_min_offset=q_off, p_max=p_max, freq_band_indicator=band,
        scheduling=tuple(sched), tdd_config=tdd, si_window_ms=SI_WINDOWS_MS[win],
        value_tag=tag, late_extension=late, has_further_extensions=further)


def parse_sib1(block):
    """Parse a decoded transport block (anything with ``bits``/``crc_ok``) or raw bits."""
    if hasattr(block, "bits"):
        if not getattr(block, "crc_ok", True):
            raise ParseError("transport block", "CRC failed")
        return decode_sib1_bits(block.bits)
    return decode_sib1_bits(block)


# --- .per files -------------------------------------------------------------

def write_per_file(path, bits):
    """Packed bits, first bit in the MSB of the first byte, zero-padded."""
    with open(path, "wb") as fh:
        fh.write(np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes())


def read_per_file(path):
    with open(path, "rb") as fh:
        return np.unpackbits(np.frombuffer(fh.read(), dtype=np.uint8))


# --- ECGI -------------------------------------------------------------------

_ECGI_RE = re.compile(r"^\s*(\d{3})\s*[-_/ ]\s*(\d{2,3})\s*[-_/ ]\s*(?:0x)?([0-9a-fA-F]{1,7})\s*$")


@dataclass(frozen=True)
class Ecgi:
    mcc: str
    mnc: str
    cid: int

    def __post_init__(self):
        object.__setattr__(self, "mcc", normalize_mcc(self.mcc))
        object.__setattr__(self, "mnc", normalize_mnc(self.mnc))
        if not 0 <= self.cid < 2 ** 28:
            raise ValueError(f"cell identity {self.cid} is not a 28-bit value")

    @property
    def plmn(self):
        return self.mcc + self.mnc

    @property
    def canonical_text(self):
        return f"{self.mcc}-{self.mnc}-{self.cid:07X}"

    @property
    def enb_id(self):
        return self.cid >> 8

    @property
    def sector_id(self):
        return self.cid & 0xFF

    def __str__(self):
        return self.canonical_text

    @classmethod
    def from_text(cls, text):
        m = _ECGI_RE.match(text)
        if not m:
            raise ValueError(f"not an ECGI: {text!r}")
        return cls(m.group(1), m.group(2), int(m.group(3), 16))


def compose_ecgi(info):
    return Ecgi(info.mcc, info.mnc, info.cid)
