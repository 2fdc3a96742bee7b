"""Master information block: bit layout, PBCH encoding and decoding with
antenna-count discovery from the CRC mask and 4-frame soft combining."""

from dataclasses import dataclass, replace

import numpy as np

from . import resources as res
from .fec import convolutional as conv
from .fec.crc import attach_crc, bits_to_int, check_crc, int_to_bits
from .fec.ratematch import conv_rate_match_map, rate_match, rate_recover
from .fec.scrambling import gold_sequence
from .ofdmgrid import ResourceGrid, estimate_channel
from .precoding import qpsk_llr, qpsk_modulate, txdiv_decode, txdiv_encode
from .tables import N_RB_BY_CODE, PBCH_CRC_MASKS, PHICH_NG, SYMBOLS_PER_SUBFRAME

MIB_BITS = 24
PBCH_E = 1920
FRAME_BITS = 480
PORT_HYPOTHESES = (1, 2, 4)
LLR_CLIP = 127 / 8


class InvalidMibError(ValueError):
    pass


@dataclass(frozen=True)
class MibInfo:
    n_rb: int
    phich_duration: str = "normal"
    phich_resource: str = "1"
    sfn: int = 0
    cell_ref_ports: int | None = None
    spare: int = 0

    def __post_init__(self):
        if self.n_rb not in N_RB_BY_CODE:
            raise InvalidMibError(f"unsupported bandwidth {self.n_rb} RB")
        if self.phich_duration not in ("normal", "extended"):
            raise InvalidMibError(f"bad PHICH duration {self.phich_duration!r}")
        if self.phich_resource not in PHICH_NG:
            raise InvalidMibError(f"bad PHICH resource {self.phich_resource!r}")
        if not 0 <= self.sfn <= 1023:
            raise InvalidMibError(f"SFN {self.sfn} outside 0..1023")
        if self.cell_ref_ports not in (None, 1, 2, 4):
            raise InvalidMibError(f"bad port count {self.cell_ref_ports}")


@dataclass
class MibDecodeResult:
    mib: MibInfo
    frame_index: int       # grid frame that carried the first combined burst
    n_bursts: int
    metric: float


def pack_mib(mib):
    """24 payload bits; the SFN two LSBs are implicit in the burst position."""
    bits = np.concatenate([
        int_to_bits(N_RB_BY_CODE.index(mib.n_rb), 3),
        [1 if mib.phich_duration == "extended" else 0],
        int_to_bits(PHICH_NG.index(mib.phich_resource), 2),
        int_to_bits(mib.sfn >> 2, 8),
        int_to_bits(mib.spare, 10),
    ])
    return bits.astype(np.uint8)


def parse_mib_bits(bits):
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size != MIB_BITS:
        raise InvalidMibError(f"MIB payload must be {MIB_BITS} bits, got {bits.size}")
    code = bits_to_int(bits[0:3])
    if code >= len(N_RB_BY_CODE):
        raise InvalidMibError(f"bandwidth code {code} is reserved")
    return MibInfo(
        n_rb=N_RB_BY_CODE[code],
        phich_duration="extended" if bits[3] else "normal",
        phich_resource=PHICH_NG[bits_to_int(bits[4:6])],
        sfn=bits_to_int(bits[6:14]) << 2,
        spare=bits_to_int(bits[14:24]),
    )


def encode_pbch(mib, pci, n_ports):
    """Scrambled 1920-bit PBCH codeword for one 40 ms interval."""
    a = attach_crc(pack_mib(mib), "16", PBCH_CRC_MASKS[n_ports])
    d = conv.conv_encode(a)
    e = rate_match(d, conv_rate_match_map(d.shape[1], PBCH_E))
    return e ^ gold_sequence(pci, PBCH_E)


def pbch_port_symbols(codeword, sfn, n_ports):
    """Per-port PBCH RE values (n_ports, 240) for the frame with this SFN."""
    seg = sfn % 4
    bits = codeword[FRAME_BITS * seg:FRAME_BITS * (seg + 1)]
    return txdiv_encode(qpsk_modulate(bits), n_ports)


# --- receive ---------------------------------------------------------------

def frame_columns(grid):
    """Grid columns where a frame (subframe 0) starts with all PBCH symbols present."""
    cols = []
    for sf in range(grid.n_subframes):
        if (grid.first_subframe + sf) % 10 == 0:
            cols.append(sf * SYMBOLS_PER_SUBFRAME)
    return cols


def _channel_sets(grid, pci):
    ests = {}
    for p in range(4):
        try:
            ests[p] = estimate_channel(grid, pci, port=p)
        except ValueError:
            ests[p] = None
    return ests


def pbch_llrs(grid, pci, ests=None):
    """LLRs {n_ports: [480-LLR array per frame]} for every frame in the grid.

    Without ``ests`` the channel is estimated on subframe 0 of each frame only.
    """
    k, l = res.pbch_re(pci, grid.n_rb)
    out = {n: [] for n in PORT_HYPOTHESES}
    for c0 in frame_columns(grid):
        if ests is None:
            sub = ResourceGrid(grid.re[:, c0:c0 + SYMBOLS_PER_SUBFRAME], grid.n_rb, pci)
            e, off = _channel_sets(sub, pci), 0
        else:
            e, off = ests, c0
        for n_ports in PORT_HYPOTHESES:
            if out[n_ports] is None or any(e[p] is None for p in range(n_ports)):
                out[n_ports] = None
                continue
            noise = np.mean([e[p].noise_var for p in range(n_ports)])
            rx = grid.re[k, c0 + l]
            h = np.array([e[p].h[k, off + l] for p in range(n_ports)])
            sym, gain = txdiv_decode(rx, h)
            out[n_ports].append(qpsk_llr(sym, gain, max(noise, 1e-9), clip=LLR_CLIP))
    return {n: f for n, f in out.items() if f is not None}


def _try_decode(bursts, segments, pci, n_ports, min_metric):
    """Descramble, combine and decode a set of (llr, segment) bursts."""
    c = gold_sequence(pci, PBCH_E)
    e = np.zeros(PBCH_E)
    present = np.zeros(PBCH_E, dtype=bool)
    for llr, seg in zip(bursts, segments):
        sl = slice(FRAME_BITS * seg, FRAME_BITS * (seg + 1))
        e[sl] = llr * (1 - 2 * c[sl].astype(float))
        present[sl] = True
    d_len = MIB_BITS + 16
    idx = conv_rate_match_map(d_len, PBCH_E)
    soft = rate_recover(e, idx, (3, d_len))
    decoded = conv.viterbi_decode(soft)
    if not check_crc(decoded, "16", PBCH_CRC_MASKS[n_ports]):
        return None
    metric = conv.reencode_metric(decoded, soft)
    if metric < min_metric:
        return None
    return decoded[:MIB_BITS], metric


def soft_combine_decode(bursts, pci, n_ports_options=PORT_HYPOTHESES, first_segment=None,
                        min_metric=0.0):
    """Decode 1-4 consecutive bursts, trying every position within the 40 ms interval.

    ``bursts`` maps a port count to the list of per-frame LLR arrays (or is a
    plain list, used for every port hypothesis). Returns (MibInfo, segment of
    the first burst, metric) or None.
    """
    for n_ports in n_ports_options:
        frames = bursts[n_ports] if isinstance(bursts, dict) else bursts
        if not frames:
            continue
        n = min(len(frames), 4)
        segs = range(4 - n + 1) if first_segment is None else (first_segment,)
        for s0 in segs:
            got = _try_decode(frames[:n], [s0 + i for i in range(n)], pci, n_ports, min_metric)
            if got is None:
                continue
            try:
                mib = parse_mib_bits(got[0])
            except InvalidMibError:
                continue
            return replace(mib, cell_ref_ports=n_ports, sfn=mib.sfn + s0), s0, got[1]
    return None


def decode_mib(grid, pci=None, min_metric=0.0, max_window=4):
    """Decode the MIB from a 6-RB (or wider) grid.

    Each frame is tried alone first; then windows of up to ``max_window``
    consecutive frames that fall inside one 40 ms interval are soft-combined,
    advancing the window start until a CRC passes. The returned SFN is that of
    the first frame of the grid.
    """
    pci = grid.pci if pci is None else pci
    llrs = pbch_llrs(grid, pci)
    n_frames = len(next(iter(llrs.values()), []))
    if n_frames == 0:
        return None
    for n_ports in PORT_HYPOTHESES:
        frames = llrs.get(n_ports)
        if frames is None:
            continue
        for f in range(n_frames):
            got = soft_combine_decode({n_ports: [frames[f]]}, pci, (n_ports,), min_metric=min_metric)
            if got:
                return _result(got, f, 1)
    if max_window > 1 and n_frames > 1:
        for n_ports in PORT_HYPOTHESES:
            frames = llrs.get(n_ports)
            if frames is None:
                continue
            # first grid frame sits at interval position a
            for a in range(4):
                f = 0
                while f < n_frames:
                    seg = (a + f) % 4
                    n = min(4 - seg, n_frames - f, max_window)
                    if n > 1:
                        got = soft_combine_decode({n_ports: frames[f:f + n]}, pci, (n_ports,),
                                                  first_segment=seg, min_metric=min_metric)
                        if got:
                            return _result(got, f, n)
                    f += 4 - seg
    return None


def _result(got, frame, n):
    mib, seg, metric = got
    sfn0 = (mib.sfn - frame) % 1024
    return MibDecodeResult(replace(mib, sfn=sfn0), frame, n, metric)
