"""SIB1 acquisition: PCFICH/CFI, blind PDCCH search for SI-RNTI grants
(DCI formats 1A and 1C), PDSCH demodulation and DL-SCH turbo decoding with
soft combining across SIB1 repetitions.

Functions taking a grid expect a single-subframe grid (14 columns); the
subframe number used for scrambling is ``grid.first_subframe % 10``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import resources as res
from .fec import convolutional as conv
from .fec import turbo
from .fec.crc import attach_crc, bits_to_int, check_crc, int_to_bits
from .fec.ratematch import (NULL, conv_rate_match_map, rate_match, rate_recover,
                            turbo_rate_match_map)
from .fec.scrambling import gold_sequence
from .ofdmgrid import NoSignalError, ResourceGrid, estimate_channel
from .precoding import qpsk_llr, qpsk_modulate, txdiv_decode, txdiv_encode
from .tables import (CFI_CODEWORDS, DCI_AMBIGUOUS_SIZES, SI_RNTI, SYMBOLS_PER_SUBFRAME,
                     TBS_1A_NPRB2, TBS_1A_NPRB3, TBS_1C, n_control_symbols, n_gap1)

CCE_BITS = 72
COMMON_SEARCH_SPACE = ((4, 4), (8, 2))   # (aggregation level, candidates)
MAX_CODE_RATE = 0.93
SIB1_SUBFRAME = 5
LLR_CLIP = 127 / 8


class UnreliableCfiError(ValueError):
    pass


class DciError(ValueError):
    pass


class DlschError(ValueError):
    pass


# --- per-subframe receive context -------------------------------------------

@dataclass
class SubframeContext:
    """Channel estimates of one subframe for every configured port."""

    grid: ResourceGrid
    pci: int
    n_ports: int
    ests: list

    @property
    def subframe(self):
        return self.grid.first_subframe % 10

    @property
    def noise_var(self):
        return max(float(np.mean([e.noise_var for e in self.ests])), 1e-9)

    def soft_symbols(self, k, l):
        rx = self.grid.re[k, l]
        h = np.array([e.h[k, l] for e in self.ests])
        return txdiv_decode(rx, h)

    def llrs(self, k, l):
        sym, gain = self.soft_symbols(k, l)
        return qpsk_llr(sym, gain, self.noise_var, clip=LLR_CLIP)


def subframe_context(grid, pci=None, n_ports=1):
    pci = grid.pci if pci is None else pci
    if grid.n_symbols != SYMBOLS_PER_SUBFRAME:
        raise ValueError("expected a single-subframe grid")
    ests = [estimate_channel(grid, pci, port=p) for p in range(n_ports)]
    return SubframeContext(grid, pci, n_ports, ests)


def _ctx(grid, pci, n_ports, ctx):
    if ctx is not None:
        return ctx
    return subframe_context(grid, pci, n_ports)


# --- PCFICH ------------------------------------------------------------------

def pcfich_c_init(pci, subframe):
    return (subframe + 1) * (2 * pci + 1) * 2 ** 9 + pci


def encode_pcfich(cfi, pci, subframe):
    """16 QPSK symbols carrying the CFI codeword."""
    bits = np.array(CFI_CODEWORDS[cfi], dtype=np.uint8)
    return qpsk_modulate(bits ^ gold_sequence(pcfich_c_init(pci, subframe), 32))


def decode_cfi(grid, pci=None, n_ports=1, ctx=None, max_distance=8):
    """Nearest-codeword CFI decision from the four PCFICH REGs."""
    try:
        ctx = _ctx(grid, pci, n_ports, ctx)
    except NoSignalError as exc:
        raise UnreliableCfiError(str(exc)) from None
    layout = res.control_layout(ctx.pci, grid.n_rb, n_ports, 1)
    k, l = res.reg_re(layout, layout.pcfich)
    llr = ctx.llrs(k, l)
    llr = llr * (1 - 2 * gold_sequence(pcfich_c_init(ctx.pci, ctx.subframe), 32).astype(float))
    if not np.any(llr != 0):
        raise UnreliableCfiError("no PCFICH energy")
    hard = (llr < 0).astype(np.uint8)
    scores = {c: float(np.dot(llr, 1 - 2 * np.array(cw, dtype=float)))
              for c, cw in CFI_CODEWORDS.items()}
    best = max(scores, key=scores.get)
    dist = int(np.sum(hard != np.array(CFI_CODEWORDS[best], dtype=np.uint8)))
    if dist > max_distance:
        raise UnreliableCfiError(f"nearest CFI codeword is {dist} bits away")
    return best


# --- DCI formats ----------------------------------------------------------------

def _riv_bits(n):
    return int(np.ceil(np.log2(n * (n + 1) / 2)))


def riv_encode(start, length, n):
    if length < 1 or start < 0 or start + length > n:
        raise DciError(f"allocation start={start} length={length} does not fit {n} RBs")
    if length - 1 <= n // 2:
        return n * (length - 1) + start
    return n * (n - length + 1) + (n - 1 - start)


def riv_decode(riv, n):
    a, b = divmod(riv, n)
    if a + b < n:
        length, start = a + 1, b
    else:
        length, start = n - a + 1, n - 1 - b
    if length < 1 or start < 0 or start + length > n or riv_encode(start, length, n) != riv:
        raise DciError(f"RIV {riv} is not a valid allocation for {n} RBs")
    return start, length


def n_vrb_gap1(n_rb):
    gap = n_gap1(n_rb)
    return 2 * min(gap, n_rb - gap)


def _1c_step(n_rb):
    return 2 if n_rb < 50 else 4


def dci_size(fmt, n_rb):
    if fmt == "1A":
        size = 15 + _riv_bits(n_rb)
        return size + 1 if size in DCI_AMBIGUOUS_SIZES else size
    if fmt == "1C":
        nprime = n_vrb_gap1(n_rb) // _1c_step(n_rb)
        return (1 if n_rb >= 50 else 0) + _riv_bits(nprime) + 5
    raise DciError(f"unsupported DCI format {fmt}")


@dataclass
class DciMessage:
    """Downlink grant for a system-information transport block."""

    format: str
    n_rb: int
    rb_start: int
    n_vrb: int
    mcs_index: int              # I_MCS for 1A, TBS index for 1C
    rnti: int = SI_RNTI
    localized: bool = True
    rv: int = 0
    tpc: int = 1
    harq: int = 0
    ndi: int = 0
    agg_level: int | None = None
    first_cce: int | None = None

    @property
    def n_prb_1a(self):
        return 3 if self.tpc & 1 else 2

    @property
    def tbs_bits(self):
        if self.format == "1A":
            table = TBS_1A_NPRB3 if self.n_prb_1a == 3 else TBS_1A_NPRB2
            if self.mcs_index >= len(table):
                raise DciError(f"MCS {self.mcs_index} has no TBS for SI grants")
            return table[self.mcs_index]
        return TBS_1C[self.mcs_index]

    @property
    def vrbs(self):
        return tuple(range(self.rb_start, self.rb_start + self.n_vrb))

    @property
    def prb_slots(self):
        if self.localized:
            return self.vrbs, self.vrbs
        s0, s1 = res.vrb_to_prb_distributed(self.vrbs, self.n_rb)
        return tuple(s0), tuple(s1)

    @property
    def rb_allocation(self):
        s0, s1 = self.prb_slots
        return tuple(sorted(set(s0) | set(s1)))

    def validate(self):
        if self.format not in ("1A", "1C"):
            raise DciError(f"unsupported DCI format {self.format}")
        limit = self.n_rb if self.localized else n_vrb_gap1(self.n_rb)
        if self.n_vrb < 1 or self.rb_start < 0 or self.rb_start + self.n_vrb > limit:
            raise DciError("allocation outside the carrier")
        if self.format == "1C":
            if self.localized:
                raise DciError("format 1C grants are always distributed")
            step = _1c_step(self.n_rb)
            if self.rb_start % step or self.n_vrb % step:
                raise DciError(f"1C allocations are multiples of {step} RBs")
        self.tbs_bits
        return self


def pack_dci(dci):
    """Payload bits of a 1A or 1C grant (without CRC)."""
    dci.validate()
    n = dci.n_rb
    size = dci_size(dci.format, n)
    if dci.format == "1A":
        rbits = _riv_bits(n)
        riv = riv_encode(dci.rb_start, dci.n_vrb, n)
        fields = [[1], [0 if dci.localized else 1]]
        if not dci.localized and n >= 50:
            fields.append([0])        # gap 1
            rbits -= 1
        if riv >= 2 ** rbits:
            raise DciError("allocation not representable in the RIV field")
        fields += [int_to_bits(riv, rbits), int_to_bits(dci.mcs_index, 5), int_to_bits(dci.harq, 3),
                   [dci.ndi], int_to_bits(dci.rv, 2), int_to_bits(dci.tpc, 2)]
    else:
        step = _1c_step(n)
        nprime = n_vrb_gap1(n) // step
        riv = riv_encode(dci.rb_start // step, dci.n_vrb // step, nprime)
        fields = [[0]] if n >= 50 else []
        fields += [int_to_bits(riv, _riv_bits(nprime)), int_to_bits(dci.mcs_index, 5)]
    bits = np.concatenate([np.asarray(f, dtype=np.uint8) for f in fields])
    return np.concatenate([bits, np.zeros(size - bits.size, dtype=np.uint8)])


def unpack_dci(bits, fmt, n_rb, rnti=SI_RNTI):
    """Parse and validate a payload; raises DciError for anything not a usable SI grant."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size != dci_size(fmt, n_rb):
        raise DciError(f"payload size {bits.size} does not match format {fmt}")
    if fmt == "1A":
        if bits[0] != 1:
            raise DciError("format flag indicates format 0")
        localized = bits[1] == 0
        pos = 2
        rbits = _riv_bits(n_rb)
        if not localized and n_rb >= 50:
            if bits[pos]:
                raise DciError("gap 2 allocations are not supported")
            pos += 1
            rbits -= 1
        riv = bits_to_int(bits[pos:pos + rbits])
        pos += rbits
        start, length = riv_decode(riv, n_rb)
        mcs = bits_to_int(bits[pos:pos + 5])
        harq = bits_to_int(bits[pos + 5:pos + 8])
        ndi = int(bits[pos + 8])
        rv = bits_to_int(bits[pos + 9:pos + 11])
        tpc = bits_to_int(bits[pos + 11:pos + 13])
        pos += 13
        if np.any(bits[pos:]):
            raise DciError("non-zero padding")
        dci = DciMessage("1A", n_rb, start, length, mcs, rnti, bool(localized), rv, tpc, harq, ndi)
    elif fmt == "1C":
        pos = 0
        if n_rb >= 50:
            if bits[0]:
                raise DciError("gap 2 allocations are not supported")
            pos = 1
        step = _1c_step(n_rb)
        nprime = n_vrb_gap1(n_rb) // step
        rbits = _riv_bits(nprime)
        start, length = riv_decode(bits_to_int(bits[pos:pos + rbits]), nprime)
        idx = bits_to_int(bits[pos + rbits:pos + rbits + 5])
        dci = DciMessage("1C", n_rb, start * step, length * step, idx, rnti, False)
    else:
        raise DciError(f"unsupported DCI format {fmt}")
    return dci.validate()


# --- PDCCH ----------------------------------------------------------------

def pdcch_c_init(pci, subframe):
    return subframe * 2 ** 9 + pci


def encode_dci(dci, agg_level):
    """Rate-matched PDCCH bits (72 per CCE) for a grant."""
    a = attach_crc(pack_dci(dci), "16", dci.rnti)
    d = conv.conv_encode(a)
    return rate_match(d, conv_rate_match_map(d.shape[1], CCE_BITS * agg_level))


def common_candidates(n_cce):
    """(aggregation level, first CCE) pairs of the common search space."""
    out = []
    for level, n_cand in COMMON_SEARCH_SPACE:
        n_pos = min(n_cce, 16) // level
        for m in range(min(n_cand, n_pos)):
            out.append((level, level * (m % n_pos)))
    return out


def build_pdcch(layout, grants, pci, subframe, n_ports):
    """Per-port RE values over the PDCCH REGs in mapping order, shape (n_ports, 4*M).

    ``grants`` is a list of (rate-matched bits, first CCE).
    """
    m_quad = len(layout.pdcch)
    total = 8 * m_quad
    b = np.full(total, NULL, dtype=np.int64)
    for bits, cce in grants:
        lo = CCE_BITS * cce
        if lo + bits.size > CCE_BITS * layout.n_cce:
            raise DciError("PDCCH candidate exceeds the control region")
        if np.any(b[lo:lo + bits.size] != NULL):
            raise DciError("overlapping PDCCH candidates")
        b[lo:lo + bits.size] = bits
    c = gold_sequence(pdcch_c_init(pci, subframe), total)
    nil = b == NULL
    scr = np.where(nil, 0, b ^ c).astype(np.uint8)
    sym = qpsk_modulate(scr)
    sym[nil[0::2]] = 0
    y = txdiv_encode(sym, n_ports)
    pos = res.pdcch_quad_permutation(m_quad, pci)
    out = np.zeros_like(y)
    src = y.reshape(n_ports, m_quad, 4)
    out.reshape(n_ports, m_quad, 4)[:, pos, :] = src
    return out


def pdcch_llrs(ctx, cfi, phich_ng="1", phich_extended=False):
    """Descrambled soft bits of the whole PDCCH block, plus the layout."""
    layout = res.control_layout(ctx.pci, ctx.grid.n_rb, ctx.n_ports, cfi, phich_ng, phich_extended)
    m_quad = len(layout.pdcch)
    k, l = res.reg_re(layout, layout.pdcch)
    pos = res.pdcch_quad_permutation(m_quad, ctx.pci)
    order = (4 * pos[:, None] + np.arange(4)[None, :]).reshape(-1)
    llr = ctx.llrs(k[order], l[order])
    c = gold_sequence(pdcch_c_init(ctx.pci, ctx.subframe), llr.size)
    return llr * (1 - 2 * c.astype(float)), layout


def _decode_candidate(llr, fmt, n_rb, rnti, min_metric):
    size = dci_size(fmt, n_rb) + 16
    soft = rate_recover(llr, conv_rate_match_map(size, llr.size), (3, size))
    bits = conv.viterbi_decode(soft)
    if not check_crc(bits, "16", rnti):
        return None
    if conv.reencode_metric(bits, soft) < min_metric:
        return None
    try:
        return unpack_dci(bits[:-16], fmt, n_rb, rnti)
    except DciError:
        return None


def blind_decode_pdcch(grid, cfi, pci=None, n_ports=1, rnti=SI_RNTI, ctx=None,
                       phich_ng="1", phich_extended=False, min_metric=0.0):
    """First common-search-space candidate whose CRC matches ``rnti``, or None."""
    ctx = _ctx(grid, pci, n_ports, ctx)
    llr, layout = pdcch_llrs(ctx, cfi, phich_ng, phich_extended)
    if not np.any(llr != 0):
        return None
    for level, cce in common_candidates(layout.n_cce):
        cand = llr[CCE_BITS * cce:CCE_BITS * (cce + level)]
        for fmt in ("1A", "1C"):
            dci = _decode_candidate(cand, fmt, grid.n_rb, rnti, min_metric)
            if dci is not None:
                dci.agg_level, dci.first_cce = level, cce
                return dci
    return None


# --- PDSCH ------------------------------------------------------------------

def pdsch_c_init(rnti, subframe, pci):
    return rnti * 2 ** 14 + subframe * 2 ** 9 + pci


def pdsch_positions(dci, pci, n_ports, cfi, subframe):
    prbs = dci.prb_slots
    for s in prbs:
        if any(p < 0 or p >= dci.n_rb for p in s):
            raise DciError("allocation outside the carrier")
    if not prbs[0] and not prbs[1]:
        raise DciError("empty allocation")
    n_ctrl = n_control_symbols(cfi, dci.n_rb)
    return res.pdsch_re(pci, dci.n_rb, n_ports, n_ctrl, prbs, subframe)


def encode_pdsch(bits, pci, subframe, n_ports, rnti=SI_RNTI):
    scr = bits ^ gold_sequence(pdsch_c_init(rnti, subframe, pci), bits.size)
    return txdiv_encode(qpsk_modulate(scr), n_ports)


def decode_pdsch(grid, dci, pci=None, cell_ref_ports=1, cfi=1, ctx=None):
    """Descrambled soft bits of the PDSCH allocation."""
    ctx = _ctx(grid, pci, cell_ref_ports, ctx)
    if dci.n_rb != grid.n_rb:
        raise DciError("grant bandwidth differs from grid bandwidth")
    k, l = pdsch_positions(dci, ctx.pci, ctx.n_ports, cfi, ctx.subframe)
    llr = ctx.llrs(k, l)
    c = gold_sequence(pdsch_c_init(dci.rnti, ctx.subframe, ctx.pci), llr.size)
    return llr * (1 - 2 * c.astype(float))


# --- DL-SCH -----------------------------------------------------------------

@dataclass(frozen=True)
class BlockPlan:
    k: int
    filler: int
    e: int


def dlsch_plan(tbs_bits, g_bits):
    """Per-code-block sizes for a QPSK transport block over ``g_bits`` coded bits."""
    if g_bits % 2:
        raise DlschError("coded bit count must be even for QPSK")
    c, k_plus, k_minus, c_plus, c_minus, f = turbo.segment(tbs_bits + 24)
    sizes = [k_minus] * c_minus + [k_plus] * c_plus
    g_sym = g_bits // 2
    gamma = g_sym % c
    plans = []
    for r, k in enumerate(sizes):
        e = 2 * (g_sym // c) if r <= c - gamma - 1 else 2 * (-(-g_sym // c))
        plans.append(BlockPlan(k, f if r == 0 else 0, e))
    if (tbs_bits + 24) > g_bits:
        raise DlschError(f"transport block of {tbs_bits} bits does not fit {g_bits} coded bits")
    return plans


def encode_dlsch(tb_bits, g_bits, rv):
    tb = attach_crc(np.asarray(tb_bits, dtype=np.uint8), "24A")
    blocks, _ = turbo.split_blocks(tb)
    plans = dlsch_plan(len(tb_bits), g_bits)
    out = []
    for blk, plan in zip(blocks, plans):
        d = turbo.turbo_encode(blk)
        out.append(rate_match(d, turbo_rate_match_map(plan.k + 4, plan.e, rv, plan.filler)))
    return np.concatenate(out)


@dataclass
class TransportBlock:
    bits: np.ndarray
    crc_ok: bool
    combined_count: int
    combiner: "SoftCombiner | None" = field(default=None, repr=False)


class SoftCombiner:
    """Accumulates circular-buffer LLRs of repeated transmissions of one block.

    Not thread-safe: one writer per cell.
    """

    def __init__(self, tbs_bits, max_combine=4):
        self.tbs_bits = int(tbs_bits)
        self.max_combine = max_combine
        self.count = 0
        self.buffers = None
        self.plans = None

    def add(self, soft, rv):
        soft = np.asarray(soft, dtype=float)
        plans = dlsch_plan(self.tbs_bits, soft.size)
        if self.buffers is None:
            self.buffers = [np.zeros((3, p.k + 4)) for p in plans]
            self.plans = plans
        elif [p.k for p in plans] != [p.k for p in self.plans]:
            raise DlschError("repetition does not match the buffered transport block")
        if self.count >= self.max_combine:
            raise DlschError(f"combining limit of {self.max_combine} reached")
        pos = 0
        for buf, p in zip(self.buffers, plans):
            idx = turbo_rate_match_map(p.k + 4, p.e, rv, p.filler)
            rate_recover(soft[pos:pos + p.e], idx, buf.shape, out=buf)
            pos += p.e
        self.count += 1
        return self.decode()

    def decode(self):
        c = len(self.buffers)
        blocks = []
        for buf, p in zip(self.buffers, self.plans):
            bits, _, _ = turbo.turbo_decode(buf, n_filler=p.filler,
                                            crc_kind="24B" if c > 1 else "24A")
            blocks.append(bits)
        tb = turbo.join_blocks(blocks, self.plans[0].filler)
        ok = bool(check_crc(tb, "24A"))
        return TransportBlock(tb[:-24], ok, self.count, self)


def decode_dlsch(soft, tbs_bits, rv=0, prior=None):
    """Rate recovery, turbo decoding and CRC check, combining with ``prior`` if given."""
    comb = prior if prior is not None else SoftCombiner(tbs_bits)
    if comb.tbs_bits != tbs_bits:
        raise DlschError(f"TBS {tbs_bits} differs from buffered TBS {comb.tbs_bits}")
    return comb.add(soft, rv)


def sib1_rv(sfn):
    """Redundancy version of the SIB1 transmission in frame ``sfn`` (even frames only)."""
    k = (sfn // 2) % 4
    return int(np.ceil(3 * k / 2)) % 4


def is_sib1_frame(sfn):
    return sfn % 2 == 0
