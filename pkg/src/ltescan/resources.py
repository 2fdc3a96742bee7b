"""Resource-element maps for the downlink physical channels (normal CP, FDD).

Grid convention: row ``k`` is the subcarrier index 0..12*n_rb-1 (DC excluded),
column ``l`` is the OFDM symbol index within a subframe (0..13) unless stated.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tables import (N_RB_MAX, SC_PER_RB, SYMBOLS_PER_SLOT, n_control_symbols,
                     phich_groups)

SYNC_SYMBOLS = (5, 6)  # SSS, PSS in the first slot of subframes 0 and 5
PBCH_SYMBOLS = (7, 8, 9, 10)


def n_subcarriers(n_rb):
    return SC_PER_RB * n_rb


def central_offset(n_rb):
    """Row of the first of the 72 central subcarriers."""
    return n_subcarriers(n_rb) // 2 - 36


def crs_symbols(port):
    return (0, 4, 7, 11) if port in (0, 1) else (1, 8)


def crs_subcarriers(pci, n_rb, port, l):
    """Subcarriers carrying the reference signal of ``port`` in subframe symbol ``l``.

    Returns an empty array when the port has no CRS in that symbol.
    """
    if l not in crs_symbols(port):
        return np.empty(0, dtype=np.int64)
    ns_odd = l // SYMBOLS_PER_SLOT
    ls = l % SYMBOLS_PER_SLOT
    if port == 0:
        v = 0 if ls == 0 else 3
    elif port == 1:
        v = 3 if ls == 0 else 0
    elif port == 2:
        v = 3 * ns_odd
    else:
        v = 3 + 3 * ns_odd
    shift = (v + pci % 6) % 6
    return 6 * np.arange(2 * n_rb) + shift


def crs_sequence_index(n_rb):
    """Index m' into the full-bandwidth reference sequence for each pilot m."""
    return np.arange(2 * n_rb) + N_RB_MAX - n_rb


def crs_mask(pci, n_rb, ports, l):
    """Boolean mask over subcarriers of REs occupied by CRS of any port in ``ports``."""
    mask = np.zeros(n_subcarriers(n_rb), dtype=bool)
    for p in ports:
        mask[crs_subcarriers(pci, n_rb, p, l)] = True
    return mask


@lru_cache(maxsize=None)
def pbch_re(pci, n_rb):
    """(k, l) of the 240 PBCH REs of subframe 0 in mapping order.

    CRS positions of all four ports are skipped whatever the actual port count.
    """
    off = central_offset(n_rb)
    ks, ls = [], []
    for l in PBCH_SYMBOLS:
        k = np.arange(off, off + 72)
        reserved = crs_mask(pci, n_rb, (0, 1, 2, 3), l)[k]
        k = k[~reserved]
        ks.append(k)
        ls.append(np.full(k.size, l))
    return np.concatenate(ks), np.concatenate(ls)


def sync_subcarriers(n_rb):
    """Rows of the 62 PSS/SSS sequence elements."""
    return central_offset(n_rb) + 5 + np.arange(62)


# --- control region -------------------------------------------------------

@dataclass(frozen=True)
class Reg:
    l: int
    k0: int
    ks: tuple


@dataclass
class ControlLayout:
    """Resource element groups of a subframe's control region."""

    n_rb: int
    n_symbols: int
    regs: list = field(default_factory=list)
    pcfich: list = field(default_factory=list)   # REG ids in quadruplet order
    phich: list = field(default_factory=list)    # REG ids, group-major
    pdcch: list = field(default_factory=list)    # REG ids in time-first mapping order

    @property
    def n_cce(self):
        return len(self.pdcch) // 9


def _regs_in_symbol(pci, n_rb, n_ports, l):
    out = []
    crs_ports = (0, 1) if l == 0 else ((2, 3) if (l == 1 and n_ports == 4) else ())
    for rb in range(n_rb):
        base = SC_PER_RB * rb
        if crs_ports:
            mask = crs_mask(pci, n_rb, crs_ports, l)
            for half in (0, 6):
                k = [base + half + j for j in range(6) if not mask[base + half + j]]
                out.append(Reg(l, base + half, tuple(k)))
        else:
            for q in (0, 4, 8):
                out.append(Reg(l, base + q, tuple(base + q + j for j in range(4))))
    return out


@lru_cache(maxsize=None)
def control_layout(pci, n_rb, n_ports, cfi, phich_ng="1", phich_extended=False):
    n_sym = n_control_symbols(cfi, n_rb)
    if phich_extended and n_sym < 3:
        raise ValueError("extended PHICH duration needs at least 3 control symbols")
    layout = ControlLayout(n_rb=n_rb, n_symbols=n_sym)
    by_symbol = []
    for l in range(n_sym):
        regs = _regs_in_symbol(pci, n_rb, n_ports, l)
        ids = list(range(len(layout.regs), len(layout.regs) + len(regs)))
        layout.regs.extend(regs)
        by_symbol.append(ids)

    n_sc = n_subcarriers(n_rb)
    kbar = 6 * (pci % (2 * n_rb))
    k0_to_id = {layout.regs[i].k0: i for i in by_symbol[0]}
    for i in range(4):
        k = (kbar + (i * n_rb // 2) * 6) % n_sc
        layout.pcfich.append(k0_to_id[k])

    pcfich_set = set(layout.pcfich)
    free = [[i for i in ids if i not in pcfich_set] for ids in by_symbol]
    n1 = len(free[0])
    groups = phich_groups(phich_ng, n_rb)
    for m in range(groups):
        for i in range(3):
            li = i if phich_extended else 0
            nl = len(free[li])
            nbar = (pci * nl // n1 + m + (i * nl) // 3) % nl
            layout.phich.append(free[li][nbar])

    used = pcfich_set | set(layout.phich)
    avail = [i for i in range(len(layout.regs)) if i not in used]
    avail.sort(key=lambda i: (layout.regs[i].k0, layout.regs[i].l))
    layout.pdcch = avail
    return layout


def reg_re(layout, reg_ids):
    """(k, l) arrays of the REs of the given REGs, four per REG in order."""
    ks = np.array([layout.regs[i].ks for i in reg_ids], dtype=np.int64).reshape(-1)
    ls = np.repeat([layout.regs[i].l for i in reg_ids], 4)
    return ks, ls


def pdcch_quad_permutation(n_quad, pci):
    """Position in the REG mapping order of each quadruplet of the multiplexed PDCCH block.

    Quadruplets pass the 32-column sub-block interleaver, then a cyclic shift by
    the cell identity, before being placed on REGs in time-first order.
    """
    from .tables import CONV_SUBBLOCK_PERM
    rows = -(-n_quad // 32)
    n_dummy = rows * 32 - n_quad
    r = np.arange(rows)
    src = (r[None, :] * 32 + CONV_SUBBLOCK_PERM[:, None]).reshape(-1) - n_dummy
    interleaved = src[src >= 0]                 # w(i) = quadruplet interleaved[i]
    shifted = interleaved[(np.arange(n_quad) + pci) % n_quad]
    pos = np.empty(n_quad, dtype=np.int64)
    pos[shifted] = np.arange(n_quad)
    return pos


# --- shared channel -------------------------------------------------------

def pdsch_re(pci, n_rb, n_ports, n_ctrl, prbs, subframe):
    """(k, l) of PDSCH REs in mapping order.

    ``prbs`` is a pair (slot 0 PRBs, slot 1 PRBs). REs of the configured CRS
    ports, PBCH (subframe 0) and the synchronisation signals (subframes 0 and 5)
    are excluded.
    """
    off = central_offset(n_rb)
    central = np.zeros(n_subcarriers(n_rb), dtype=bool)
    central[off:off + 72] = True
    ports = tuple(range(n_ports))
    ks, ls = [], []
    for l in range(n_ctrl, 14):
        slot_prbs = np.sort(np.asarray(prbs[l // SYMBOLS_PER_SLOT], dtype=np.int64))
        if slot_prbs.size == 0:
            continue
        k = (SC_PER_RB * slot_prbs[:, None] + np.arange(SC_PER_RB)[None, :]).reshape(-1)
        keep = ~crs_mask(pci, n_rb, ports, l)[k]
        if subframe in (0, 5) and l in SYNC_SYMBOLS:
            keep &= ~central[k]
        if subframe == 0 and l in PBCH_SYMBOLS:
            keep &= ~central[k]
        k = k[keep]
        ks.append(k)
        ls.append(np.full(k.size, l))
    if not ks:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(ks), np.concatenate(ls)


def vrb_to_prb_distributed(n_vrb_list, n_rb):
    """Map distributed VRBs (gap 1) to PRBs for (even slot, odd slot)."""
    from .tables import n_gap1, rbg_size
    gap = n_gap1(n_rb)
    n_tilde = 2 * min(gap, n_rb - gap)
    p = rbg_size(n_rb)
    n_row = -(-n_tilde // (4 * p)) * p
    n_null = 4 * n_row - n_tilde
    out0, out1 = [], []
    for n_vrb in n_vrb_list:
        base = n_tilde * (n_vrb // n_tilde)
        t = n_vrb % n_tilde
        p1 = 2 * n_row * (t % 2) + t // 2 + base
        p2 = n_row * (t % 4) + t // 4 + base
        if n_null and t >= n_tilde - n_null and t % 2 == 1:
            prb = p1 - n_row
        elif n_null and t >= n_tilde - n_null and t % 2 == 0:
            prb = p1 - n_row + n_null // 2
        elif n_null and t < n_tilde - n_null and t % 4 >= 2:
            prb = p2 - n_null // 2
        else:
            prb = p2
        odd = (prb + n_tilde // 2) % n_tilde + base
        for tilde, out in ((prb, out0), (odd, out1)):
            out.append(tilde if tilde < n_tilde // 2 else tilde + gap - n_tilde // 2)
    return out0, out1
