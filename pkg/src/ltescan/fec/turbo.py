"""Rate-1/3 parallel concatenated turbo code with QPP interleaver and max-log-MAP decoding."""

from functools import lru_cache

import numba
import numpy as np

from ..tables import QPP_PARAMS, TURBO_BLOCK_SIZES, TURBO_MAX_K
from .crc import attach_crc, check_crc

NEG = -1e30
EXTRINSIC_SCALE = 0.75


@lru_cache(maxsize=None)
def qpp_permutation(k):
    try:
        f1, f2 = QPP_PARAMS[k]
    except KeyError:
        raise ValueError(f"no QPP interleaver for K={k}") from None
    i = np.arange(k, dtype=np.int64)
    perm = (f1 * i + f2 * i * i) % k
    perm.setflags(write=False)
    return perm


def _constituent(c):
    """Encode one constituent; returns (parity, tail systematic, tail parity)."""
    s1 = s2 = s3 = 0
    z = np.empty(c.size, dtype=np.uint8)
    for k, u in enumerate(c.tolist()):
        a = u ^ s2 ^ s3
        z[k] = a ^ s1 ^ s3
        s1, s2, s3 = a, s1, s2
    tx, tz = [], []
    for _ in range(3):
        u = s2 ^ s3
        tx.append(u)
        tz.append(s1 ^ s3)
        s1, s2, s3 = 0, s1, s2
    return z, tx, tz


def turbo_encode(bits):
    """Encode K bits; returns a (3, K + 4) array d0 (systematic), d1, d2 with tails."""
    c = np.asarray(bits, dtype=np.uint8)
    k = c.size
    perm = qpp_permutation(k)
    z1, tx1, tz1 = _constituent(c)
    z2, tx2, tz2 = _constituent(c[perm])
    d = np.zeros((3, k + 4), dtype=np.uint8)
    d[0, :k] = c
    d[1, :k] = z1
    d[2, :k] = z2
    d[0, k:] = [tx1[0], tz1[1], tx2[0], tz2[1]]
    d[1, k:] = [tz1[0], tx1[2], tz2[0], tx2[2]]
    d[2, k:] = [tx1[1], tz1[2], tx2[1], tz2[2]]
    return d


def _split_tails(llr):
    """Tail LLRs per constituent: (systematic[3], parity[3]) for encoder 1 and 2."""
    t = llr[:, -4:]
    sys1 = np.array([t[0, 0], t[2, 0], t[1, 1]])
    par1 = np.array([t[1, 0], t[0, 1], t[2, 1]])
    sys2 = np.array([t[0, 2], t[2, 2], t[1, 3]])
    par2 = np.array([t[1, 2], t[0, 3], t[2, 3]])
    return sys1, par1, sys2, par2


@numba.njit(cache=True)
def _siso(ls, lp, tail_s, tail_p):
    """Max-log-MAP constituent decoder; returns a-posteriori LLRs of the information bits."""
    k = ls.shape[0]
    alpha = np.full((k + 1, 8), NEG)
    alpha[0, 0] = 0.0
    nxt = np.empty((8, 2), dtype=np.int64)
    par = np.empty((8, 2), dtype=np.int64)
    for s in range(8):
        s1 = (s >> 2) & 1
        s2 = (s >> 1) & 1
        s3 = s & 1
        for u in range(2):
            a = u ^ s2 ^ s3
            nxt[s, u] = (a << 2) | (s >> 1)
            par[s, u] = a ^ s1 ^ s3
    for t in range(k):
        for s in range(8):
            a0 = alpha[t, s]
            if a0 <= NEG / 2:
                continue
            for u in range(2):
                g = 0.5 * ((1 - 2 * u) * ls[t] + (1 - 2 * par[s, u]) * lp[t])
                ns = nxt[s, u]
                v = a0 + g
                if v > alpha[t + 1, ns]:
                    alpha[t + 1, ns] = v
        m = alpha[t + 1].max()
        for s in range(8):
            alpha[t + 1, s] -= m
    # Termination: three forced steps back to the zero state.
    beta = np.full(8, NEG)
    beta[0] = 0.0
    for j in range(2, -1, -1):
        prev = np.full(8, NEG)
        for s in range(8):
            s1 = (s >> 2) & 1
            s2 = (s >> 1) & 1
            s3 = s & 1
            u = s2 ^ s3
            ns = s >> 1
            z = s1 ^ s3
            g = 0.5 * ((1 - 2 * u) * tail_s[j] + (1 - 2 * z) * tail_p[j])
            prev[s] = beta[ns] + g
        beta = prev
    out = np.empty(k)
    for t in range(k - 1, -1, -1):
        best0 = NEG
        best1 = NEG
        newbeta = np.full(8, NEG)
        for s in range(8):
            for u in range(2):
                g = 0.5 * ((1 - 2 * u) * ls[t] + (1 - 2 * par[s, u]) * lp[t])
                ns = nxt[s, u]
                v = g + beta[ns]
                if v > newbeta[s]:
                    newbeta[s] = v
                w = alpha[t, s] + v
                if u == 0:
                    if w > best0:
                        best0 = w
                else:
                    if w > best1:
                        best1 = w
        out[t] = best0 - best1
        m = newbeta.max()
        for s in range(8):
            beta[s] = newbeta[s] - m
    return out


def turbo_decode(llr, n_filler=0, iterations=5, crc_kind="24A"):
    """Iteratively decode a (3, K + 4) LLR array.

    Returns ``(bits, crc_ok, iterations_used)``. Decoding stops early once the
    hard decision passes the CRC appended to the block (``crc_kind=None`` disables
    early exit). Filler bits are known zeros.
    """
    llr = np.asarray(llr, dtype=float)
    k = llr.shape[1] - 4
    perm = qpp_permutation(k)
    ls = llr[0, :k].copy()
    if n_filler:
        ls[:n_filler] = 1e4
    lp1 = llr[1, :k].copy()
    lp2 = llr[2, :k].copy()
    ts1, tp1, ts2, tp2 = _split_tails(llr)
    la = np.zeros(k)
    bits = (ls < 0).astype(np.uint8)
    ok = False
    it = 0
    for it in range(1, iterations + 1):
        app1 = _siso(ls + la, lp1, ts1, tp1)
        le1 = EXTRINSIC_SCALE * (app1 - ls - la)
        la2 = le1[perm]
        app2 = _siso(ls[perm] + la2, lp2, ts2, tp2)
        le2 = EXTRINSIC_SCALE * (app2 - ls[perm] - la2)
        la = np.empty(k)
        la[perm] = le2
        total = np.empty(k)
        total[perm] = app2
        bits = (total < 0).astype(np.uint8)
        if crc_kind is not None:
            data = bits[n_filler:]
            ok = check_crc(data, crc_kind)
            if ok:
                break
    return bits, ok, it


def segment(b_bits):
    """Code block segmentation parameters for a CRC-attached transport block of B bits.

    Returns ``(C, K_plus, K_minus, C_plus, C_minus, F)``.
    """
    b = int(b_bits)
    if b <= TURBO_MAX_K:
        c = 1
        b_prime = b
    else:
        c = -(-b // (TURBO_MAX_K - 24))
        b_prime = b + 24 * c
    k_plus = next(k for k in TURBO_BLOCK_SIZES if c * k >= b_prime)
    if c == 1:
        c_plus, k_minus, c_minus = 1, 0, 0
    else:
        k_minus = max(k for k in TURBO_BLOCK_SIZES if k < k_plus)
        delta = k_plus - k_minus
        c_minus = (c * k_plus - b_prime) // delta
        c_plus = c - c_minus
    f = c_plus * k_plus + c_minus * k_minus - b_prime
    return c, k_plus, k_minus, c_plus, c_minus, f


def split_blocks(tb_with_crc):
    """Split a CRC-attached transport block into code blocks (filler bits as zeros)."""
    b = np.asarray(tb_with_crc, dtype=np.uint8)
    c, k_plus, k_minus, c_plus, c_minus, f = segment(b.size)
    sizes = [k_minus] * c_minus + [k_plus] * c_plus
    blocks, pos = [], 0
    for r, k in enumerate(sizes):
        fill = f if r == 0 else 0
        take = k - fill - (24 if c > 1 else 0)
        body = np.concatenate([np.zeros(fill, dtype=np.uint8), b[pos:pos + take]])
        pos += take
        if c > 1:
            body = attach_crc(body, "24B")
        blocks.append(body)
    return blocks, f


def join_blocks(blocks, n_filler):
    c = len(blocks)
    parts = []
    for r, blk in enumerate(blocks):
        body = blk[:-24] if c > 1 else blk
        if r == 0:
            body = body[n_filler:]
        parts.append(body)
    return np.concatenate(parts)
