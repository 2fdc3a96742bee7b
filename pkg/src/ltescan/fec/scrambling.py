"""Length-31 Gold sequence generator used for scrambling and reference signals."""

from functools import lru_cache

import numpy as np

NC = 1600
_MAX_LEN = 1 << 16


@lru_cache(maxsize=None)
def _tables(total):
    # x1 does not depend on c_init; x2 is linear in the init bits, so it is built
    # as the XOR of 31 basis sequences, one per bit of c_init.
    x1 = np.zeros(total, dtype=np.uint8)
    x1[0] = 1
    for n in range(total - 31):
        x1[n + 31] = x1[n + 3] ^ x1[n]
    basis = [1 << i for i in range(31)] + [0] * (total - 31)
    for n in range(total - 31):
        basis[n + 31] = basis[n + 3] ^ basis[n + 2] ^ basis[n + 1] ^ basis[n]
    words = np.array(basis, dtype=np.int64)
    x2_basis = ((words[None, :] >> np.arange(31)[:, None]) & 1).astype(np.uint8)
    return x1, x2_basis


def _table_len(need):
    size = 4096
    while size < need:
        size *= 2
    if size > _MAX_LEN:
        raise ValueError(f"scrambling sequence of {need} bits exceeds supported length")
    return size


def gold_sequence(c_init, length):
    """Pseudo-random sequence c(n), n = 0..length-1, for the given initialisation."""
    c_init = int(c_init)
    if not 0 <= c_init < (1 << 31):
        raise ValueError(f"c_init out of range: {c_init}")
    x1, basis = _tables(_table_len(NC + length))
    sl = slice(NC, NC + length)
    x2 = np.zeros(length, dtype=np.uint8)
    for i in range(31):
        if (c_init >> i) & 1:
            x2 ^= basis[i, sl]
    return x1[sl] ^ x2


def scramble_bits(bits, c_init):
    bits = np.asarray(bits, dtype=np.uint8)
    return bits ^ gold_sequence(c_init, bits.size)


def descramble_llr(llr, c_init, offset=0):
    """Flip LLR signs where the scrambling bit is 1. ``offset`` skips into the sequence."""
    llr = np.asarray(llr, dtype=float)
    c = gold_sequence(c_init, offset + llr.size)[offset:]
    return np.where(c == 1, -llr, llr)
