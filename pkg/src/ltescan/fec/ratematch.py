"""Circular-buffer rate matching for the convolutional and turbo codes.

Rate matching is expressed as an index map: output bit j is coded bit
``flat[idx[j]]`` of the (3, D) coded array. Recovery accumulates LLRs through
the same map, which is how repetition and soft combining are realised.
"""

from functools import lru_cache

import numpy as np

from ..tables import CONV_SUBBLOCK_PERM, TURBO_SUBBLOCK_PERM

NULL = -1
COLUMNS = 32


def _subblock(d, perm):
    """Source index (or NULL) for each of the 32*R interleaver outputs."""
    rows = -(-d // COLUMNS)
    n_dummy = rows * COLUMNS - d
    r = np.arange(rows)
    # Read column-wise after permuting columns.
    y_index = (r[None, :] * COLUMNS + perm[:, None]).reshape(-1)
    src = y_index - n_dummy
    src[src < 0] = NULL
    return src, rows


def _turbo_stream2(d):
    rows = -(-d // COLUMNS)
    n_dummy = rows * COLUMNS - d
    k_pi = rows * COLUMNS
    k = np.arange(k_pi)
    pi = (TURBO_SUBBLOCK_PERM[k // rows] + COLUMNS * (k % rows) + 1) % k_pi
    src = pi - n_dummy
    src[src < 0] = NULL
    return src


@lru_cache(maxsize=256)
def conv_rate_match_map(d, e):
    """Index map from the flattened (3, d) tail-biting codeword to e transmitted bits."""
    v, _ = _subblock(d, CONV_SUBBLOCK_PERM)
    w = np.concatenate([np.where(v >= 0, s * d + v, NULL) for s in range(3)])
    valid = w[w != NULL]
    idx = valid[np.arange(e) % valid.size]
    idx.setflags(write=False)
    return idx


def turbo_k0(d, rv, n_cb=None):
    rows = -(-d // COLUMNS)
    k_w = 3 * rows * COLUMNS
    n_cb = k_w if n_cb is None else n_cb
    return rows * (2 * int(np.ceil(n_cb / (8 * rows))) * rv + 2)


@lru_cache(maxsize=256)
def turbo_rate_match_map(d, e, rv, n_filler=0, n_cb=None):
    """Index map from the flattened (3, d) turbo codeword (d = K + 4) to e bits.

    Filler positions (the first ``n_filler`` systematic and parity-1 bits) are
    treated as NULL, like the interleaver dummies.
    """
    if rv not in (0, 1, 2, 3):
        raise ValueError(f"redundancy version must be 0..3, got {rv}")
    v0, rows = _subblock(d, TURBO_SUBBLOCK_PERM)
    v2 = _turbo_stream2(d)
    k_pi = rows * COLUMNS

    def flat(stream, v):
        out = np.where(v >= 0, stream * d + v, NULL)
        if n_filler and stream < 2:
            out[(v >= 0) & (v < n_filler)] = NULL
        return out

    w = np.empty(3 * k_pi, dtype=np.int64)
    w[:k_pi] = flat(0, v0)
    w[k_pi::2] = flat(1, v0)
    w[k_pi + 1::2] = flat(2, v2)
    k_w = 3 * k_pi
    n_cb = k_w if n_cb is None else n_cb
    k0 = turbo_k0(d, rv, n_cb)
    order = w[(k0 + np.arange(n_cb)) % n_cb]
    valid = order[order != NULL]
    if valid.size == 0:
        raise ValueError("empty circular buffer")
    idx = valid[np.arange(e) % valid.size]
    idx.setflags(write=False)
    return idx


def rate_match(coded, idx):
    return np.asarray(coded).reshape(-1)[idx]


def rate_recover(llr, idx, shape, out=None):
    """Accumulate received LLRs back onto the (3, d) codeword grid."""
    acc = np.zeros(shape[0] * shape[1]) if out is None else out.reshape(-1)
    np.add.at(acc, idx, np.asarray(llr, dtype=float))
    return acc.reshape(shape)
