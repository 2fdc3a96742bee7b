"""Rate-1/3 tail-biting convolutional code (constraint length 7) and its Viterbi decoder."""

from functools import lru_cache

import numba
import numpy as np

# Generators 133, 171, 165 (octal); tap j multiplies c[k - j].
GENERATORS = (0o133, 0o171, 0o165)
CONSTRAINT = 7
N_STATES = 64


def _taps(g):
    return np.array([(g >> (CONSTRAINT - 1 - j)) & 1 for j in range(CONSTRAINT)], dtype=np.uint8)


TAPS = np.stack([_taps(g) for g in GENERATORS])


def conv_encode(bits):
    """Tail-biting encode. Returns a (3, D) array of coded bit streams."""
    c = np.asarray(bits, dtype=np.uint8)
    d = c.size
    out = np.zeros((3, d), dtype=np.uint8)
    for j in range(CONSTRAINT):
        shifted = np.roll(c, j)
        for i in range(3):
            if TAPS[i, j]:
                out[i] ^= shifted
    return out


@lru_cache(maxsize=None)
def _trellis():
    # State = (c[k-1], ..., c[k-6]) with c[k-1] as the MSB.
    pred = np.zeros((2, N_STATES), dtype=np.int64)
    pattern = np.zeros((2, N_STATES), dtype=np.int64)
    for new in range(N_STATES):
        b = new >> 5
        for x in range(2):
            old = ((new & 31) << 1) | x
            reg = [b] + [(old >> (5 - j)) & 1 for j in range(6)]
            outs = [int(np.dot(TAPS[i], reg) & 1) for i in range(3)]
            pred[x, new] = old
            pattern[x, new] = outs[0] * 4 + outs[1] * 2 + outs[2]
    signs = np.array([[1 - 2 * ((p >> (2 - i)) & 1) for i in range(3)] for p in range(8)], dtype=float)
    return pred, pattern, signs


@numba.njit(cache=True)
def _acs_traceback(bm, d, total, p0, p1, q0, q1):
    metric = np.zeros(N_STATES)
    new = np.empty(N_STATES)
    decisions = np.empty((total, N_STATES), dtype=np.uint8)
    for t in range(total):
        tc = t % d
        best = -np.inf
        for s in range(N_STATES):
            m0 = metric[p0[s]] + bm[q0[s], tc]
            m1 = metric[p1[s]] + bm[q1[s], tc]
            if m1 > m0:
                decisions[t, s] = 1
                new[s] = m1
            else:
                decisions[t, s] = 0
                new[s] = m0
            if new[s] > best:
                best = new[s]
        for s in range(N_STATES):
            metric[s] = new[s] - best
    state = 0
    for s in range(N_STATES):
        if metric[s] > metric[state]:
            state = s
    bits = np.empty(total, dtype=np.uint8)
    for t in range(total - 1, -1, -1):
        bits[t] = state >> 5
        state = p1[state] if decisions[t, state] else p0[state]
    return bits


def viterbi_decode(llr, passes=3):
    """Decode a (3, D) array of LLRs (positive favours bit 0).

    The received block is wrapped ``passes`` times so the trellis settles into the
    tail-biting state; the survivor of the best final state is traced back and the
    middle copy is returned.
    """
    llr = np.asarray(llr, dtype=float)
    d = llr.shape[1]
    pred, pattern, signs = _trellis()
    bm = np.ascontiguousarray(signs @ llr)  # (8, D): branch metric for each output pattern
    bits = _acs_traceback(bm, d, passes * d, pred[0], pred[1], pattern[0], pattern[1])
    mid = (passes // 2) * d
    return bits[mid:mid + d].copy()


def reencode_metric(bits, llr):
    """Normalised agreement between a re-encoded codeword and the soft input, in [-1, 1]."""
    code = conv_encode(bits).astype(float)
    llr = np.asarray(llr, dtype=float)
    denom = np.abs(llr).sum()
    if denom == 0:
        return 0.0
    return float(((1 - 2 * code) * llr).sum() / denom)
