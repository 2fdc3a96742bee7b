"""QPSK mapping and transmit-diversity (SFBC / SFBC+FSTD) precoding."""

import numpy as np

SQRT2 = np.sqrt(2.0)


def qpsk_modulate(bits):
    b = np.asarray(bits, dtype=float).reshape(-1, 2)
    return ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / SQRT2


def qpsk_llr(symbols, gain, noise_var, clip=None):
    """Bit LLRs (positive favours 0) for equalised QPSK symbols.

    ``gain`` is the post-combining channel power per symbol, so the equalised
    noise variance is ``noise_var / gain``.
    """
    sym = np.asarray(symbols)
    w = 2 * SQRT2 * np.asarray(gain) / max(noise_var, 1e-12)
    out = np.empty(2 * sym.size)
    out[0::2] = w * sym.real
    out[1::2] = w * sym.imag
    if clip is not None:
        np.clip(out, -clip, clip, out=out)
    return out


def _pair_schedule(m, n_ports):
    """RE pairs (a, b) and the antenna ports carrying each Alamouti pair."""
    if n_ports == 2:
        a = np.arange(0, m - 1, 2)
        return a, a + 1, np.zeros_like(a), np.ones_like(a)
    a = np.arange(0, m - 1, 2)
    quad_second = (a % 4) == 2
    p_first = np.where(quad_second, 1, 0)
    p_second = np.where(quad_second, 3, 2)
    return a, a + 1, p_first, p_second


def txdiv_encode(symbols, n_ports):
    """Per-port RE values, shape (n_ports, M), for M layer-mapped modulation symbols."""
    x = np.asarray(symbols, dtype=complex)
    m = x.size
    if n_ports == 1:
        return x[None, :].copy()
    if n_ports not in (2, 4):
        raise ValueError(f"unsupported port count {n_ports}")
    if m % 2:
        raise ValueError("transmit diversity needs an even number of symbols")
    y = np.zeros((n_ports, m), dtype=complex)
    a, b, pa, pb = _pair_schedule(m, n_ports)
    y[pa, a] = x[a] / SQRT2
    y[pb, a] = -np.conj(x[b]) / SQRT2
    y[pa, b] = x[b] / SQRT2
    y[pb, b] = np.conj(x[a]) / SQRT2
    return y


def txdiv_decode(rx, h):
    """Combine received REs given per-port channel estimates ``h`` (n_ports, M).

    Returns ``(symbols, gain)`` where ``gain`` is the combined channel power seen
    by each symbol (used to weight the LLRs).
    """
    rx = np.asarray(rx, dtype=complex)
    h = np.asarray(h, dtype=complex)
    n_ports = h.shape[0]
    if n_ports == 1:
        g = np.abs(h[0]) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            sym = np.where(g > 0, rx / h[0], 0)
        return sym, g
    m = rx.size
    a, b, pa, pb = _pair_schedule(m, n_ports)
    h0 = 0.5 * (h[pa, a] + h[pa, b])
    h1 = 0.5 * (h[pb, a] + h[pb, b])
    g = np.abs(h0) ** 2 + np.abs(h1) ** 2
    safe = np.where(g > 0, g, 1.0)
    x0 = SQRT2 * (np.conj(h0) * rx[a] + h1 * np.conj(rx[b])) / safe
    x1 = SQRT2 * (np.conj(h0) * rx[b] - h1 * np.conj(rx[a])) / safe
    sym = np.zeros(m, dtype=complex)
    gain = np.zeros(m)
    sym[a], sym[b] = np.where(g > 0, x0, 0), np.where(g > 0, x1, 0)
    # Alamouti splits the power over two ports: the effective SNR is g / 2 per symbol.
    gain[a] = gain[b] = g / 2
    return sym, gain
